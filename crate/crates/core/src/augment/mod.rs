//! Augmentation parameter sampling, interpolation and application, plus
//! (A, B, C, alpha) triplet synthesis.

mod triplet;
mod warp;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use triplet::{make_triplet, make_triplet_batch, make_triplet_with_alpha, Triplet, TripletBatch};
pub use warp::{apply, apply_affine, apply_color, BorderPolicy};

/// One independently switchable family of augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    Rotation,
    Translation,
    Scale,
    Shear,
    Color,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 5] = [
        AugmentKind::Rotation,
        AugmentKind::Translation,
        AugmentKind::Scale,
        AugmentKind::Shear,
        AugmentKind::Color,
    ];
}

/// Named ablation subsets: a single kind, `all`, or `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentSubset {
    Only(AugmentKind),
    All,
    None,
}

impl FromStr for AugmentSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rotation" => AugmentSubset::Only(AugmentKind::Rotation),
            "translation" => AugmentSubset::Only(AugmentKind::Translation),
            "scale" => AugmentSubset::Only(AugmentKind::Scale),
            "shear" => AugmentSubset::Only(AugmentKind::Shear),
            "color" => AugmentSubset::Only(AugmentKind::Color),
            "all" => AugmentSubset::All,
            "none" => AugmentSubset::None,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown augmentation subset `{other}` (expected rotation, translation, scale, shear, color, all or none)"
                )))
            }
        })
    }
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
pub type Interval = (f64, f64);

/// Sampling ranges for every augmentation parameter.
///
/// Rotation and shear are in degrees, translation in pixels, hue in
/// fractions of the full hue circle. Every interval must contain the
/// parameter's identity value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRangeSpec", into = "RawRangeSpec")]
pub struct AugmentRangeSpec {
    rotation: Interval,
    translation: Interval,
    scale: Interval,
    shear: Interval,
    brightness: Interval,
    contrast: Interval,
    saturation: Interval,
    hue: Interval,
    /// Whether parameters carry color fields (3-channel images).
    color_channels: bool,
    enabled: BTreeSet<AugmentKind>,
    border: BorderPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRangeSpec {
    rotation: Interval,
    translation: Interval,
    scale: Interval,
    shear: Interval,
    #[serde(default = "unit_interval")]
    brightness: Interval,
    #[serde(default = "unit_interval")]
    contrast: Interval,
    #[serde(default = "unit_interval")]
    saturation: Interval,
    #[serde(default)]
    hue: Interval,
    color_channels: bool,
    enabled: BTreeSet<AugmentKind>,
    border: BorderPolicy,
}

fn unit_interval() -> Interval {
    (1.0, 1.0)
}

impl TryFrom<RawRangeSpec> for AugmentRangeSpec {
    type Error = Error;

    fn try_from(r: RawRangeSpec) -> Result<Self> {
        let spec = AugmentRangeSpec {
            rotation: r.rotation,
            translation: r.translation,
            scale: r.scale,
            shear: r.shear,
            brightness: r.brightness,
            contrast: r.contrast,
            saturation: r.saturation,
            hue: r.hue,
            color_channels: r.color_channels,
            enabled: r.enabled,
            border: r.border,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<AugmentRangeSpec> for RawRangeSpec {
    fn from(s: AugmentRangeSpec) -> Self {
        RawRangeSpec {
            rotation: s.rotation,
            translation: s.translation,
            scale: s.scale,
            shear: s.shear,
            brightness: s.brightness,
            contrast: s.contrast,
            saturation: s.saturation,
            hue: s.hue,
            color_channels: s.color_channels,
            enabled: s.enabled,
            border: s.border,
        }
    }
}

const COLOR_RANGE: Interval = (0.75, 1.25);

impl AugmentRangeSpec {
    /// Ranges for 28x28 handwritten characters, background-filled borders.
    pub fn handwritten() -> Self {
        AugmentRangeSpec {
            rotation: (-20.0, 20.0),
            translation: (-4.0, 4.0),
            scale: (0.8, 1.2),
            shear: (-6.0, 6.0),
            brightness: unit_interval(),
            contrast: unit_interval(),
            saturation: unit_interval(),
            hue: (0.0, 0.0),
            color_channels: false,
            enabled: [
                AugmentKind::Rotation,
                AugmentKind::Translation,
                AugmentKind::Scale,
                AugmentKind::Shear,
            ]
            .into(),
            border: BorderPolicy::Fill(-1.0),
        }
    }

    /// Ranges for RGB natural images: half the rotation and shear, double
    /// the translation, plus color jitter.
    pub fn natural(border: BorderPolicy) -> Self {
        AugmentRangeSpec {
            rotation: (-10.0, 10.0),
            translation: (-8.0, 8.0),
            scale: (0.8, 1.2),
            shear: (-3.0, 3.0),
            brightness: COLOR_RANGE,
            contrast: COLOR_RANGE,
            saturation: COLOR_RANGE,
            hue: (-0.05, 0.05),
            color_channels: true,
            enabled: AugmentKind::ALL.into(),
            border,
        }
    }

    /// CIFAR: symmetric padding at the borders.
    pub fn cifar() -> Self {
        Self::natural(BorderPolicy::Symmetric)
    }

    /// CelebA center crops: replicate edge pixels.
    pub fn celeba() -> Self {
        Self::natural(BorderPolicy::Edge)
    }

    /// Default spec for images with `channels` channels.
    pub fn for_channels(channels: usize) -> Self {
        if channels == 3 {
            Self::cifar()
        } else {
            Self::handwritten()
        }
    }

    /// Restricts the enabled augmentations to an ablation subset.
    pub fn with_subset(mut self, subset: AugmentSubset) -> Self {
        let available: BTreeSet<AugmentKind> = AugmentKind::ALL
            .into_iter()
            .filter(|k| *k != AugmentKind::Color || self.color_channels)
            .collect();
        self.enabled = match subset {
            AugmentSubset::All => available,
            AugmentSubset::None => BTreeSet::new(),
            AugmentSubset::Only(k) => available.into_iter().filter(|x| *x == k).collect(),
        };
        self
    }

    pub fn with_intervals(
        mut self,
        rotation: Interval,
        translation: Interval,
        scale: Interval,
        shear: Interval,
    ) -> Result<Self> {
        self.rotation = rotation;
        self.translation = translation;
        self.scale = scale;
        self.shear = shear;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, (lo, hi): Interval, identity: f64| {
            if !(lo.is_finite() && hi.is_finite() && lo <= identity && identity <= hi) {
                return Err(Error::Config(format!(
                    "augment.{name}: interval [{lo}, {hi}] must be finite and contain {identity}"
                )));
            }
            Ok(())
        };
        check("rotation", self.rotation, 0.0)?;
        check("translation", self.translation, 0.0)?;
        check("scale", self.scale, 1.0)?;
        check("shear", self.shear, 0.0)?;
        check("brightness", self.brightness, 1.0)?;
        check("contrast", self.contrast, 1.0)?;
        check("saturation", self.saturation, 1.0)?;
        check("hue", self.hue, 0.0)?;
        if self.scale.0 <= 0.0 {
            return Err(Error::Config("augment.scale: lower bound must be positive".into()));
        }
        if self.shear.0 <= -89.0 || self.shear.1 >= 89.0 {
            return Err(Error::Config("augment.shear: must stay within (-89, 89) degrees".into()));
        }
        if self.enabled.contains(&AugmentKind::Color) && !self.color_channels {
            return Err(Error::Config("augment: color jitter requires 3-channel images".into()));
        }
        Ok(())
    }

    pub fn is_enabled(&self, kind: AugmentKind) -> bool {
        self.enabled.contains(&kind)
    }

    pub fn enabled(&self) -> &BTreeSet<AugmentKind> {
        &self.enabled
    }

    pub fn has_color(&self) -> bool {
        self.color_channels
    }

    pub fn border(&self) -> BorderPolicy {
        self.border
    }

    pub fn rotation(&self) -> Interval {
        self.rotation
    }

    pub fn translation(&self) -> Interval {
        self.translation
    }

    pub fn scale(&self) -> Interval {
        self.scale
    }

    pub fn shear(&self) -> Interval {
        self.shear
    }

    pub fn brightness(&self) -> Interval {
        self.brightness
    }

    pub fn contrast(&self) -> Interval {
        self.contrast
    }

    pub fn saturation(&self) -> Interval {
        self.saturation
    }

    pub fn hue(&self) -> Interval {
        self.hue
    }

    /// Whether `p` lies inside every interval of this spec.
    pub fn contains(&self, p: &AugmentParams) -> bool {
        let inside = |v: f64, (lo, hi): Interval| lo <= v && v <= hi;
        let affine = inside(p.rotation, self.rotation)
            && inside(p.translate_x, self.translation)
            && inside(p.translate_y, self.translation)
            && inside(p.scale, self.scale)
            && inside(p.shear, self.shear);
        let color = match (&p.color, self.color_channels) {
            (None, false) => true,
            (Some(c), true) => {
                inside(c.brightness, self.brightness)
                    && inside(c.contrast, self.contrast)
                    && inside(c.saturation, self.saturation)
                    && inside(c.hue, self.hue)
            }
            _ => false,
        };
        affine && color
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Fraction of the full hue circle.
    pub hue: f64,
}

impl ColorParams {
    pub const IDENTITY: ColorParams = ColorParams {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Degrees, counter-clockwise on screen.
    pub rotation: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub scale: f64,
    /// Horizontal shear angle in degrees.
    pub shear: f64,
    /// Present only for 3-channel configurations.
    pub color: Option<ColorParams>,
}

impl AugmentParams {
    pub fn identity(color: bool) -> Self {
        AugmentParams {
            rotation: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
            scale: 1.0,
            shear: 0.0,
            color: color.then_some(ColorParams::IDENTITY),
        }
    }

    pub fn is_affine_identity(&self) -> bool {
        self.rotation == 0.0 && self.translate_x == 0.0 && self.translate_y == 0.0 && self.scale == 1.0 && self.shear == 0.0
    }

    pub fn is_identity(&self) -> bool {
        self.is_affine_identity() && self.color.is_none_or(|c| c.is_identity())
    }

    fn components(&self) -> Vec<f64> {
        let mut v = vec![self.rotation, self.translate_x, self.translate_y, self.scale, self.shear];
        if let Some(c) = self.color {
            v.extend([c.brightness, c.contrast, c.saturation, c.hue]);
        }
        v
    }
}

impl fmt::Display for AugmentParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rot={:.2} tx={:.2} ty={:.2} scale={:.3} shear={:.2}",
            self.rotation, self.translate_x, self.translate_y, self.scale, self.shear
        )?;
        if let Some(c) = self.color {
            write!(f, " b={:.3} c={:.3} s={:.3} h={:.3}", c.brightness, c.contrast, c.saturation, c.hue)?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): Interval) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws every enabled parameter independently and uniformly from its
/// interval; disabled parameters stay at identity.
pub fn sample_params(spec: &AugmentRangeSpec, rng: &mut impl Rng) -> AugmentParams {
    let mut p = AugmentParams::identity(spec.color_channels);
    if spec.is_enabled(AugmentKind::Rotation) {
        p.rotation = uniform(rng, spec.rotation);
    }
    if spec.is_enabled(AugmentKind::Translation) {
        p.translate_x = uniform(rng, spec.translation);
        p.translate_y = uniform(rng, spec.translation);
    }
    if spec.is_enabled(AugmentKind::Scale) {
        p.scale = uniform(rng, spec.scale);
    }
    if spec.is_enabled(AugmentKind::Shear) {
        p.shear = uniform(rng, spec.shear);
    }
    if spec.color_channels && spec.is_enabled(AugmentKind::Color) {
        p.color = Some(ColorParams {
            brightness: uniform(rng, spec.brightness),
            contrast: uniform(rng, spec.contrast),
            saturation: uniform(rng, spec.saturation),
            hue: uniform(rng, spec.hue),
        });
    }
    p
}

fn lerp(a: f64, b: f64, alpha: f64) -> f64 {
    // Exact at the endpoints.
    if alpha == 1.0 {
        a
    } else if alpha == 0.0 {
        b
    } else {
        alpha * a + (1.0 - alpha) * b
    }
}

/// Componentwise `alpha * p1 + (1 - alpha) * p2`.
pub fn interp_params(p1: &AugmentParams, p2: &AugmentParams, alpha: f64) -> Result<AugmentParams> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let color = match (p1.color, p2.color) {
        (None, None) => None,
        (Some(a), Some(b)) => Some(ColorParams {
            brightness: lerp(a.brightness, b.brightness, alpha),
            contrast: lerp(a.contrast, b.contrast, alpha),
            saturation: lerp(a.saturation, b.saturation, alpha),
            hue: lerp(a.hue, b.hue, alpha),
        }),
        _ => {
            return Err(Error::InvalidArgument(
                "cannot interpolate parameters from specs with different channel counts".into(),
            ))
        }
    };
    Ok(AugmentParams {
        rotation: lerp(p1.rotation, p2.rotation, alpha),
        translate_x: lerp(p1.translate_x, p2.translate_x, alpha),
        translate_y: lerp(p1.translate_y, p2.translate_y, alpha),
        scale: lerp(p1.scale, p2.scale, alpha),
        shear: lerp(p1.shear, p2.shear, alpha),
        color,
    })
}

/// Mixing weight biased toward the midpoint: the mean of two uniform draws.
pub fn sample_alpha(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    (u1 + u2) / 2.0
}

/// Whether `p` lies componentwise between `lo` and `hi` (in either order).
pub fn params_between(p: &AugmentParams, a: &AugmentParams, b: &AugmentParams) -> bool {
    let (pc, ac, bc) = (p.components(), a.components(), b.components());
    pc.len() == ac.len()
        && pc.len() == bc.len()
        && pc
            .iter()
            .zip(ac.iter().zip(&bc))
            .all(|(&v, (&x, &y))| x.min(y) - 1e-12 <= v && v <= x.max(y) + 1e-12)
}
