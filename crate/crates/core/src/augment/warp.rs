use serde::{Deserialize, Serialize};

use super::{AugmentParams, ColorParams};
use crate::datasets::Image;

/// How pixels sampled outside the image are filled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BorderPolicy {
    /// Constant value, e.g. the background level of handwritten glyphs.
    Fill(f32),
    /// Mirror including the edge pixel (`d c b a | a b c d | d c b a`).
    Symmetric,
    /// Replicate the nearest edge pixel.
    Edge,
}

/// Applies the affine warp, then color jitter on 3-channel images.
pub fn apply(x: &Image, p: &AugmentParams, border: BorderPolicy) -> Image {
    let warped = if p.is_affine_identity() {
        x.clone()
    } else {
        apply_affine(x, p, border)
    };
    match p.color {
        Some(c) if x.shape.channels == 3 && !c.is_identity() => apply_color(&warped, &c),
        _ => warped,
    }
}

/// Forward 2x2 linear part: scale, then shear, then rotate.
fn linear_part(p: &AugmentParams) -> [[f64; 2]; 2] {
    let (s, c) = p.rotation.to_radians().sin_cos();
    let sh = p.shear.to_radians().tan();
    // Screen coordinates (y down): counter-clockwise rotation on screen.
    let rot = [[c, s], [-s, c]];
    let shear = [[1.0, sh], [0.0, 1.0]];
    let scale = [[p.scale, 0.0], [0.0, p.scale]];
    matmul(rot, matmul(shear, scale))
}

fn matmul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

fn reflect(i: isize, n: isize) -> isize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    if m < n {
        m
    } else {
        period - 1 - m
    }
}

/// Scale, shear, rotation and translation about the image center, resampled
/// bilinearly by inverse mapping.
pub fn apply_affine(x: &Image, p: &AugmentParams, border: BorderPolicy) -> Image {
    let shape = x.shape;
    let (h, w) = (shape.height, shape.width);
    let m = linear_part(p);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let plane = h * w;
    let fetch = |c: usize, yy: isize, xx: isize| -> f32 {
        let (hi, wi) = (h as isize, w as isize);
        let (yy, xx) = match border {
            BorderPolicy::Fill(v) => {
                if yy < 0 || xx < 0 || yy >= hi || xx >= wi {
                    return v;
                }
                (yy, xx)
            }
            BorderPolicy::Edge => (yy.clamp(0, hi - 1), xx.clamp(0, wi - 1)),
            BorderPolicy::Symmetric => (reflect(yy, hi), reflect(xx, wi)),
        };
        x.data[c * plane + yy as usize * w + xx as usize]
    };
    let mut out = Image::filled(shape, 0.0);
    for oy in 0..h {
        for ox in 0..w {
            let dx = ox as f64 - cx - p.translate_x;
            let dy = oy as f64 - cy - p.translate_y;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..shape.channels {
                let v00 = fetch(c, y0, x0);
                let v01 = fetch(c, y0, x0 + 1);
                let v10 = fetch(c, y0 + 1, x0);
                let v11 = fetch(c, y0 + 1, x0 + 1);
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                out.data[c * plane + oy * w + ox] = top + (bottom - top) * fy;
            }
        }
    }
    out
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Brightness, contrast, saturation and hue adjustments in that order.
/// Factors at their identity value are skipped entirely.
pub fn apply_color(x: &Image, c: &ColorParams) -> Image {
    assert_eq!(x.shape.channels, 3, "color jitter needs RGB input");
    let n = x.shape.height * x.shape.width;
    // Work in [0, 1].
    let mut px: Vec<[f32; 3]> = (0..n)
        .map(|i| [0, 1, 2].map(|ch| (x.data[ch * n + i] + 1.0) * 0.5))
        .collect();
    if c.brightness != 1.0 {
        let b = c.brightness as f32;
        for p in &mut px {
            *p = p.map(|v| (v * b).clamp(0.0, 1.0));
        }
    }
    if c.contrast != 1.0 {
        let k = c.contrast as f32;
        let mean = px.iter().map(|p| gray(p[0], p[1], p[2])).sum::<f32>() / n as f32;
        for p in &mut px {
            *p = p.map(|v| (mean + k * (v - mean)).clamp(0.0, 1.0));
        }
    }
    if c.saturation != 1.0 {
        let k = c.saturation as f32;
        for p in &mut px {
            let g = gray(p[0], p[1], p[2]);
            *p = p.map(|v| (g + k * (v - g)).clamp(0.0, 1.0));
        }
    }
    if c.hue != 0.0 {
        let dh = c.hue as f32;
        for p in &mut px {
            let (h, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
            let (r, g, b) = hsv_to_rgb(h + dh, s, v);
            *p = [r, g, b].map(|v| v.clamp(0.0, 1.0));
        }
    }
    let mut out = Image::filled(x.shape, 0.0);
    for (i, p) in px.iter().enumerate() {
        for ch in 0..3 {
            out.data[ch * n + i] = p[ch] * 2.0 - 1.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::ImageShape;

    fn dot_image() -> Image {
        let mut img = Image::filled(ImageShape::new(1, 28, 28), -1.0);
        *img.at_mut(0, 10, 8) = 1.0;
        img
    }

    #[test]
    fn identity_is_bit_exact() {
        let mut img = dot_image();
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37 % 101) as f32 / 50.0 - 1.0).clamp(-1.0, 1.0);
        }
        let p = AugmentParams::identity(false);
        assert_eq!(apply(&img, &p, BorderPolicy::Fill(-1.0)), img);
        // The warp path alone is also exact for the identity matrix.
        assert_eq!(apply_affine(&img, &p, BorderPolicy::Fill(-1.0)), img);
    }

    #[test]
    fn integer_translation_moves_pixels() {
        let img = dot_image();
        let mut p = AugmentParams::identity(false);
        p.translate_x = 4.0;
        let out = apply(&img, &p, BorderPolicy::Fill(-1.0));
        assert_eq!(out.at(0, 10, 12), 1.0);
        assert_eq!(out.at(0, 10, 8), -1.0);
        p.translate_x = 0.0;
        p.translate_y = -3.0;
        let out = apply(&img, &p, BorderPolicy::Fill(-1.0));
        assert_eq!(out.at(0, 7, 8), 1.0);
    }

    #[test]
    fn rotation_direction_is_counter_clockwise() {
        // A pixel right of center should move up under +90 degrees.
        let mut img = Image::filled(ImageShape::new(1, 9, 9), -1.0);
        *img.at_mut(0, 4, 7) = 1.0;
        let mut p = AugmentParams::identity(false);
        p.rotation = 90.0;
        let out = apply(&img, &p, BorderPolicy::Fill(-1.0));
        assert!((out.at(0, 1, 4) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn border_policies() {
        let mut img = Image::filled(ImageShape::new(1, 4, 4), 0.0);
        for x in 0..4 {
            for y in 0..4 {
                *img.at_mut(0, y, x) = x as f32 / 4.0;
            }
        }
        let mut p = AugmentParams::identity(false);
        p.translate_x = 2.0;
        let fill = apply(&img, &p, BorderPolicy::Fill(-1.0));
        assert_eq!(fill.at(0, 0, 0), -1.0);
        let edge = apply(&img, &p, BorderPolicy::Edge);
        assert_eq!(edge.at(0, 0, 0), 0.0);
        assert_eq!(edge.at(0, 0, 1), 0.0);
        let sym = apply(&img, &p, BorderPolicy::Symmetric);
        // Column -2 mirrors column 1, column -1 mirrors column 0.
        assert_eq!(sym.at(0, 0, 0), 0.25);
        assert_eq!(sym.at(0, 0, 1), 0.0);
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
    }

    #[test]
    fn color_jitter_stays_in_range() {
        let shape = ImageShape::new(3, 4, 4);
        let data: Vec<f32> = (0..48).map(|i| (i as f32 / 47.0) * 2.0 - 1.0).collect();
        let img = Image::new(shape, data).unwrap();
        let c = ColorParams {
            brightness: 1.25,
            contrast: 0.75,
            saturation: 1.25,
            hue: 0.05,
        };
        let out = apply_color(&img, &c);
        assert!(out.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(out, img);
        let mut p = AugmentParams::identity(true);
        assert_eq!(apply(&img, &p, BorderPolicy::Edge), img);
        p.color = Some(c);
        assert_eq!(apply(&img, &p, BorderPolicy::Edge), out);
    }

    #[test]
    fn hue_round_trip_is_stable() {
        for &(r, g, b) in &[(0.2f32, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-6 && (g - g2).abs() < 1e-6 && (b - b2).abs() < 1e-6);
        }
        // A full turn of hue is the identity.
        let (h, s, v) = rgb_to_hsv(0.2, 0.5, 0.9);
        let (r, g, b) = hsv_to_rgb(h + 1.0, s, v);
        assert!((r - 0.2).abs() < 1e-6 && (g - 0.5).abs() < 1e-6 && (b - 0.9).abs() < 1e-6);
    }
}
