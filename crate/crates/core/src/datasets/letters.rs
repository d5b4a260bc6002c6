//! Procedurally rendered handwritten-style letters.
//!
//! Each glyph is a small set of pen strokes (polylines and elliptic arcs).
//! Samples are drawn by jittering control points, slanting, rotating and
//! stretching the glyph, then rasterizing strokes of random width with an
//! anti-aliased edge. Framing follows the MNIST convention: the glyph is fit
//! into a 20x20 box and its center of mass is placed at the image center.
//! Classes follow the EMNIST ByMerge letter order (A-Z, then a b d e f g h n q r t),
//! so label `i` corresponds to ByMerge label `i + 10`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::{Image, ImageBatch, ImageShape};

pub const LETTER_CLASSES: usize = 37;
pub const LETTER_NAMES: [char; LETTER_CLASSES] = [
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R', 'S',
    'T', 'U', 'V', 'W', 'X', 'Y', 'Z', 'a', 'b', 'd', 'e', 'f', 'g', 'h', 'n', 'q', 'r', 't',
];

#[derive(Debug, Clone, Copy)]
enum Stroke {
    Poly(&'static [(f32, f32)]),
    /// Ellipse arc: center, radii, start and end angle in degrees. Angles grow
    /// counter-clockwise on screen (y points down).
    Arc(f32, f32, f32, f32, f32, f32),
}

use Stroke::{Arc, Poly};

fn glyph(class: usize) -> &'static [Stroke] {
    const G: [&[Stroke]; LETTER_CLASSES] = [
        // A
        &[Poly(&[(0.1, 1.0), (0.5, 0.0), (0.9, 1.0)]), Poly(&[(0.28, 0.6), (0.72, 0.6)])],
        // B
        &[
            Poly(&[(0.15, 1.0), (0.15, 0.0), (0.6, 0.0)]),
            Arc(0.6, 0.25, 0.25, 0.25, 90.0, -90.0),
            Poly(&[(0.6, 0.5), (0.15, 0.5), (0.62, 0.5)]),
            Arc(0.62, 0.75, 0.27, 0.25, 90.0, -90.0),
            Poly(&[(0.62, 1.0), (0.15, 1.0)]),
        ],
        // C
        &[Arc(0.55, 0.5, 0.4, 0.5, 45.0, 315.0)],
        // D
        &[
            Poly(&[(0.45, 0.0), (0.15, 0.0), (0.15, 1.0), (0.45, 1.0)]),
            Arc(0.45, 0.5, 0.42, 0.5, 90.0, -90.0),
        ],
        // E
        &[
            Poly(&[(0.85, 0.0), (0.15, 0.0), (0.15, 1.0), (0.85, 1.0)]),
            Poly(&[(0.15, 0.5), (0.7, 0.5)]),
        ],
        // F
        &[Poly(&[(0.85, 0.0), (0.15, 0.0), (0.15, 1.0)]), Poly(&[(0.15, 0.5), (0.7, 0.5)])],
        // G
        &[
            Arc(0.55, 0.5, 0.4, 0.5, 45.0, 330.0),
            Poly(&[(0.9, 0.75), (0.9, 0.55), (0.6, 0.55)]),
        ],
        // H
        &[
            Poly(&[(0.15, 0.0), (0.15, 1.0)]),
            Poly(&[(0.85, 0.0), (0.85, 1.0)]),
            Poly(&[(0.15, 0.5), (0.85, 0.5)]),
        ],
        // I
        &[
            Poly(&[(0.5, 0.0), (0.5, 1.0)]),
            Poly(&[(0.3, 0.0), (0.7, 0.0)]),
            Poly(&[(0.3, 1.0), (0.7, 1.0)]),
        ],
        // J
        &[
            Poly(&[(0.3, 0.0), (0.8, 0.0)]),
            Poly(&[(0.65, 0.0), (0.65, 0.75)]),
            Arc(0.42, 0.75, 0.23, 0.25, 0.0, -180.0),
        ],
        // K
        &[
            Poly(&[(0.15, 0.0), (0.15, 1.0)]),
            Poly(&[(0.85, 0.0), (0.15, 0.55)]),
            Poly(&[(0.35, 0.4), (0.85, 1.0)]),
        ],
        // L
        &[Poly(&[(0.15, 0.0), (0.15, 1.0), (0.85, 1.0)])],
        // M
        &[Poly(&[(0.1, 1.0), (0.15, 0.0), (0.5, 0.6), (0.85, 0.0), (0.9, 1.0)])],
        // N
        &[Poly(&[(0.15, 1.0), (0.15, 0.0), (0.85, 1.0), (0.85, 0.0)])],
        // O
        &[Arc(0.5, 0.5, 0.4, 0.5, 0.0, 360.0)],
        // P
        &[
            Poly(&[(0.15, 1.0), (0.15, 0.0), (0.55, 0.0)]),
            Arc(0.55, 0.25, 0.3, 0.25, 90.0, -90.0),
            Poly(&[(0.55, 0.5), (0.15, 0.5)]),
        ],
        // Q
        &[Arc(0.5, 0.5, 0.4, 0.5, 0.0, 360.0), Poly(&[(0.6, 0.7), (0.92, 1.0)])],
        // R
        &[
            Poly(&[(0.15, 1.0), (0.15, 0.0), (0.55, 0.0)]),
            Arc(0.55, 0.25, 0.3, 0.25, 90.0, -90.0),
            Poly(&[(0.55, 0.5), (0.15, 0.5)]),
            Poly(&[(0.45, 0.5), (0.85, 1.0)]),
        ],
        // S
        &[
            Arc(0.5, 0.25, 0.33, 0.25, 20.0, 270.0),
            Arc(0.5, 0.75, 0.33, 0.25, 90.0, -200.0),
        ],
        // T
        &[Poly(&[(0.1, 0.0), (0.9, 0.0)]), Poly(&[(0.5, 0.0), (0.5, 1.0)])],
        // U
        &[
            Poly(&[(0.15, 0.0), (0.15, 0.65)]),
            Arc(0.5, 0.65, 0.35, 0.35, 180.0, 360.0),
            Poly(&[(0.85, 0.65), (0.85, 0.0)]),
        ],
        // V
        &[Poly(&[(0.1, 0.0), (0.5, 1.0), (0.9, 0.0)])],
        // W
        &[Poly(&[(0.05, 0.0), (0.27, 1.0), (0.5, 0.35), (0.73, 1.0), (0.95, 0.0)])],
        // X
        &[Poly(&[(0.15, 0.0), (0.85, 1.0)]), Poly(&[(0.85, 0.0), (0.15, 1.0)])],
        // Y
        &[Poly(&[(0.1, 0.0), (0.5, 0.5), (0.9, 0.0)]), Poly(&[(0.5, 0.5), (0.5, 1.0)])],
        // Z
        &[Poly(&[(0.15, 0.0), (0.85, 0.0), (0.15, 1.0), (0.85, 1.0)])],
        // a
        &[Arc(0.5, 0.7, 0.3, 0.3, 0.0, 360.0), Poly(&[(0.8, 0.4), (0.8, 1.0)])],
        // b
        &[Poly(&[(0.2, 0.0), (0.2, 1.0)]), Arc(0.5, 0.7, 0.3, 0.3, 0.0, 360.0)],
        // d
        &[Arc(0.5, 0.7, 0.3, 0.3, 0.0, 360.0), Poly(&[(0.8, 0.0), (0.8, 1.0)])],
        // e
        &[Poly(&[(0.2, 0.7), (0.8, 0.7)]), Arc(0.5, 0.7, 0.3, 0.3, 0.0, 315.0)],
        // f
        &[
            Arc(0.65, 0.2, 0.2, 0.2, 20.0, 180.0),
            Poly(&[(0.45, 0.2), (0.45, 1.0)]),
            Poly(&[(0.25, 0.45), (0.7, 0.45)]),
        ],
        // g
        &[
            Arc(0.5, 0.6, 0.28, 0.25, 0.0, 360.0),
            Poly(&[(0.78, 0.4), (0.78, 1.1)]),
            Arc(0.5, 1.1, 0.28, 0.2, 0.0, -180.0),
        ],
        // h
        &[
            Poly(&[(0.2, 0.0), (0.2, 1.0)]),
            Arc(0.5, 0.7, 0.3, 0.3, 180.0, 0.0),
            Poly(&[(0.8, 0.7), (0.8, 1.0)]),
        ],
        // n
        &[
            Poly(&[(0.2, 0.4), (0.2, 1.0)]),
            Arc(0.5, 0.7, 0.3, 0.3, 180.0, 0.0),
            Poly(&[(0.8, 0.7), (0.8, 1.0)]),
        ],
        // q
        &[Arc(0.5, 0.7, 0.3, 0.3, 0.0, 360.0), Poly(&[(0.8, 0.4), (0.8, 1.3)])],
        // r
        &[Poly(&[(0.25, 0.4), (0.25, 1.0)]), Arc(0.55, 0.7, 0.3, 0.3, 180.0, 60.0)],
        // t
        &[
            Poly(&[(0.45, 0.05), (0.45, 0.85), (0.55, 1.0), (0.75, 0.95)]),
            Poly(&[(0.2, 0.4), (0.75, 0.4)]),
        ],
    ];
    G[class]
}

/// Parameters controlling how much individual samples deviate from the glyph.
/// Lengths are in glyph units (the glyph spans the unit square).
#[derive(Debug, Clone, Copy)]
pub struct LetterStyle {
    pub point_jitter: f32,
    /// Amplitude of a smooth random displacement field that bends strokes.
    pub wobble: f32,
    /// Independent shift of each stroke, so strokes may miss or overshoot.
    pub stroke_shift: f32,
    pub max_slant: f32,
    pub max_rotation_deg: f32,
    pub aspect_range: (f32, f32),
    pub width_range: (f32, f32),
}

impl Default for LetterStyle {
    fn default() -> Self {
        Self {
            point_jitter: 0.06,
            wobble: 0.05,
            stroke_shift: 0.04,
            max_slant: 0.35,
            max_rotation_deg: 12.0,
            aspect_range: (0.7, 1.3),
            width_range: (1.5, 3.5),
        }
    }
}

const SIDE: usize = 28;
const FIT_BOX: f32 = 20.0;

type Segment = ((f32, f32), (f32, f32));

/// Longest segment after densifying, so the displacement field can bend
/// straight strokes.
const MAX_STEP: f32 = 0.05;

fn densify(pts: Vec<(f32, f32)>) -> Vec<(f32, f32)> {
    let mut out = Vec::with_capacity(pts.len() * 4);
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (len / MAX_STEP).ceil().max(1.0) as usize;
        out.extend((0..n).map(|i| {
            let t = i as f32 / n as f32;
            (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
        }));
    }
    out.extend(pts.last().copied());
    out
}

/// A sum of three random plane waves per axis with total amplitude `amp`.
fn displacement_field(amp: f32, rng: &mut impl Rng) -> impl Fn((f32, f32)) -> (f32, f32) {
    let mut wave = || {
        let angle = rng.random_range(0.0..std::f32::consts::TAU);
        let freq = rng.random_range(0.5f32..=1.5) * std::f32::consts::TAU;
        let phase = rng.random_range(0.0..std::f32::consts::TAU);
        (freq * angle.cos(), freq * angle.sin(), phase)
    };
    let waves: Vec<[(f32, f32, f32); 2]> = (0..3).map(|_| [wave(), wave()]).collect();
    move |(x, y)| {
        let mut d = (0f32, 0f32);
        for [wx, wy] in &waves {
            d.0 += (wx.0 * x + wx.1 * y + wx.2).sin();
            d.1 += (wy.0 * x + wy.1 * y + wy.2).sin();
        }
        (x + amp / 3.0 * d.0, y + amp / 3.0 * d.1)
    }
}

fn stroke_polylines(class: usize, style: &LetterStyle, rng: &mut impl Rng) -> Vec<Vec<(f32, f32)>> {
    let field = displacement_field(style.wobble, rng);
    let mut jitter = |p: (f32, f32), j: f32| {
        if j == 0.0 {
            p
        } else {
            (p.0 + rng.random_range(-j..=j), p.1 + rng.random_range(-j..=j))
        }
    };
    glyph(class)
        .iter()
        .map(|s| {
            let shift = jitter((0.0, 0.0), style.stroke_shift);
            let pts: Vec<(f32, f32)> = match *s {
                Poly(pts) => pts.iter().map(|&p| jitter(p, style.point_jitter)).collect(),
                Arc(cx, cy, rx, ry, a0, a1) => {
                    let (cx, cy) = jitter((cx, cy), style.point_jitter);
                    let (sx, sy) = jitter((1.0, 1.0), 2.0 * style.point_jitter);
                    let (rx, ry) = (rx * sx, ry * sy);
                    let steps = ((a1 - a0).abs() / 15.0).ceil().max(2.0) as usize;
                    (0..=steps)
                        .map(|i| {
                            let t = (a0 + (a1 - a0) * i as f32 / steps as f32).to_radians();
                            (cx + rx * t.cos(), cy - ry * t.sin())
                        })
                        .collect()
                }
            };
            densify(pts)
                .into_iter()
                .map(|p| field((p.0 + shift.0, p.1 + shift.1)))
                .collect()
        })
        .collect()
}

fn dist_to_segment(p: (f32, f32), s: &Segment) -> f32 {
    let ((ax, ay), (bx, by)) = *s;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (ax + t * dx - p.0, ay + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn rasterize(segments: &[Segment], half_width: f32, ink: f32, offset: (f32, f32)) -> Vec<f32> {
    let mut out = vec![0f32; SIDE * SIDE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let p = (x as f32 + 0.5 - offset.0, y as f32 + 0.5 - offset.1);
            let d = segments
                .iter()
                .map(|s| dist_to_segment(p, s))
                .fold(f32::INFINITY, f32::min);
            out[y * SIDE + x] = ink * (half_width + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    out
}

/// Renders one sample of `class` as a 1x28x28 image in [-1, 1].
pub fn render_letter(class: usize, style: &LetterStyle, rng: &mut impl Rng) -> Image {
    assert!(class < LETTER_CLASSES, "letter class {class} out of range");
    let lines = stroke_polylines(class, style, rng);
    let slant = rng.random_range(-style.max_slant..=style.max_slant);
    let rot = rng.random_range(-style.max_rotation_deg..=style.max_rotation_deg).to_radians();
    let aspect = rng.random_range(style.aspect_range.0..=style.aspect_range.1);
    let width = rng.random_range(style.width_range.0..=style.width_range.1);
    let ink = rng.random_range(0.85f32..=1.0);
    let (s, c) = rot.sin_cos();
    let warp = |(x, y): (f32, f32)| {
        let x = (x - 0.5) * aspect + slant * (0.5 - y);
        let y = y - 0.5;
        (c * x - s * y, s * x + c * y)
    };
    let lines: Vec<Vec<(f32, f32)>> = lines.into_iter().map(|l| l.into_iter().map(warp).collect()).collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f32::INFINITY, f32::INFINITY, f32::NEG_INFINITY, f32::NEG_INFINITY);
    for &(x, y) in lines.iter().flatten() {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    // Fit the stroke skeleton (plus pen width) into the MNIST 20x20 box.
    let extent = (x1 - x0).max(y1 - y0).max(1e-3);
    let scale = (FIT_BOX - width) / extent;
    let (mx, my) = ((x0 + x1) * 0.5, (y0 + y1) * 0.5);
    let to_px = |(x, y): (f32, f32)| ((x - mx) * scale, (y - my) * scale);
    let segments: Vec<Segment> = lines
        .iter()
        .flat_map(|l| l.windows(2).map(|w| (to_px(w[0]), to_px(w[1]))).collect::<Vec<_>>())
        .collect();
    let half = width * 0.5;
    let centered = rasterize(&segments, half, ink, (SIDE as f32 / 2.0, SIDE as f32 / 2.0));
    // Shift so the center of mass sits at the image center.
    let (mut sx, mut sy, mut m) = (0f32, 0f32, 0f32);
    for (i, &v) in centered.iter().enumerate() {
        sx += v * (i % SIDE) as f32;
        sy += v * (i / SIDE) as f32;
        m += v;
    }
    let offset = if m > 0.0 {
        let cx = sx / m + 0.5;
        let cy = sy / m + 0.5;
        (SIDE as f32 - cx, SIDE as f32 - cy)
    } else {
        (SIDE as f32 / 2.0, SIDE as f32 / 2.0)
    };
    // Keep the whole stroke (plus antialiased rim) off the border rows.
    let reach = half + 1.5;
    let clamp_axis = |o: f32, lo: f32, hi: f32| o.clamp(reach - lo, SIDE as f32 - reach - hi).round();
    let offset = (
        clamp_axis(offset.0, (x0 - mx) * scale, (x1 - mx) * scale),
        clamp_axis(offset.1, (y0 - my) * scale, (y1 - my) * scale),
    );
    let pixels = rasterize(&segments, half, ink, offset);
    let data = pixels.into_iter().map(|v| v * 2.0 - 1.0).collect();
    Image {
        shape: ImageShape::new(1, SIDE, SIDE),
        data,
    }
}

/// Generates `per_class` samples of every class, interleaved by class.
/// Sample `i` depends only on `(seed, i)`.
pub fn generate_letters(per_class: usize, seed: u64, style: &LetterStyle) -> ImageBatch {
    let n = per_class * LETTER_CLASSES;
    let shape = ImageShape::new(1, SIDE, SIDE);
    let mut data = Vec::with_capacity(n * shape.numel());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % LETTER_CLASSES;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        data.extend(render_letter(class, style, &mut rng).data);
        labels.push(class as u32);
    }
    ImageBatch::new(shape, data, Some(labels)).expect("consistent letter batch")
}
