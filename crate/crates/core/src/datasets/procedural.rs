//! Self-contained image sources: stroke-rendered digits (the simple source)
//! and textured shapes (the complex source), both ten classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::grad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
    /// Pixel noise standard deviation; `None` keeps the source's default.
    #[serde(default)]
    pub noise: Option<f64>,
}

impl SourceConfig {
    pub fn new(per_class: usize, size: usize, seed: u64) -> Self {
        Self { per_class, size, seed, noise: None }
    }

    pub fn with_noise(self, noise: f64) -> Self {
        Self { noise: Some(noise), ..self }
    }
}

pub const DIGIT_NOISE: f64 = 0.03;
pub const TEXTURE_NOISE: f64 = 0.08;

type Stroke = &'static [(f64, f64)];

const fn glyph(strokes: &'static [Stroke]) -> &'static [Stroke] {
    strokes
}

const DIGITS: [&[Stroke]; 10] = [
    glyph(&[&[
        (0.5, 0.14),
        (0.68, 0.2),
        (0.76, 0.4),
        (0.76, 0.6),
        (0.68, 0.8),
        (0.5, 0.86),
        (0.32, 0.8),
        (0.24, 0.6),
        (0.24, 0.4),
        (0.32, 0.2),
        (0.5, 0.14),
    ]]),
    glyph(&[&[(0.36, 0.3), (0.52, 0.14), (0.52, 0.86)]]),
    glyph(&[&[(0.26, 0.3), (0.5, 0.15), (0.74, 0.3), (0.26, 0.85), (0.76, 0.85)]]),
    glyph(&[&[(0.26, 0.2), (0.7, 0.2), (0.45, 0.48), (0.72, 0.66), (0.52, 0.86), (0.26, 0.8)]]),
    glyph(&[&[(0.66, 0.86), (0.66, 0.14), (0.24, 0.62), (0.8, 0.62)]]),
    glyph(&[&[(0.72, 0.15), (0.3, 0.15), (0.28, 0.48), (0.62, 0.45), (0.74, 0.66), (0.56, 0.86), (0.26, 0.8)]]),
    glyph(&[&[(0.66, 0.15), (0.36, 0.42), (0.3, 0.68), (0.5, 0.86), (0.7, 0.7), (0.62, 0.52), (0.34, 0.56)]]),
    glyph(&[&[(0.24, 0.15), (0.76, 0.15), (0.44, 0.86)]]),
    glyph(&[
        &[(0.5, 0.14), (0.66, 0.22), (0.66, 0.4), (0.5, 0.48), (0.34, 0.4), (0.34, 0.22), (0.5, 0.14)],
        &[(0.5, 0.48), (0.7, 0.58), (0.7, 0.78), (0.5, 0.86), (0.3, 0.78), (0.3, 0.58), (0.5, 0.48)],
    ]),
    glyph(&[&[(0.68, 0.42), (0.42, 0.5), (0.3, 0.32), (0.5, 0.14), (0.68, 0.28), (0.64, 0.86)]]),
];

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Renders one digit glyph with a random affine jitter and stroke width.
fn render_digit(class: usize, size: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let angle: f64 = rng.random_range(-0.2..0.2);
    let scale: f64 = rng.random_range(0.85..1.1);
    let shear: f64 = rng.random_range(-0.15..0.15);
    let (tx, ty): (f64, f64) = (rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08));
    let width = rng.random_range(0.055..0.085) * s;
    let (ca, sa) = (angle.cos(), angle.sin());
    let map = |(x, y): (f64, f64)| {
        let (x, y) = (x - 0.5 + shear * (y - 0.5), y - 0.5);
        let (x, y) = (scale * (ca * x - sa * y), scale * (sa * x + ca * y));
        ((x + 0.5 + tx) * s, (y + 0.5 + ty) * s)
    };
    let segs: Vec<((f64, f64), (f64, f64))> = DIGITS[class]
        .iter()
        .flat_map(|stroke| stroke.windows(2).map(|w| (map(w[0]), map(w[1]))))
        .collect();
    let noise = Normal::new(0.0, noise).expect("valid");
    let mut img = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = segs.iter().map(|&(a, b)| seg_dist(p, a, b)).fold(f64::INFINITY, f64::min);
            let v = (1.0 - (d - width) / 0.8).clamp(0.0, 1.0);
            img[r * size + c] = (v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
    img
}

/// Stroke digits `0..=9`, shape `(n, 1, size, size)`, class-major order.
pub fn digit_source(cfg: SourceConfig) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = Vec::with_capacity(10 * cfg.per_class * cfg.size * cfg.size);
    let mut labels = Vec::with_capacity(10 * cfg.per_class);
    for class in 0..10 {
        for _ in 0..cfg.per_class {
            data.extend(render_digit(class, cfg.size, cfg.noise.unwrap_or(DIGIT_NOISE), &mut rng));
            labels.push(class);
        }
    }
    let n = labels.len();
    LabeledDataset::new(Tensor::from_vec(&[n, 1, cfg.size, cfg.size], data), labels, 10, None).expect("consistent")
}

fn inside_shape(shape: usize, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
        2 => dy <= 0.8 * r && dy >= -r + 2.0 * dx.abs(),
        3 => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.5 * r) * (0.5 * r)
        }
        _ => (dx.abs() <= 0.35 * r && dy.abs() <= r) || (dy.abs() <= 0.35 * r && dx.abs() <= r),
    }
}

/// One textured shape: class = `2 * shape + stripe_orientation`; colours,
/// position, size, stripe period and phase are nuisance variables.
fn render_texture(class: usize, size: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let (shape, orient) = (class / 2, class % 2);
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let cx = s / 2.0 + rng.random_range(-0.12..0.12) * s;
    let cy = s / 2.0 + rng.random_range(-0.12..0.12) * s;
    let r = rng.random_range(0.26..0.36) * s;
    let period = rng.random_range(2.5..4.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, noise).expect("valid");
    let mut img = vec![0.0; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let t = if orient == 0 { dy } else { dx };
            let stripe = 0.5 + 0.5 * (std::f64::consts::TAU * t / period + phase).sin();
            let inside = inside_shape(shape, dx, dy, r);
            for ch in 0..3 {
                let v = if inside { fg[ch] * (0.35 + 0.65 * stripe) } else { bg[ch] };
                img[ch * size * size + y * size + x] = (v + noise.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Textured shapes, shape `(n, 3, size, size)`, class-major order.
pub fn texture_source(cfg: SourceConfig) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = Vec::with_capacity(30 * cfg.per_class * cfg.size * cfg.size);
    let mut labels = Vec::with_capacity(10 * cfg.per_class);
    for class in 0..10 {
        for _ in 0..cfg.per_class {
            data.extend(render_texture(class, cfg.size, cfg.noise.unwrap_or(TEXTURE_NOISE), &mut rng));
            labels.push(class);
        }
    }
    let n = labels.len();
    LabeledDataset::new(Tensor::from_vec(&[n, 3, cfg.size, cfg.size], data), labels, 10, None).expect("consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sources_have_expected_shapes() {
        let d = digit_source(SourceConfig::new(2, 16, 0));
        assert_eq!(d.inputs.shape(), &[20, 1, 16, 16]);
        let t = texture_source(SourceConfig::new(2, 16, 0));
        assert_eq!(t.inputs.shape(), &[20, 3, 16, 16]);
        assert!(d.inputs.data().iter().chain(t.inputs.data()).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn digits_have_ink() {
        let d = digit_source(SourceConfig::new(1, 16, 3));
        for i in 0..10 {
            let ink: f64 = d.inputs.row(i).iter().filter(|&&v| v > 0.5).count() as f64;
            assert!(ink >= 8.0, "digit {i} has {ink} bright pixels");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SourceConfig::new(3, 12, 7);
        assert_eq!(digit_source(cfg), digit_source(cfg));
        assert_eq!(texture_source(cfg), texture_source(cfg));
    }
}
