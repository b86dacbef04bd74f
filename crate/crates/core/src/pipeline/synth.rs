//! Procedural color scenes for desk-scale training when no photo corpus is
//! at hand. Each scene has a sky, a textured ground whose color follows its
//! texture, and a few flat objects of arbitrary hue. A per-image saturation
//! factor scales every chroma.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::lab_to_srgb8;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub count: usize,
    pub size: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { count: 2000, size: 128, seed: 0 }
    }
}

enum Shape {
    Disc { cy: f64, cx: f64, r: f64 },
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
}

impl Shape {
    /// Signed distance-like value: negative inside, roughly in pixels.
    fn inside(&self, y: f64, x: f64) -> f64 {
        match *self {
            Shape::Disc { cy, cx, r } => (y - cy).hypot(x - cx) - r,
            Shape::Rect { y0, x0, y1, x1 } => (y0 - y).max(y - y1).max(x0 - x).max(x - x1),
        }
    }
}

/// One scene, fully determined by `seed`.
pub fn synth_image(seed: u64, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let sat: f64 = rng.random_range(0.3..1.0);
    let horizon = n * rng.random_range(0.3..0.6);
    let wave_amp = rng.random_range(0.0..0.06) * n;
    let wave_freq = rng.random_range(1.0..3.0) * std::f64::consts::TAU / n;
    let sky_ab = [rng.random_range(-14.0..-2.0), rng.random_range(-45.0..-30.0)];
    let grass = rng.random_bool(0.5);
    let ground_ab = if grass { [rng.random_range(-45.0..-30.0), rng.random_range(30.0..50.0)] } else { [rng.random_range(5.0..18.0), rng.random_range(35.0..55.0)] };
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let mut shapes = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        let l: f64 = rng.random_range(35.0..80.0);
        let hue: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let chroma = rng.random_range(45.0..65.0);
        let shape = if rng.random_bool(0.5) {
            Shape::Disc { cy: rng.random_range(0.15..0.85) * n, cx: rng.random_range(0.15..0.85) * n, r: rng.random_range(0.08..0.2) * n }
        } else {
            let (h, w) = (rng.random_range(0.12..0.35) * n, rng.random_range(0.12..0.35) * n);
            let (y0, x0) = (rng.random_range(0.05..0.9) * n - h / 2.0, rng.random_range(0.05..0.9) * n - w / 2.0);
            Shape::Rect { y0, x0, y1: y0 + h, x1: x0 + w }
        };
        shapes.push((shape, l, [chroma * hue.cos(), chroma * hue.sin()]));
    }

    RgbImage::from_fn(size, size, |x, y| {
        let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
        let edge = horizon + wave_amp * (xf * wave_freq + phase).sin();
        let (mut l, mut ab) = if yf < edge {
            (72.0 + 20.0 * yf / edge.max(1.0), sky_ab)
        } else if grass {
            // Fine vertical blades.
            (42.0 + 12.0 * (xf * 1.9 + 0.3 * yf + phase).sin(), ground_ab)
        } else {
            // Broad horizontal ripples.
            (58.0 + 8.0 * (yf * 0.45 + phase).sin(), ground_ab)
        };
        for (shape, sl, sab) in &shapes {
            let d = shape.inside(yf, xf);
            if d < 0.0 {
                (l, ab) = if d > -1.2 { (sl - 18.0, *sab) } else { (*sl, *sab) };
            }
        }
        let jitter: f64 = rng.random_range(-1.0..1.0);
        Rgb(lab_to_srgb8([(l + jitter).clamp(0.0, 100.0), ab[0] * sat, ab[1] * sat]))
    })
}

/// Writes `count` scenes as `synth_00000.png`, ... into `dir`.
pub fn write_synthetic_dataset(dir: &Path, cfg: &SynthConfig) -> Result<usize> {
    if cfg.size < 8 || cfg.count == 0 {
        return Err(Error::InvalidConfig("synthetic dataset needs count ≥ 1 and size ≥ 8".into()));
    }
    std::fs::create_dir_all(dir)?;
    for i in 0..cfg.count {
        let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        synth_image(seed, cfg.size).save(dir.join(format!("synth_{i:05}.png")))?;
    }
    Ok(cfg.count)
}
