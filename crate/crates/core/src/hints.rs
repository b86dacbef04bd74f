//! Local (sparse point) and global (histogram / saturation) hint tensors.
//!
//! Training-time hints are simulated from ground truth; interactive hints are
//! painted from a list of [`PointEdit`]s.

use std::ops::Range;

use image::RgbImage;
use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::colorspace::{
    clamp_ab, mean_saturation, resize_ab, rgb_to_lab, soft_encode_color, AbImage, QuantizedGamut, SoftEncodeConfig,
    AB_LIMIT,
};
use crate::error::{Error, Result};

/// Sparse user colors plus a binary reveal mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalHints {
    pub height: usize,
    pub width: usize,
    pub ab: Vec<[f32; 2]>,
    pub mask: Vec<u8>,
}

impl LocalHints {
    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, ab: vec![[0.0, 0.0]; height * width], mask: vec![0; height * width] }
    }

    /// Every pixel revealed with its exact target color.
    pub fn full(target: &AbImage) -> Self {
        Self { height: target.height, width: target.width, ab: target.ab.clone(), mask: vec![1; target.ab.len()] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn revealed(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// Mask is binary and unrevealed pixels carry `(0, 0)`.
    pub fn is_consistent(&self) -> bool {
        self.mask.len() == self.height * self.width
            && self.ab.len() == self.mask.len()
            && self.mask.iter().zip(&self.ab).all(|(&m, ab)| match m {
                0 => *ab == [0.0, 0.0],
                1 => ab.iter().all(|v| v.abs() <= AB_LIMIT),
                _ => false,
            })
    }

    /// Sets every pixel of the rectangle to `ab` and marks it revealed.
    pub fn paint(&mut self, rows: Range<usize>, cols: Range<usize>, ab: [f32; 2]) {
        let ab = clamp_ab(ab);
        for r in rows {
            for c in cols.clone() {
                let i = r * self.width + c;
                self.ab[i] = ab;
                self.mask[i] = 1;
            }
        }
    }

    /// Reveals the mean target color over the (border-clipped) patch of side
    /// `size` anchored at `(row, col)`.
    pub fn reveal_patch_mean(&mut self, target: &AbImage, row: usize, col: usize, size: usize) -> (Range<usize>, Range<usize>) {
        let rows = patch_span(row, size, self.height);
        let cols = patch_span(col, size, self.width);
        let mean = patch_mean(target, rows.clone(), cols.clone());
        self.paint(rows.clone(), cols.clone(), mean);
        (rows, cols)
    }
}

/// Pixel span covered by a patch of side `size` around `center` along an axis
/// of length `len`. Odd sizes are centered; even sizes start at the center.
/// The span is clipped to the axis.
pub fn patch_span(center: usize, size: usize, len: usize) -> Range<usize> {
    let size = size.max(1);
    let start = if size % 2 == 1 { center.saturating_sub(size / 2) } else { center };
    let end = if size % 2 == 1 { center + size / 2 + 1 } else { center + size };
    start.min(len)..end.min(len)
}

pub fn patch_mean(target: &AbImage, rows: Range<usize>, cols: Range<usize>) -> [f32; 2] {
    let mut acc = [0f64; 2];
    let mut n = 0usize;
    for r in rows {
        for c in cols.clone() {
            let [a, b] = target.get(r, c);
            acc[0] += a as f64;
            acc[1] += b as f64;
            n += 1;
        }
    }
    if n == 0 {
        return [0.0, 0.0];
    }
    [(acc[0] / n as f64) as f32, (acc[1] / n as f64) as f32]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Success probability of the point-count geometric distribution
    /// (support starts at zero points).
    pub geometric_p: f64,
    pub full_reveal_prob: f64,
    pub patch_min: usize,
    pub patch_max: usize,
    /// Location standard deviation as a fraction of each image side; the mean
    /// is always the image center.
    pub location_sigma_frac: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometric_p: 1.0 / 8.0,
            full_reveal_prob: 0.01,
            patch_min: 1,
            patch_max: 9,
            location_sigma_frac: 0.25,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.geometric_p > 0.0 && self.geometric_p <= 1.0) {
            return Err(Error::InvalidConfig(format!("geometric_p must be in (0, 1], got {}", self.geometric_p)));
        }
        if !(0.0..=1.0).contains(&self.full_reveal_prob) {
            return Err(Error::InvalidConfig(format!("full_reveal_prob must be a probability, got {}", self.full_reveal_prob)));
        }
        if self.patch_min == 0 || self.patch_min > self.patch_max {
            return Err(Error::InvalidConfig(format!("bad patch size range {}..={}", self.patch_min, self.patch_max)));
        }
        if !(self.location_sigma_frac > 0.0) {
            return Err(Error::InvalidConfig("location_sigma_frac must be positive".into()));
        }
        Ok(())
    }
}

/// Number of simulated points for one training instance.
pub fn sample_point_count<R: Rng + ?Sized>(p: f64, rng: &mut R) -> usize {
    if p >= 1.0 {
        return 0;
    }
    Geometric::new(p).expect("validated probability").sample(rng) as usize
}

fn sample_location<R: Rng + ?Sized>(len: usize, sigma_frac: f64, rng: &mut R) -> usize {
    let mu = len as f64 / 2.0;
    let normal = Normal::new(mu, len as f64 * sigma_frac).expect("positive sigma");
    let v: f64 = normal.sample(rng);
    v.round().clamp(0.0, (len - 1) as f64) as usize
}

/// Simulated user interaction projected from the ground-truth colors.
pub fn simulate_local_hints<R: Rng + ?Sized>(target: &AbImage, cfg: &SimConfig, rng: &mut R) -> LocalHints {
    if rng.random::<f64>() < cfg.full_reveal_prob {
        return LocalHints::full(target);
    }
    let mut hints = LocalHints::empty(target.height, target.width);
    let n = sample_point_count(cfg.geometric_p, rng);
    for _ in 0..n {
        let row = sample_location(target.height, cfg.location_sigma_frac, rng);
        let col = sample_location(target.width, cfg.location_sigma_frac, rng);
        let size = rng.random_range(cfg.patch_min..=cfg.patch_max);
        hints.reveal_patch_mean(target, row, col, size);
    }
    hints
}

/// Whole-image color statistics with reveal indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalHints {
    pub histogram: Vec<f32>,
    pub hist_flag: bool,
    pub saturation: f32,
    pub sat_flag: bool,
}

impl GlobalHints {
    pub fn none(q: usize) -> Self {
        Self { histogram: vec![0.0; q], hist_flag: false, saturation: 0.0, sat_flag: false }
    }

    /// Builds hints from explicit values, zeroing anything not revealed.
    pub fn new(histogram: Vec<f32>, reveal_hist: bool, saturation: f32, reveal_sat: bool) -> Result<Self> {
        let q = histogram.len();
        let mut out = Self::none(q);
        if reveal_hist {
            if histogram.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::InvalidConfig("histogram entries must be nonnegative".into()));
            }
            let total: f64 = histogram.iter().map(|&v| v as f64).sum();
            if total <= 0.0 {
                return Err(Error::InvalidConfig("revealed histogram has zero mass".into()));
            }
            out.histogram = histogram.iter().map(|&v| (v as f64 / total) as f32).collect();
            out.hist_flag = true;
        }
        if reveal_sat {
            out.saturation = saturation.clamp(0.0, 1.0);
            out.sat_flag = true;
        }
        Ok(out)
    }

    pub fn q(&self) -> usize {
        self.histogram.len()
    }

    /// Flat network input of width `Q + 3`: histogram, histogram flag,
    /// saturation, saturation flag.
    pub fn to_vector(&self) -> Vec<f32> {
        let mut v = self.histogram.clone();
        v.push(self.hist_flag as u8 as f32);
        v.push(self.saturation);
        v.push(self.sat_flag as u8 as f32);
        v
    }

    pub fn is_consistent(&self) -> bool {
        let total: f64 = self.histogram.iter().map(|&v| v as f64).sum();
        let hist_ok = if self.hist_flag {
            (total - 1.0).abs() <= 1e-5 && self.histogram.iter().all(|&v| v >= 0.0)
        } else {
            self.histogram.iter().all(|&v| v == 0.0)
        };
        let sat_ok = if self.sat_flag { (0.0..=1.0).contains(&self.saturation) } else { self.saturation == 0.0 };
        hist_ok && sat_ok
    }
}

/// Spatial mean of per-pixel soft-encodings.
pub fn ab_histogram(ab: &AbImage, gamut: &QuantizedGamut, cfg: &SoftEncodeConfig) -> Vec<f32> {
    let mut acc = vec![0f64; gamut.q()];
    for &[a, b] in &ab.ab {
        for (bin, w) in soft_encode_color([a as f64, b as f64], gamut, cfg) {
            acc[bin] += w;
        }
    }
    let n = ab.ab.len().max(1) as f64;
    acc.into_iter().map(|v| (v / n) as f32).collect()
}

/// Quarter-resolution size used for the global histogram.
pub fn quarter_dims(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(4), width.div_ceil(4))
}

pub fn compute_global_hints(rgb: &RgbImage, gamut: &QuantizedGamut, reveal_hist: bool, reveal_sat: bool) -> Result<GlobalHints> {
    let mut out = GlobalHints::none(gamut.q());
    if reveal_hist {
        let (_, ab) = rgb_to_lab(rgb)?;
        let (qh, qw) = quarter_dims(ab.height, ab.width);
        let small = resize_ab(&ab, qh, qw);
        out.histogram = ab_histogram(&small, gamut, &SoftEncodeConfig::default());
        out.hist_flag = true;
    }
    if reveal_sat {
        if rgb.width() == 0 || rgb.height() == 0 {
            return Err(Error::EmptyImage);
        }
        out.saturation = mean_saturation(rgb) as f32;
        out.sat_flag = true;
    }
    Ok(out)
}

/// Training-time reveal choice: each statistic independently with
/// probability one half.
pub fn random_global_reveal<R: Rng + ?Sized>(rng: &mut R) -> (bool, bool) {
    (rng.random_bool(0.5), rng.random_bool(0.5))
}

fn default_patch_size() -> usize {
    3
}

/// One user-placed point, in the shared JSON schema `{x, y, a, b, size}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEdit {
    pub x: i64,
    pub y: i64,
    pub a: f32,
    pub b: f32,
    #[serde(default = "default_patch_size")]
    pub size: usize,
}

impl PointEdit {
    pub fn new(x: i64, y: i64, ab: [f32; 2]) -> Self {
        Self { x, y, a: ab[0], b: ab[1], size: default_patch_size() }
    }
}

/// Checks every edit against the image bounds and value ranges.
pub fn validate_edits(edits: &[PointEdit], height: usize, width: usize) -> Result<()> {
    for (index, e) in edits.iter().enumerate() {
        if e.x < 0 || e.y < 0 || e.x >= width as i64 || e.y >= height as i64 {
            return Err(Error::EditOutOfBounds { index, x: e.x, y: e.y, width, height });
        }
        if !(e.a.abs() <= AB_LIMIT && e.b.abs() <= AB_LIMIT) {
            return Err(Error::InvalidEdit { index, reason: format!("ab ({}, {}) outside [-110, 110]", e.a, e.b) });
        }
        if e.size == 0 {
            return Err(Error::InvalidEdit { index, reason: "patch size must be at least 1".into() });
        }
    }
    Ok(())
}

/// Paints each edit in order; later edits overwrite earlier ones.
pub fn hints_from_edits(edits: &[PointEdit], height: usize, width: usize) -> Result<LocalHints> {
    validate_edits(edits, height, width)?;
    let mut hints = LocalHints::empty(height, width);
    for e in edits {
        let rows = patch_span(e.y as usize, e.size, height);
        let cols = patch_span(e.x as usize, e.size, width);
        hints.paint(rows, cols, [e.a, e.b]);
    }
    Ok(hints)
}
