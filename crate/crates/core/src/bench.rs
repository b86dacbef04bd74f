//! PSNR versus number of revealed points, under random and max-error point
//! sampling, for any method that maps `(gray, hints)` to ab.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorspace::{lab_to_rgb, rgb_to_lab, AbImage, GrayImage};
use crate::error::{check_dims, Error, Result};
use crate::hints::{patch_span, LocalHints};
use crate::levin::{propagate_edits, LevinConfig};
use crate::model::Network;

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const CSV_HEADER: &str = "method,sampler,n,psnr_mean,psnr_stderr,images";

/// `10·log10(255² / MSE)` over all pixels and channels, capped at 99 dB.
pub fn psnr(reference: &RgbImage, test: &RgbImage) -> Result<f64> {
    check_dims((reference.height() as usize, reference.width() as usize), (test.height() as usize, test.width() as usize))?;
    let raw_ref = reference.as_raw();
    let sse: f64 = raw_ref.iter().zip(test.as_raw()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP);
    }
    let mse = sse / raw_ref.len() as f64;
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP))
}

/// Anything that colorizes a lightness plane from local hints.
pub trait Colorizer: Sync {
    fn name(&self) -> &str;
    fn colorize(&self, gray: &GrayImage, hints: &LocalHints) -> Result<AbImage>;
}

/// Ignores the hints and predicts zero chrominance.
pub struct GrayColorizer;

impl Colorizer for GrayColorizer {
    fn name(&self) -> &str {
        "gray"
    }
    fn colorize(&self, gray: &GrayImage, _: &LocalHints) -> Result<AbImage> {
        Ok(AbImage::zeros(gray.height, gray.width))
    }
}

pub struct LevinColorizer(pub LevinConfig);

impl Colorizer for LevinColorizer {
    fn name(&self) -> &str {
        "levin"
    }
    fn colorize(&self, gray: &GrayImage, hints: &LocalHints) -> Result<AbImage> {
        propagate_edits(gray, hints, &self.0)
    }
}

pub struct NetworkColorizer(pub Network);

impl Colorizer for NetworkColorizer {
    fn name(&self) -> &str {
        "network_local"
    }
    fn colorize(&self, gray: &GrayImage, hints: &LocalHints) -> Result<AbImage> {
        self.0.forward_local(gray, hints)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Random,
    MaxError,
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampler::Random => "random",
            Sampler::MaxError => "max_error",
        })
    }
}

impl FromStr for Sampler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Sampler::Random),
            "max_error" | "max-error" => Ok(Sampler::MaxError),
            other => Err(Error::InvalidConfig(format!("unknown sampler {other:?} (expected random or max_error)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub point_counts: Vec<usize>,
    pub samplers: Vec<Sampler>,
    pub reveal_patch: usize,
    pub error_window: usize,
    /// Independent random draws per image, averaged before aggregation.
    pub trials_per_image: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            point_counts: vec![0, 1, 2, 5, 10, 20, 50, 100, 200, 500],
            samplers: vec![Sampler::Random, Sampler::MaxError],
            reveal_patch: 7,
            error_window: 25,
            trials_per_image: 1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.point_counts.is_empty() || self.point_counts.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("point_counts must be a nonempty nondecreasing list".into()));
        }
        if self.reveal_patch % 2 == 0 || self.error_window % 2 == 0 {
            return Err(Error::InvalidConfig("reveal_patch and error_window must be odd".into()));
        }
        if self.trials_per_image == 0 || self.samplers.is_empty() {
            return Err(Error::InvalidConfig("need at least one trial and one sampler".into()));
        }
        Ok(())
    }
}

/// `n` patch centers drawn uniformly over the image, each revealing its
/// patch-mean ab; later patches overwrite earlier ones.
pub fn sample_random_points<R: Rng + ?Sized>(target: &AbImage, n: usize, patch: usize, rng: &mut R) -> LocalHints {
    let mut hints = LocalHints::empty(target.height, target.width);
    for _ in 0..n {
        let row = rng.random_range(0..target.height);
        let col = rng.random_range(0..target.width);
        hints.reveal_patch_mean(target, row, col, patch);
    }
    hints
}

/// Box mean with a `window`-wide square, clipped at the borders.
fn box_mean(values: &[f64], h: usize, w: usize, window: usize) -> Vec<f64> {
    let mut integral = vec![0.0; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            integral[(r + 1) * (w + 1) + c + 1] = values[r * w + c] + integral[r * (w + 1) + c + 1] + integral[(r + 1) * (w + 1) + c] - integral[r * (w + 1) + c];
        }
    }
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let rs = patch_span(r, window, h);
        for c in 0..w {
            let cs = patch_span(c, window, w);
            let at = |y: usize, x: usize| integral[y * (w + 1) + x];
            let sum = at(rs.end, cs.end) - at(rs.start, cs.end) - at(rs.end, cs.start) + at(rs.start, cs.start);
            out.push(sum / (rs.len() * cs.len()) as f64);
        }
    }
    out
}

/// Incremental oracle sampler: each step colorizes with the current hints,
/// then reveals the patch whose surrounding window has the largest mean ab
/// error. Patches lie fully inside the image and never overlap.
pub struct MaxErrorSampler<'a> {
    target: &'a AbImage,
    gray: &'a GrayImage,
    patch: usize,
    window: usize,
    occupied: Vec<bool>,
    pub hints: LocalHints,
    pub count: usize,
    /// Set once no non-overlapping position remains.
    pub exhausted: bool,
}

impl<'a> MaxErrorSampler<'a> {
    pub fn new(target: &'a AbImage, gray: &'a GrayImage, patch: usize, window: usize) -> Result<Self> {
        check_dims(gray.dims(), target.dims())?;
        Ok(Self {
            target,
            gray,
            patch,
            window,
            occupied: vec![false; target.ab.len()],
            hints: LocalHints::empty(target.height, target.width),
            count: 0,
            exhausted: false,
        })
    }

    fn fits(&self, row: usize, col: usize) -> bool {
        let (h, w) = self.target.dims();
        let half = self.patch / 2;
        if row < half || col < half || row + half >= h || col + half >= w {
            return false;
        }
        (row - half..=row + half).all(|r| (col - half..=col + half).all(|c| !self.occupied[r * w + c]))
    }

    /// Reveals one more patch given the current prediction; returns whether
    /// a position was available.
    pub fn advance_with(&mut self, prediction: &AbImage) -> Result<bool> {
        check_dims(self.target.dims(), prediction.dims())?;
        if self.exhausted {
            return Ok(false);
        }
        let (h, w) = self.target.dims();
        let err: Vec<f64> = self
            .target
            .ab
            .iter()
            .zip(&prediction.ab)
            .map(|(t, p)| ((t[0] - p[0]) as f64).hypot((t[1] - p[1]) as f64))
            .collect();
        let smooth = box_mean(&err, h, w, self.window);
        let mut best: Option<(usize, f64)> = None;
        for (i, &e) in smooth.iter().enumerate() {
            if best.is_none_or(|b| e > b.1) && self.fits(i / w, i % w) {
                best = Some((i, e));
            }
        }
        let Some((i, _)) = best else {
            self.exhausted = true;
            return Ok(false);
        };
        let (rows, cols) = self.hints.reveal_patch_mean(self.target, i / w, i % w, self.patch);
        for r in rows {
            for c in cols.clone() {
                self.occupied[r * w + c] = true;
            }
        }
        self.count += 1;
        Ok(true)
    }

    pub fn advance(&mut self, colorizer: &dyn Colorizer) -> Result<bool> {
        if self.exhausted {
            return Ok(false);
        }
        let prediction = colorizer.colorize(self.gray, &self.hints)?;
        self.advance_with(&prediction)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxErrorPoints {
    pub hints: LocalHints,
    pub achieved: usize,
    /// True when fewer than the requested points fit without overlap.
    pub short: bool,
}

pub fn sample_max_error_points(
    target: &AbImage,
    gray: &GrayImage,
    colorizer: &dyn Colorizer,
    n: usize,
    cfg: &BenchConfig,
) -> Result<MaxErrorPoints> {
    let mut sampler = MaxErrorSampler::new(target, gray, cfg.reveal_patch, cfg.error_window)?;
    while sampler.count < n && sampler.advance(colorizer)? {}
    Ok(MaxErrorPoints { achieved: sampler.count, short: sampler.count < n, hints: sampler.hints })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub sampler: Sampler,
    pub n: usize,
    pub psnr_mean: f64,
    pub psnr_stderr: f64,
    pub images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub dataset_hash: String,
    pub config: BenchConfig,
    /// Images for which the max-error sampler ran out of room, per method.
    pub short_counts: Vec<(String, usize)>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{:.4},{:.4},{}\n", r.method, r.sampler, r.n, r.psnr_mean, r.psnr_stderr, r.images));
        }
        out
    }

    pub fn row(&self, method: &str, sampler: Sampler, n: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.sampler == sampler && r.n == n)
    }
}

/// Mean and standard error of the mean (sample standard deviation).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn dataset_hash(images: &[RgbImage]) -> String {
    let mut hasher = Sha256::new();
    for img in images {
        hasher.update((img.width() as u64).to_le_bytes());
        hasher.update((img.height() as u64).to_le_bytes());
        hasher.update(img.as_raw());
    }
    hex::encode(hasher.finalize())
}

fn image_rng(seed: u64, image: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (image as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(stream);
    rng
}

struct ImageScores {
    /// `[sampler][n]` PSNR per method.
    psnr: Vec<Vec<Vec<f64>>>,
    short: Vec<bool>,
}

fn score_image(idx: usize, rgb: &RgbImage, methods: &[&dyn Colorizer], cfg: &BenchConfig) -> Result<ImageScores> {
    let (gray, target) = rgb_to_lab(rgb)?;
    let reference = lab_to_rgb(&gray, &target)?;
    let score = |m: &dyn Colorizer, hints: &LocalHints| -> Result<f64> { psnr(&reference, &lab_to_rgb(&gray, &m.colorize(&gray, hints)?)?) };
    let mut psnr_out = Vec::new();
    let mut short = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        let mut per_sampler = Vec::new();
        let mut ran_short = false;
        for &sampler in &cfg.samplers {
            let mut values = Vec::new();
            match sampler {
                Sampler::Random => {
                    for (ni, &n) in cfg.point_counts.iter().enumerate() {
                        let mut total = 0.0;
                        for trial in 0..cfg.trials_per_image {
                            let stream = ((mi as u64) << 48) | ((ni as u64) << 24) | trial as u64;
                            let mut rng = image_rng(cfg.seed, idx, stream);
                            total += score(*m, &sample_random_points(&target, n, cfg.reveal_patch, &mut rng))?;
                        }
                        values.push(total / cfg.trials_per_image as f64);
                    }
                }
                Sampler::MaxError => {
                    let mut s = MaxErrorSampler::new(&target, &gray, cfg.reveal_patch, cfg.error_window)?;
                    for &n in &cfg.point_counts {
                        while s.count < n && s.advance(*m)? {}
                        ran_short |= s.count < n;
                        values.push(score(*m, &s.hints)?);
                    }
                }
            }
            per_sampler.push(values);
        }
        psnr_out.push(per_sampler);
        short.push(ran_short);
    }
    Ok(ImageScores { psnr: psnr_out, short })
}

/// Scores every method on every image at every point count and sampler.
pub fn run_benchmark(images: &[RgbImage], methods: &[&dyn Colorizer], cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Dataset("benchmark needs at least one image".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods to benchmark".into()));
    }
    let scores: Vec<ImageScores> = images.par_iter().enumerate().map(|(i, img)| score_image(i, img, methods, cfg)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut short_counts = Vec::new();
    for (mi, m) in methods.iter().enumerate() {
        for (si, &sampler) in cfg.samplers.iter().enumerate() {
            for (ni, &n) in cfg.point_counts.iter().enumerate() {
                let values: Vec<f64> = scores.iter().map(|s| s.psnr[mi][si][ni]).collect();
                let (mean, se) = mean_stderr(&values);
                rows.push(BenchRow { method: m.name().to_string(), sampler, n, psnr_mean: mean, psnr_stderr: se, images: values.len() });
            }
        }
        short_counts.push((m.name().to_string(), scores.iter().filter(|s| s.short[mi]).count()));
    }
    Ok(BenchReport { rows, dataset_hash: dataset_hash(images), config: cfg.clone(), short_counts })
}
