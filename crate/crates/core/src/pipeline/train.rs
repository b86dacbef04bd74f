//! Training loop for both variants.
//!
//! Every step draws from its own seeded random stream (seed, step), so a
//! resumed run replays exactly the batches an uninterrupted run would see.

use std::path::{Path, PathBuf};

use image::imageops;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{load_split, resize_short_side, DatasetManifest, Split};
use crate::colorspace::{resize_ab, rgb_to_lab, soft_encode, QuantizedGamut, SoftEncodeConfig};
use crate::error::{Error, Result};
use crate::hints::{compute_global_hints, random_global_reveal, simulate_local_hints, SimConfig};
use crate::model::loss::LossConfig;
use crate::model::{
    encode_gray_input, encode_local_input, global_vector, load_checkpoint, save_checkpoint, LossWeights, Network, NetworkConfig, TrainBatch,
    Variant, LOCAL_INPUT_CHANNELS, SIZE_MULTIPLE,
};
use crate::nn::{Adam, AdamConfig, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Side of the square training crops.
    pub image_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    /// Cosine decay floor.
    pub lr_min: f64,
    pub warmup_steps: usize,
    pub sim: SimConfig,
    pub loss: LossConfig,
    pub soft_encode: SoftEncodeConfig,
    pub side_branch_weight: f64,
    /// Zero disables intermediate checkpoints; the final one is always written.
    pub checkpoint_every: usize,
    pub seed: u64,
    pub hflip: bool,
    /// Training images are scaled to this short side before cropping; zero
    /// keeps their native size.
    pub source_short_side: usize,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Local,
            image_size: 128,
            batch_size: 8,
            steps: 20_000,
            lr: 3e-4,
            lr_min: 0.0,
            warmup_steps: 0,
            sim: SimConfig::default(),
            loss: LossConfig::default(),
            soft_encode: SoftEncodeConfig::default(),
            side_branch_weight: 1.0,
            checkpoint_every: 1000,
            seed: 0,
            hflip: true,
            source_short_side: 160,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The small configuration used for desk-scale runs on one CPU core.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            image_size: 64,
            batch_size: 8,
            steps: 3000,
            lr: 1e-3,
            lr_min: 2e-5,
            warmup_steps: 50,
            // A small model sees too few fully revealed examples at the
            // default rate to learn to copy dense hints.
            sim: SimConfig { full_reveal_prob: 0.5, ..SimConfig::default() },
            checkpoint_every: 1000,
            source_short_side: 0,
            network: NetworkConfig { variant, base_width: 8, dist_hidden: 64, ..NetworkConfig::default() },
            ..Self::default()
        }
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig { variant: self.variant, ..self.network.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % SIZE_MULTIPLE != 0 {
            return Err(Error::InvalidConfig(format!("image_size must be a positive multiple of {SIZE_MULTIPLE}, got {}", self.image_size)));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("batch_size and steps must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::InvalidConfig("need 0 ≤ lr_min ≤ lr and lr > 0".into()));
        }
        if !(self.side_branch_weight >= 0.0) {
            return Err(Error::InvalidConfig("side_branch_weight must be nonnegative".into()));
        }
        if self.source_short_side != 0 && self.source_short_side < self.image_size {
            return Err(Error::InvalidConfig("source_short_side must be 0 or at least image_size".into()));
        }
        self.sim.validate()?;
        self.loss.validate()?;
        self.network_config().validate()
    }

    /// Linear warmup, then cosine decay from `lr` to `lr_min`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.steps - self.warmup_steps.min(self.steps)).max(1) as f64;
        let t = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    /// Mean Huber loss per ab value.
    pub huber: f64,
    /// Mean cross-entropy per quarter-resolution pixel (local variant).
    pub cross_entropy: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub trace: Vec<StepLog>,
    /// Final checkpoint, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

/// Where to write checkpoints and whether to continue a previous run.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Steps between progress log lines; zero disables them.
    pub log_every: usize,
    /// Hash of the training data, recorded in checkpoint manifests.
    pub dataset_hash: Option<String>,
}

pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

fn random_crop<R: Rng + ?Sized>(img: &RgbImage, size: u32, hflip: bool, rng: &mut R) -> RgbImage {
    let (w, h) = img.dimensions();
    let x0 = rng.random_range(0..=w - size);
    let y0 = rng.random_range(0..=h - size);
    let crop = imageops::crop_imm(img, x0, y0, size, size).to_image();
    if hflip && rng.random_bool(0.5) {
        imageops::flip_horizontal(&crop)
    } else {
        crop
    }
}

/// Assembles one batch: random crops, simulated hints, and targets.
pub fn make_batch<R: Rng + ?Sized>(images: &[RgbImage], gamut: &QuantizedGamut, cfg: &TrainConfig, rng: &mut R) -> Result<TrainBatch> {
    let s = cfg.image_size;
    let (n, hw) = (cfg.batch_size, s * s);
    let q = gamut.q();
    let channels = match cfg.variant {
        Variant::Local => LOCAL_INPUT_CHANNELS,
        Variant::Global => 1,
    };
    let mut input = vec![0f32; n * channels * hw];
    let mut target_ab = vec![0f32; n * 2 * hw];
    let mut target_dist = Vec::new();
    let mut global = Vec::new();
    for i in 0..n {
        let img = &images[rng.random_range(0..images.len())];
        let crop = random_crop(img, s as u32, cfg.hflip, rng);
        let (gray, ab) = rgb_to_lab(&crop)?;
        for (k, p) in ab.ab.iter().enumerate() {
            target_ab[i * 2 * hw + k] = p[0];
            target_ab[i * 2 * hw + hw + k] = p[1];
        }
        let dst = &mut input[i * channels * hw..(i + 1) * channels * hw];
        match cfg.variant {
            Variant::Local => {
                let hints = simulate_local_hints(&ab, &cfg.sim, rng);
                encode_local_input(&gray, &hints, dst);
                let quarter = resize_ab(&ab, s / 4, s / 4);
                target_dist.extend_from_slice(&soft_encode(&quarter, gamut, &cfg.soft_encode)?.probs);
            }
            Variant::Global => {
                encode_gray_input(&gray, dst);
                let (hist, sat) = random_global_reveal(rng);
                global.extend(global_vector(&compute_global_hints(&crop, gamut, hist, sat)?));
            }
        }
    }
    Ok(TrainBatch {
        input: Tensor::from_vec([n, channels, s, s], input),
        global: (cfg.variant == Variant::Global).then(|| Tensor::from_vec([n, q + 3, 1, 1], global)),
        target_ab,
        target_dist: (cfg.variant == Variant::Local).then_some(target_dist),
    })
}

/// Brings every image to the working scale; images still smaller than the
/// crop are scaled up to it.
pub fn prepare_training_images(images: Vec<RgbImage>, cfg: &TrainConfig) -> Result<Vec<RgbImage>> {
    if images.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let crop = cfg.image_size as u32;
    Ok(images
        .into_iter()
        .map(|img| {
            let short = img.width().min(img.height());
            match cfg.source_short_side as u32 {
                0 if short >= crop => img,
                0 => resize_short_side(&img, crop),
                target => resize_short_side(&img, target),
            }
        })
        .collect())
}

fn checkpoint_name(step: usize) -> String {
    format!("ckpt-{step:06}.bin")
}

pub const FINAL_CHECKPOINT: &str = "model.bin";

/// Trains on already decoded images (scaled by [`prepare_training_images`]).
pub fn train(images: &[RgbImage], gamut: &QuantizedGamut, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.network.q != gamut.q() {
        return Err(Error::ModelMismatch(format!("network predicts {} bins, gamut has {}", cfg.network.q, gamut.q())));
    }
    if images.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    if let Some(small) = images.iter().find(|i| (i.width().min(i.height()) as usize) < cfg.image_size) {
        return Err(Error::Dataset(format!("training image {}x{} is smaller than the crop size {}", small.width(), small.height(), cfg.image_size)));
    }
    let (mut net, mut opt, start) = match &opts.resume {
        Some(path) => {
            let (net, manifest, opt) = load_checkpoint(path)?;
            if net.config != cfg.network_config() {
                return Err(Error::Checkpoint("checkpoint network config differs from the training config".into()));
            }
            if manifest.gamut_hash != gamut.hash() {
                return Err(Error::ModelMismatch("checkpoint was trained with a different gamut".into()));
            }
            let opt = opt.ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume from".into()))?;
            (net, opt, manifest.step)
        }
        None => {
            let net = Network::new(cfg.network_config(), cfg.seed)?;
            let opt = Adam::new(AdamConfig::default(), &net.store);
            (net, opt, 0)
        }
    };
    let train_meta = serde_json::json!({ "config": cfg, "dataset_hash": opts.dataset_hash });
    let save = |net: &Network, opt: &Adam, step: usize, name: &str| -> Result<Option<PathBuf>> {
        match &opts.out_dir {
            None => Ok(None),
            Some(dir) => {
                let path = dir.join(name);
                save_checkpoint(&path, net, &gamut.hash(), step, Some(opt), Some(train_meta.clone()))?;
                Ok(Some(path))
            }
        }
    };
    let weights = LossWeights { main: 1.0, side: cfg.side_branch_weight };
    let ab_values = (cfg.batch_size * 2 * cfg.image_size * cfg.image_size) as f64;
    let dist_pixels = (cfg.batch_size * (cfg.image_size / 4).pow(2)) as f64;
    let mut trace = Vec::with_capacity(cfg.steps.saturating_sub(start));
    let mut last_good = opts.resume.clone();
    for step in start..cfg.steps {
        let mut rng = step_rng(cfg.seed, step);
        let batch = make_batch(images, gamut, cfg, &mut rng)?;
        net.store.zero_grad();
        let loss = net.accumulate_gradients(&batch, &cfg.loss, &weights)?;
        let total = loss.huber + cfg.side_branch_weight * loss.cross_entropy;
        let grads_finite = net.store.iter().all(|p| p.grad.iter().all(|g| g.is_finite()));
        if !total.is_finite() || !grads_finite {
            return Err(Error::Diverged { step, loss: total, last_good });
        }
        let lr = cfg.lr_at(step);
        opt.step(&mut net.store, lr as f32);
        let log = StepLog { step, huber: loss.huber / ab_values, cross_entropy: loss.cross_entropy / dist_pixels, lr };
        if opts.log_every > 0 && (step % opts.log_every == 0 || step + 1 == cfg.steps) {
            log::info!("step {step}: huber {:.4} ce {:.4} lr {:.2e}", log.huber, log.cross_entropy, lr);
        }
        trace.push(log);
        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
            last_good = save(&net, &opt, done, &checkpoint_name(done))?.or(last_good);
        }
    }
    let checkpoint = save(&net, &opt, cfg.steps.max(start), FINAL_CHECKPOINT)?;
    if let Some(dir) = &opts.out_dir {
        let mut csv = String::from("step,huber,cross_entropy,lr\n");
        for l in &trace {
            csv.push_str(&format!("{},{:.6},{:.6},{:.6e}\n", l.step, l.huber, l.cross_entropy, l.lr));
        }
        let name = if start == 0 { "losses.csv".to_string() } else { format!("losses-from-{start:06}.csv") };
        std::fs::write(dir.join(name), csv)?;
    }
    Ok(TrainOutcome { network: net, trace, checkpoint })
}

/// Loads the training split of `manifest` and trains on it.
pub fn train_from_manifest(manifest: &DatasetManifest, gamut: &QuantizedGamut, cfg: &TrainConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let (images, failed) = load_split(manifest, Split::Train);
    if !failed.is_empty() {
        log::warn!("{} training images could not be read", failed.len());
    }
    let images = prepare_training_images(images.into_iter().map(|(_, img)| img).collect(), cfg)?;
    let opts = TrainOptions { dataset_hash: opts.dataset_hash.clone().or_else(|| Some(manifest.content_hash.clone())), ..opts.clone() };
    train(&images, gamut, cfg, &opts)
}

/// Reads a training config from TOML or JSON, chosen by file extension.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: TrainConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
    };
    cfg.validate()?;
    Ok(cfg)
}
