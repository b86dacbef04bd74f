//! Held-out evaluation under the four hint modes.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::bench::{mean_stderr, psnr};
use crate::colorspace::{lab_to_rgb, rgb_to_lab, QuantizedGamut};
use crate::error::{Error, Result};
use crate::hints::{compute_global_hints, GlobalHints, LocalHints};
use crate::model::{Network, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// No hints.
    Auto,
    /// Every pixel's true color revealed (local model).
    GtColors,
    /// True ab histogram revealed (global model).
    GlobalHist,
    /// True mean saturation revealed (global model).
    GlobalSat,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [EvalMode::Auto, EvalMode::GtColors, EvalMode::GlobalHist, EvalMode::GlobalSat];

    pub fn supports(self, variant: Variant) -> bool {
        match self {
            EvalMode::Auto => true,
            EvalMode::GtColors => variant == Variant::Local,
            EvalMode::GlobalHist | EvalMode::GlobalSat => variant == Variant::Global,
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Auto => "auto",
            EvalMode::GtColors => "gt-colors",
            EvalMode::GlobalHist => "global-hist",
            EvalMode::GlobalSat => "global-sat",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown eval mode {s:?} (expected auto, gt-colors, global-hist, or global-sat)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: EvalMode,
    pub variant: Variant,
    pub psnr_mean: f64,
    pub psnr_stderr: f64,
    pub images: usize,
    pub per_image: Vec<f64>,
}

/// PSNR of `net` under `mode` on each image, compared with the image's own
/// Lab round trip.
pub fn evaluate(images: &[RgbImage], net: &Network, gamut: &QuantizedGamut, mode: EvalMode) -> Result<EvalSummary> {
    let variant = net.variant();
    if !mode.supports(variant) {
        return Err(Error::ModelMismatch(format!("mode {mode} is not available for a {variant} model")));
    }
    if images.is_empty() {
        return Err(Error::Dataset("evaluation split is empty".into()));
    }
    let mut per_image = Vec::with_capacity(images.len());
    for rgb in images {
        let (gray, target) = rgb_to_lab(rgb)?;
        let pred = match (variant, mode) {
            (Variant::Local, EvalMode::Auto) => net.forward_local(&gray, &LocalHints::empty(gray.height, gray.width))?,
            (Variant::Local, _) => net.forward_local(&gray, &LocalHints::full(&target))?,
            (Variant::Global, EvalMode::Auto) => net.forward_global(&gray, &GlobalHints::none(gamut.q()))?,
            (Variant::Global, m) => net.forward_global(&gray, &compute_global_hints(rgb, gamut, m == EvalMode::GlobalHist, m == EvalMode::GlobalSat)?)?,
        };
        per_image.push(psnr(&lab_to_rgb(&gray, &target)?, &lab_to_rgb(&gray, &pred)?)?);
    }
    let (psnr_mean, psnr_stderr) = mean_stderr(&per_image);
    Ok(EvalSummary { mode, variant, psnr_mean, psnr_stderr, images: images.len(), per_image })
}
