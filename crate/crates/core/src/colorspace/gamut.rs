//! Quantization of the ab plane into grid bins and the in-gamut subset.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{linear_rgb_to_lab, srgb_decode_table};
use crate::error::{Error, Result};

pub const GAMUT_FORMAT: &str = "gamut-v1";

const REFERENCE_MASK: &str = include_str!("../../assets/gamut_ref_v1.json");

/// How the sRGB cube is sampled when deciding which bins are in gamut.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GamutSampling {
    /// Step between sampled 8-bit channel values; 255 is always included.
    pub stride: u8,
    /// A bin is kept when some sampled color lies within this Chebyshev
    /// distance (ab units) of its center.
    pub capture_radius: f64,
}

impl GamutSampling {
    pub fn for_grid(grid_step: f64) -> Self {
        Self { stride: 4, capture_radius: grid_step }
    }

    /// Full-cube sampling used to produce the shipped reference mask.
    pub fn reference() -> Self {
        Self { stride: 1, capture_radius: 11.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGamut {
    pub grid_step: f64,
    pub ab_min: f64,
    pub ab_max: f64,
    /// Every candidate center on the grid, `a`-major.
    pub candidates: Vec<[f64; 2]>,
    pub in_gamut_mask: Vec<bool>,
    /// Centers of the in-gamut bins, in candidate order.
    bins: Vec<[f64; 2]>,
}

/// On-disk representation (`gamut-v1`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GamutFile {
    pub format: String,
    pub grid_step: f64,
    pub ab_min: f64,
    pub ab_max: f64,
    pub centers: Vec<[f64; 2]>,
    pub mask: Vec<u8>,
    #[serde(rename = "Q")]
    pub q: usize,
}

fn candidate_axis(grid_step: f64, ab_min: f64, ab_max: f64) -> Result<Vec<f64>> {
    if !(grid_step > 0.0) || !(ab_max > ab_min) {
        return Err(Error::InvalidConfig(format!("bad gamut grid: step {grid_step}, range [{ab_min}, {ab_max})")));
    }
    let cells = (ab_max - ab_min) / grid_step;
    if (cells - cells.round()).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("grid step {grid_step} does not divide [{ab_min}, {ab_max})")));
    }
    Ok((0..cells.round() as usize).map(|i| ab_min + i as f64 * grid_step).collect())
}

/// Default construction: stride-4 cube sampling, one-step capture radius.
pub fn build_gamut(grid_step: f64, ab_min: f64, ab_max: f64) -> Result<QuantizedGamut> {
    QuantizedGamut::build(grid_step, ab_min, ab_max, GamutSampling::for_grid(grid_step))
}

impl QuantizedGamut {
    pub fn build(grid_step: f64, ab_min: f64, ab_max: f64, sampling: GamutSampling) -> Result<Self> {
        let axis = candidate_axis(grid_step, ab_min, ab_max)?;
        let n = axis.len();
        let mut mask = vec![false; n * n];
        let stride = sampling.stride.max(1) as usize;
        let mut levels: Vec<usize> = (0..256).step_by(stride).collect();
        if *levels.last().unwrap() != 255 {
            levels.push(255);
        }
        let table = srgb_decode_table();
        let radius = sampling.capture_radius;
        let index_range = |v: f64| {
            let lo = ((v - radius - ab_min) / grid_step).ceil().max(0.0) as usize;
            let hi = ((v + radius - ab_min) / grid_step).floor();
            if hi < 0.0 {
                return lo..lo;
            }
            lo..(hi as usize + 1).min(n)
        };
        for &r in &levels {
            for &g in &levels {
                for &b in &levels {
                    let lab = linear_rgb_to_lab([table[r], table[g], table[b]]);
                    for i in index_range(lab[1]) {
                        for j in index_range(lab[2]) {
                            mask[i * n + j] = true;
                        }
                    }
                }
            }
        }
        let candidates = axis.iter().flat_map(|&a| axis.iter().map(move |&b| [a, b])).collect();
        Ok(Self::from_parts(grid_step, ab_min, ab_max, candidates, mask))
    }

    fn from_parts(grid_step: f64, ab_min: f64, ab_max: f64, candidates: Vec<[f64; 2]>, in_gamut_mask: Vec<bool>) -> Self {
        let bins = candidates.iter().zip(&in_gamut_mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
        Self { grid_step, ab_min, ab_max, candidates, in_gamut_mask, bins }
    }

    /// The pinned 313-bin reference mask shipped with the crate.
    pub fn reference() -> Self {
        let file: GamutFile = serde_json::from_str(REFERENCE_MASK).expect("embedded gamut file parses");
        Self::from_file(file).expect("embedded gamut file is valid")
    }

    pub fn q(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[[f64; 2]] {
        &self.bins
    }

    pub fn to_file(&self) -> GamutFile {
        GamutFile {
            format: GAMUT_FORMAT.to_string(),
            grid_step: self.grid_step,
            ab_min: self.ab_min,
            ab_max: self.ab_max,
            centers: self.candidates.clone(),
            mask: self.in_gamut_mask.iter().map(|&m| m as u8).collect(),
            q: self.q(),
        }
    }

    pub fn from_file(file: GamutFile) -> Result<Self> {
        if file.format != GAMUT_FORMAT {
            return Err(Error::Format(format!("unknown gamut format tag {:?}", file.format)));
        }
        let axis = candidate_axis(file.grid_step, file.ab_min, file.ab_max)?;
        if file.centers.len() != axis.len() * axis.len() || file.mask.len() != file.centers.len() {
            return Err(Error::Format("gamut centers/mask length does not match the grid".into()));
        }
        if file.mask.iter().any(|&m| m > 1) {
            return Err(Error::Format("gamut mask must be 0/1".into()));
        }
        let mask: Vec<bool> = file.mask.iter().map(|&m| m == 1).collect();
        let q = mask.iter().filter(|&&m| m).count();
        if q != file.q {
            return Err(Error::Format(format!("gamut Q field {} disagrees with mask count {q}", file.q)));
        }
        Ok(Self::from_parts(file.grid_step, file.ab_min, file.ab_max, file.centers, mask))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("gamut serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    /// Short content hash identifying this gamut in checkpoints.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.grid_step.to_le_bytes());
        h.update(self.ab_min.to_le_bytes());
        h.update(self.ab_max.to_le_bytes());
        for &m in &self.in_gamut_mask {
            h.update([m as u8]);
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Index of the in-gamut bin nearest to `ab`.
    pub fn nearest_bin(&self, ab: [f64; 2]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, c) in self.bins.iter().enumerate() {
            let d = (c[0] - ab[0]).powi(2) + (c[1] - ab[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}
