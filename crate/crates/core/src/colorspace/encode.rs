//! Soft-encoding of ab colors onto the quantized gamut, and the inverse
//! expectation decode.

use serde::{Deserialize, Serialize};

use super::{AbImage, QuantizedGamut};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftEncodeConfig {
    pub sigma: f64,
    pub neighbors: usize,
}

impl Default for SoftEncodeConfig {
    fn default() -> Self {
        Self { sigma: 5.0, neighbors: 10 }
    }
}

impl SoftEncodeConfig {
    pub fn validate(&self, q: usize) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.neighbors == 0 || self.neighbors > q {
            return Err(Error::InvalidConfig(format!("neighbors must be in [1, {q}], got {}", self.neighbors)));
        }
        Ok(())
    }
}

/// Per-pixel probability vectors over the `q` gamut bins, row-major with the
/// bin index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorDistribution {
    pub height: usize,
    pub width: usize,
    pub q: usize,
    pub probs: Vec<f32>,
}

impl ColorDistribution {
    pub fn zeros(height: usize, width: usize, q: usize) -> Self {
        Self { height, width, q, probs: vec![0.0; height * width * q] }
    }

    #[inline]
    pub fn row(&self, r: usize, c: usize) -> &[f32] {
        let start = (r * self.width + c) * self.q;
        &self.probs[start..start + self.q]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize, c: usize) -> &mut [f32] {
        let start = (r * self.width + c) * self.q;
        &mut self.probs[start..start + self.q]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.probs.chunks_exact(self.q)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Sparse soft-encoding of one color: `(bin index, weight)` pairs for the
/// `cfg.neighbors` nearest bins, weights summing to one.
pub fn soft_encode_color(ab: [f64; 2], gamut: &QuantizedGamut, cfg: &SoftEncodeConfig) -> Vec<(usize, f64)> {
    let mut dist: Vec<(f64, usize)> = gamut
        .bins()
        .iter()
        .enumerate()
        .map(|(i, c)| ((c[0] - ab[0]).powi(2) + (c[1] - ab[1]).powi(2), i))
        .collect();
    let k = cfg.neighbors.min(dist.len());
    let by_dist = |x: &(f64, usize), y: &(f64, usize)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by_dist);
        dist.truncate(k);
    }
    dist.sort_unstable_by(by_dist);
    let denom = 2.0 * cfg.sigma * cfg.sigma;
    // Shift by the nearest distance so far-away colors do not underflow.
    let d0 = dist[0].0;
    let mut out: Vec<(usize, f64)> = dist.iter().map(|&(d, i)| (i, (-(d - d0) / denom).exp())).collect();
    let total: f64 = out.iter().map(|p| p.1).sum();
    for p in &mut out {
        p.1 /= total;
    }
    out
}

pub fn soft_encode(ab: &AbImage, gamut: &QuantizedGamut, cfg: &SoftEncodeConfig) -> Result<ColorDistribution> {
    cfg.validate(gamut.q())?;
    let mut dist = ColorDistribution::zeros(ab.height, ab.width, gamut.q());
    for (i, &[a, b]) in ab.ab.iter().enumerate() {
        let row = &mut dist.probs[i * gamut.q()..(i + 1) * gamut.q()];
        for (bin, w) in soft_encode_color([a as f64, b as f64], gamut, cfg) {
            row[bin] = w as f32;
        }
    }
    Ok(dist)
}

/// Probability-weighted mean of the bin centers at each pixel.
pub fn decode_expectation(dist: &ColorDistribution, gamut: &QuantizedGamut) -> Result<AbImage> {
    if dist.q != gamut.q() {
        return Err(Error::ModelMismatch(format!("distribution has {} bins, gamut has {}", dist.q, gamut.q())));
    }
    let ab = dist
        .rows()
        .map(|row| {
            let mut acc = [0f64; 2];
            for (p, c) in row.iter().zip(gamut.bins()) {
                acc[0] += *p as f64 * c[0];
                acc[1] += *p as f64 * c[1];
            }
            [acc[0] as f32, acc[1] as f32]
        })
        .collect();
    Ok(AbImage { height: dist.height, width: dist.width, ab })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamut() -> QuantizedGamut {
        QuantizedGamut::reference()
    }

    fn bin_of(g: &QuantizedGamut, c: [f64; 2]) -> usize {
        g.bins().iter().position(|b| *b == c).unwrap()
    }

    #[test]
    fn center_to_neighbor_ratio() {
        let g = gamut();
        let enc = soft_encode_color([0.0, 0.0], &g, &SoftEncodeConfig::default());
        assert_eq!(enc.len(), 10);
        let w = |c| enc.iter().find(|p| p.0 == bin_of(&g, c)).unwrap().1;
        let ratio = w([0.0, 0.0]) / w([10.0, 0.0]);
        assert!((ratio - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_and_midpoint_decode() {
        let g = gamut();
        let mut d = ColorDistribution::zeros(1, 2, g.q());
        d.row_mut(0, 0)[bin_of(&g, [10.0, -20.0])] = 1.0;
        d.row_mut(0, 1)[bin_of(&g, [0.0, 0.0])] = 0.5;
        d.row_mut(0, 1)[bin_of(&g, [10.0, 0.0])] = 0.5;
        let ab = decode_expectation(&d, &g).unwrap();
        assert_eq!(ab.ab[0], [10.0, -20.0]);
        assert_eq!(ab.ab[1], [5.0, 0.0]);
    }

    #[test]
    fn srgb_colors_survive_encode_decode() {
        let g = gamut();
        let cfg = SoftEncodeConfig::default();
        for r in (0..=255u8).step_by(15) {
            for gr in (0..=255u8).step_by(15) {
                for b in (0..=255u8).step_by(15) {
                    let lab = crate::colorspace::srgb8_to_lab([r, gr, b]);
                    let (mut a, mut bb) = (0.0, 0.0);
                    for (bin, w) in soft_encode_color([lab[1], lab[2]], &g, &cfg) {
                        a += w * g.bins()[bin][0];
                        bb += w * g.bins()[bin][1];
                    }
                    let err = (a - lab[1]).hypot(bb - lab[2]);
                    assert!(err <= 5.0, "rgb ({r}, {gr}, {b}): error {err}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let g = gamut();
        let ab = AbImage::zeros(1, 1);
        assert!(soft_encode(&ab, &g, &SoftEncodeConfig { sigma: 0.0, neighbors: 10 }).is_err());
        assert!(soft_encode(&ab, &g, &SoftEncodeConfig { sigma: 5.0, neighbors: 0 }).is_err());
        assert!(soft_encode(&ab, &g, &SoftEncodeConfig { sigma: 5.0, neighbors: 314 }).is_err());
    }

    #[test]
    fn interior_centers_share_weight_pattern() {
        let g = gamut();
        let cfg = SoftEncodeConfig::default();
        let pattern = |c: [f64; 2]| {
            let mut w: Vec<f64> = soft_encode_color(c, &g, &cfg).into_iter().map(|p| p.1).collect();
            w.sort_by(|a, b| b.total_cmp(a));
            w
        };
        let base = pattern([0.0, 0.0]);
        for c in [[20.0, 30.0], [-40.0, 10.0], [10.0, -50.0]] {
            for (x, y) in base.iter().zip(pattern(c)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
