//! Discrete color suggestions from a predicted per-pixel distribution, and
//! the lightness-conditioned ab gamut shown in the picker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{lab_to_linear_rgb, lab_to_srgb8, srgb8_to_lab, ColorDistribution, QuantizedGamut, AB_LIMIT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaletteConfig {
    pub k: usize,
    /// Probabilities are raised to this power and renormalized.
    pub temperature: f64,
    pub merge_radius: f64,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for PaletteConfig {
    fn default() -> Self {
        Self { k: 9, temperature: 0.5, merge_radius: 10.0, kmeans_restarts: 4, seed: 0 }
    }
}

impl PaletteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("palette K must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature <= 1.0) {
            return Err(Error::InvalidConfig(format!("temperature must be in (0, 1], got {}", self.temperature)));
        }
        if !(self.merge_radius >= 0.0) {
            return Err(Error::InvalidConfig("merge_radius must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One swatch, serialized as `{a, b, weight, rgb_hex}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub a: f64,
    pub b: f64,
    pub weight: f64,
    /// Preview of the swatch at the query pixel's lightness.
    pub rgb_hex: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PaletteSuggestion {
    pub entries: Vec<PaletteEntry>,
}

fn dist2(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
}

pub fn rgb_hex(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

/// Whether `ab` at lightness `l` is a displayable sRGB color: unclipped
/// linear RGB in `[0, 1]` and an 8-bit round trip within 2 ab units.
pub fn ab_valid_at(l: f64, ab: [f64; 2]) -> bool {
    const TOL: f64 = 1e-9;
    let rgb = lab_to_linear_rgb([l, ab[0], ab[1]]);
    if rgb.iter().any(|&c| !(-TOL..=1.0 + TOL).contains(&c)) {
        return false;
    }
    let back = srgb8_to_lab(lab_to_srgb8([l, ab[0], ab[1]]));
    dist2([back[1], back[2]], ab) <= 4.0
}

/// Valid ab pairs at lightness `l` on a `samples_per_axis²` grid over
/// `[-110, 110]²` (221 samples gives one-unit spacing).
pub fn gamut_slice(l: f64, samples_per_axis: usize) -> Vec<[f64; 2]> {
    let l = l.clamp(0.0, 100.0);
    let n = samples_per_axis.max(2);
    let lim = AB_LIMIT as f64;
    let step = 2.0 * lim / (n - 1) as f64;
    let mut out = Vec::new();
    for i in 0..n {
        let a = -lim + i as f64 * step;
        for j in 0..n {
            let b = -lim + j as f64 * step;
            if ab_valid_at(l, [a, b]) {
                out.push([a, b]);
            }
        }
    }
    out
}

fn nearest_valid(l: f64, ab: [f64; 2], slice: &[[f64; 2]]) -> [f64; 2] {
    if ab_valid_at(l, ab) || slice.is_empty() {
        return ab;
    }
    *slice.iter().min_by(|p, q| dist2(**p, ab).total_cmp(&dist2(**q, ab))).unwrap()
}

struct Clustering {
    centers: Vec<[f64; 2]>,
    mass: Vec<f64>,
    distortion: f64,
}

fn lloyd(points: &[[f64; 2]], weights: &[f64], mut centers: Vec<[f64; 2]>) -> Clustering {
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..centers.len()).min_by(|&x, &y| dist2(*p, centers[x]).total_cmp(&dist2(*p, centers[y]))).unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sum = vec![[0f64; 2]; centers.len()];
        let mut mass = vec![0f64; centers.len()];
        for ((p, &w), &c) in points.iter().zip(weights).zip(&assign) {
            sum[c][0] += w * p[0];
            sum[c][1] += w * p[1];
            mass[c] += w;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            if mass[c] > 0.0 {
                *center = [sum[c][0] / mass[c], sum[c][1] / mass[c]];
            }
        }
        if !changed {
            break;
        }
    }
    let mut mass = vec![0f64; centers.len()];
    let mut distortion = 0.0;
    for ((p, &w), &c) in points.iter().zip(weights).zip(&assign) {
        mass[c] += w;
        distortion += w * dist2(*p, centers[c]);
    }
    Clustering { centers, mass, distortion }
}

/// Farthest-point seeding over the heaviest bins, starting from the argmax.
fn farthest_point_seeds(points: &[[f64; 2]], weights: &[f64], k: usize) -> Vec<[f64; 2]> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    order.truncate((4 * k).max(k).min(points.len()));
    let mut seeds = vec![points[order[0]]];
    while seeds.len() < k {
        let next = order
            .iter()
            .map(|&i| (i, seeds.iter().map(|s| dist2(points[i], *s)).fold(f64::INFINITY, f64::min)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        if next.1 == 0.0 {
            break;
        }
        seeds.push(points[next.0]);
    }
    seeds
}

fn plus_plus_seeds(points: &[[f64; 2]], weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let pick = |scores: &[f64], rng: &mut ChaCha8Rng| {
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        for (i, &s) in scores.iter().enumerate() {
            if u < s {
                return Some(i);
            }
            u -= s;
        }
        scores.iter().rposition(|&s| s > 0.0)
    };
    let mut seeds = vec![points[pick(weights, rng).unwrap()]];
    while seeds.len() < k {
        let scores: Vec<f64> = points
            .iter()
            .zip(weights)
            .map(|(p, w)| w * seeds.iter().map(|s| dist2(*p, *s)).fold(f64::INFINITY, f64::min))
            .collect();
        match pick(&scores, rng) {
            Some(i) => seeds.push(points[i]),
            None => break,
        }
    }
    seeds
}

/// Merges the closest pair of clusters while it is within `radius`.
fn merge_close(centers: &mut Vec<[f64; 2]>, mass: &mut Vec<f64>, radius: f64) {
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                let d = dist2(centers[i], centers[j]);
                if d < radius * radius && best.is_none_or(|b| d < b.2) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((i, j, _)) = best else { return };
        let m = mass[i] + mass[j];
        centers[i] = [(centers[i][0] * mass[i] + centers[j][0] * mass[j]) / m, (centers[i][1] * mass[i] + centers[j][1] * mass[j]) / m];
        mass[i] = m;
        centers.remove(j);
        mass.remove(j);
    }
}

/// Quarter-resolution cell for a full-resolution pixel.
pub fn distribution_cell(dist: &ColorDistribution, row: usize, col: usize) -> (usize, usize) {
    ((row / 4).min(dist.height - 1), (col / 4).min(dist.width - 1))
}

/// Ranked swatches for the full-resolution pixel `(row, col)` with lightness
/// `l_at_pixel`.
pub fn suggest_colors(
    dist: &ColorDistribution,
    row: usize,
    col: usize,
    l_at_pixel: f64,
    gamut: &QuantizedGamut,
    cfg: &PaletteConfig,
) -> Result<PaletteSuggestion> {
    cfg.validate()?;
    if dist.q != gamut.q() {
        return Err(Error::ModelMismatch(format!("distribution has {} bins, gamut has {}", dist.q, gamut.q())));
    }
    let (r, c) = distribution_cell(dist, row, col);
    let probs = dist.row(r, c);
    let total: f64 = probs.iter().map(|&p| p as f64).sum();
    if !(total > 0.0) || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::EmptyDistribution { row: r, col: c });
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (p, center) in probs.iter().zip(gamut.bins()) {
        if *p > 0.0 {
            points.push(*center);
            weights.push((*p as f64 / total).powf(cfg.temperature));
        }
    }
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= wsum);
    let k = cfg.k.min(points.len());

    let mut best = lloyd(&points, &weights, farthest_point_seeds(&points, &weights, k));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.kmeans_restarts {
        let run = lloyd(&points, &weights, plus_plus_seeds(&points, &weights, k, &mut rng));
        if run.distortion < best.distortion - 1e-12 {
            best = run;
        }
    }
    let (mut centers, mut mass): (Vec<_>, Vec<_>) = best.centers.into_iter().zip(best.mass).filter(|(_, m)| *m > 0.0).unzip();
    merge_close(&mut centers, &mut mass, cfg.merge_radius);

    let l = l_at_pixel.clamp(0.0, 100.0);
    let needs_slice = centers.iter().any(|c| !ab_valid_at(l, *c));
    let slice = if needs_slice { gamut_slice(l, 221) } else { Vec::new() };
    let msum: f64 = mass.iter().sum();
    let mut entries: Vec<PaletteEntry> = centers
        .into_iter()
        .zip(mass)
        .map(|(center, m)| {
            let [a, b] = nearest_valid(l, center, &slice);
            PaletteEntry { a, b, weight: m / msum, rgb_hex: rgb_hex(lab_to_srgb8([l, a, b])) }
        })
        .collect();
    entries.sort_by(|x, y| y.weight.total_cmp(&x.weight).then((x.a.hypot(x.b)).total_cmp(&y.a.hypot(y.b))));
    Ok(PaletteSuggestion { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cell(gamut: &QuantizedGamut, mass: &[([f64; 2], f32)]) -> ColorDistribution {
        let mut d = ColorDistribution::zeros(1, 1, gamut.q());
        for (c, p) in mass {
            let i = gamut.bins().iter().position(|b| b == c).unwrap();
            d.probs[i] = *p;
        }
        d
    }

    #[test]
    fn one_hot_gives_single_swatch() {
        let g = QuantizedGamut::reference();
        let d = one_cell(&g, &[([20.0, 30.0], 1.0)]);
        let s = suggest_colors(&d, 0, 0, 60.0, &g, &PaletteConfig::default()).unwrap();
        assert_eq!(s.entries.len(), 1);
        assert_eq!((s.entries[0].a, s.entries[0].b, s.entries[0].weight), (20.0, 30.0, 1.0));
    }

    #[test]
    fn bimodal_split_evenly() {
        let g = QuantizedGamut::reference();
        let d = one_cell(&g, &[([40.0, 0.0], 0.5), ([-40.0, 0.0], 0.5)]);
        let cfg = PaletteConfig { k: 2, ..PaletteConfig::default() };
        assert!(ab_valid_at(65.0, [40.0, 0.0]) && ab_valid_at(65.0, [-40.0, 0.0]));
        let s = suggest_colors(&d, 0, 0, 65.0, &g, &cfg).unwrap();
        assert_eq!(s.entries.len(), 2);
        for e in &s.entries {
            assert!((e.weight - 0.5).abs() < 1e-3);
            assert!(dist2([e.a, e.b], [40.0, 0.0]).min(dist2([e.a, e.b], [-40.0, 0.0])) < 1.0);
        }
    }

    #[test]
    fn out_of_gamut_swatch_projected() {
        let g = QuantizedGamut::reference();
        let d = one_cell(&g, &[([0.0, -60.0], 1.0)]);
        assert!(!ab_valid_at(60.0, [0.0, -60.0]));
        let s = suggest_colors(&d, 0, 0, 60.0, &g, &PaletteConfig::default()).unwrap();
        let e = &s.entries[0];
        assert!(ab_valid_at(60.0, [e.a, e.b]));
        assert!(dist2([e.a, e.b], [0.0, -60.0]) < 100.0);
    }

    #[test]
    fn empty_row_rejected() {
        let g = QuantizedGamut::reference();
        let d = ColorDistribution::zeros(2, 2, g.q());
        assert!(matches!(suggest_colors(&d, 5, 5, 50.0, &g, &PaletteConfig::default()), Err(Error::EmptyDistribution { row: 1, col: 1 })));
    }

    #[test]
    fn slice_extremes() {
        let dark = gamut_slice(0.0, 221);
        assert!(!dark.is_empty());
        assert!(dark.iter().all(|p| p[0].abs().max(p[1].abs()) < 5.0));
        let mid = gamut_slice(50.0, 221);
        assert!(mid.iter().any(|p| p[0] > 40.0) && mid.iter().any(|p| p[0] < -40.0));
    }

    #[test]
    fn suggestion_json_shape() {
        let s = PaletteSuggestion { entries: vec![PaletteEntry { a: 1.0, b: 2.0, weight: 1.0, rgb_hex: "#000000".into() }] };
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v, serde_json::json!([{"a": 1.0, "b": 2.0, "weight": 1.0, "rgb_hex": "#000000"}]));
    }
}
