//! Optimization-based edit propagation: each unconstrained pixel's ab is the
//! luminance-weighted average of its neighbors, revealed pixels are fixed.

use serde::{Deserialize, Serialize};

use crate::colorspace::{AbImage, GrayImage};
use crate::error::{check_dims, Error, Result};
use crate::hints::LocalHints;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevinConfig {
    pub window_radius: usize,
    /// Lower bound on the local variance of `L / 100`.
    pub variance_floor: f64,
    /// Relative residual `‖b − Ax‖ / ‖b‖` at which the solve stops.
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for LevinConfig {
    fn default() -> Self {
        Self { window_radius: 1, variance_floor: 1e-4, solver_tol: 1e-6, max_iter: 20_000 }
    }
}

impl LevinConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius < 1 {
            return Err(Error::InvalidConfig("window_radius must be at least 1".into()));
        }
        if !(self.variance_floor > 0.0 && self.solver_tol > 0.0) {
            return Err(Error::InvalidConfig("variance_floor and solver_tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Row-normalized neighbor weights, `stride` slots per pixel; unused slots
/// hold weight 0 and point at the pixel itself.
pub struct Affinity {
    pub stride: usize,
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

impl Affinity {
    pub fn new(gray: &GrayImage, cfg: &LevinConfig) -> Self {
        let (h, w) = gray.dims();
        let rad = cfg.window_radius as isize;
        let stride = ((2 * rad + 1) * (2 * rad + 1) - 1) as usize;
        let mut index = Vec::with_capacity(h * w * stride);
        let mut weight = Vec::with_capacity(h * w * stride);
        let lum = |i: usize| gray.l[i] as f64 / 100.0;
        for r in 0..h as isize {
            for c in 0..w as isize {
                let me = (r as usize) * w + c as usize;
                let start = index.len();
                let (mut sum, mut sq, mut n) = (lum(me), lum(me).powi(2), 1.0);
                for dr in -rad..=rad {
                    for dc in -rad..=rad {
                        let (rr, cc) = (r + dr, c + dc);
                        if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        let s = rr as usize * w + cc as usize;
                        sum += lum(s);
                        sq += lum(s).powi(2);
                        n += 1.0;
                        index.push(s);
                    }
                }
                let mean = sum / n;
                let var = (sq / n - mean * mean).max(cfg.variance_floor);
                weight.extend(index[start..].iter().map(|&s| (-(lum(s) - lum(me)).powi(2) / (2.0 * var)).exp()));
                let total: f64 = weight[start..].iter().sum();
                if total > 0.0 {
                    weight[start..].iter_mut().for_each(|v| *v /= total);
                } else {
                    let k = (index.len() - start) as f64;
                    weight[start..].iter_mut().for_each(|v| *v = 1.0 / k);
                }
                index.resize(start + stride, me);
                weight.resize(start + stride, 0.0);
            }
        }
        Self { stride, index, weight }
    }

    /// `c(r) − Σ_s w_rs c(s)` at pixel `r`.
    fn defect(&self, r: usize, c: &[f64]) -> f64 {
        let base = r * self.stride;
        c[r] - (0..self.stride).map(|k| self.weight[base + k] * c[self.index[base + k]]).sum::<f64>()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Restricted operator on free pixels; constrained entries stay zero.
fn apply(aff: &Affinity, free: &[bool], x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = if free[r] { aff.defect(r, x) } else { 0.0 };
    }
}

/// BiCGSTAB on the free rows. The operator's diagonal is identically one
/// (a pixel is not its own neighbor), so Jacobi scaling is the identity and
/// is omitted.
fn bicgstab(aff: &Affinity, free: &[bool], b: &[f64], cfg: &LevinConfig) -> Result<Vec<f64>> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut rel = 1.0;
    for _ in 0..cfg.max_iter {
        let mut rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            r_hat.copy_from_slice(&r);
            rho_new = dot(&r_hat, &r);
            p.fill(0.0);
            v.fill(0.0);
            (rho, alpha, omega) = (1.0, 1.0, 1.0);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        apply(aff, free, &p, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        rel = dot(&s, &s).sqrt() / bnorm;
        if rel <= cfg.solver_tol {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok(x);
        }
        apply(aff, free, &s, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= cfg.solver_tol {
            return Ok(x);
        }
        if !rel.is_finite() || omega == 0.0 {
            break;
        }
    }
    Err(Error::NoConvergence { iterations: cfg.max_iter, residual: rel })
}

fn solve_channel(aff: &Affinity, hints: &LocalHints, ch: usize, cfg: &LevinConfig) -> Result<Vec<f64>> {
    let n = hints.mask.len();
    let free: Vec<bool> = hints.mask.iter().map(|&m| m == 0).collect();
    let fixed: Vec<f64> = (0..n).map(|i| if free[i] { 0.0 } else { hints.ab[i][ch] as f64 }).collect();
    // Right-hand side: constrained neighbors moved across.
    let b: Vec<f64> = (0..n).map(|r| if free[r] { fixed[r] - aff.defect(r, &fixed) } else { 0.0 }).collect();
    let x = bicgstab(aff, &free, &b, cfg)?;
    Ok((0..n).map(|i| if free[i] { x[i] } else { fixed[i] }).collect())
}

/// Full-precision solution, row-major.
pub fn propagate_edits_f64(gray: &GrayImage, hints: &LocalHints, cfg: &LevinConfig) -> Result<Vec<[f64; 2]>> {
    cfg.validate()?;
    check_dims(gray.dims(), hints.dims())?;
    if hints.revealed() == 0 {
        return Ok(vec![[0.0, 0.0]; hints.mask.len()]);
    }
    let aff = Affinity::new(gray, cfg);
    let (a, b) = rayon::join(|| solve_channel(&aff, hints, 0, cfg), || solve_channel(&aff, hints, 1, cfg));
    let (a, b) = (a?, b?);
    Ok(a.into_iter().zip(b).map(|(x, y)| [x, y]).collect())
}

/// Propagates revealed colors over the image; with no revealed pixels the
/// result is gray.
pub fn propagate_edits(gray: &GrayImage, hints: &LocalHints, cfg: &LevinConfig) -> Result<AbImage> {
    let raw = propagate_edits_f64(gray, hints, cfg)?;
    let lim = crate::colorspace::AB_LIMIT as f64;
    let ab = raw.iter().map(|p| [p[0].clamp(-lim, lim) as f32, p[1].clamp(-lim, lim) as f32]).collect();
    AbImage::new(gray.height, gray.width, ab)
}

/// `Σ_r (c(r) − Σ_s w_rs c(s))²` over unconstrained pixels and both channels.
pub fn residual(gray: &GrayImage, hints: &LocalHints, result: &AbImage, cfg: &LevinConfig) -> Result<f64> {
    check_dims(gray.dims(), hints.dims())?;
    check_dims(gray.dims(), result.dims())?;
    let aff = Affinity::new(gray, cfg);
    let mut total = 0.0;
    for ch in 0..2 {
        let c: Vec<f64> = result.ab.iter().map(|p| p[ch] as f64).collect();
        total += (0..c.len()).filter(|&r| hints.mask[r] == 0).map(|r| aff.defect(r, &c).powi(2)).sum::<f64>();
    }
    Ok(total)
}
