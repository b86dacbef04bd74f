use chromahint_core::colorspace::{AbImage, GrayImage};
use chromahint_core::hints::LocalHints;
use chromahint_core::levin::{propagate_edits, propagate_edits_f64, residual, LevinConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense row-substitution system built straight from the affinity formula
/// (3×3 window), solved by LU.
fn dense_solve(gray: &GrayImage, hints: &LocalHints, floor: f64) -> Vec<[f64; 2]> {
    let (h, w) = (gray.height, gray.width);
    let n = h * w;
    let lum = |r: usize, c: usize| gray.l[r * w + c] as f64 / 100.0;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut rhs = [DVector::<f64>::zeros(n), DVector::<f64>::zeros(n)];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if hints.mask[i] == 1 {
                rhs[0][i] = hints.ab[i][0] as f64;
                rhs[1][i] = hints.ab[i][1] as f64;
                continue;
            }
            let mut win = Vec::new();
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    win.push((rr, cc));
                }
            }
            let vals: Vec<f64> = win.iter().map(|&(rr, cc)| lum(rr, cc)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = (vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64 - mean * mean).max(floor);
            let nb: Vec<(usize, f64)> = win
                .iter()
                .filter(|&&p| p != (r, c))
                .map(|&(rr, cc)| (rr * w + cc, (-(lum(rr, cc) - lum(r, c)).powi(2) / (2.0 * var)).exp()))
                .collect();
            let total: f64 = nb.iter().map(|p| p.1).sum();
            for (j, wt) in nb {
                a[(i, j)] -= wt / total;
            }
        }
    }
    let lu = a.lu();
    let x0 = lu.solve(&rhs[0]).unwrap();
    let x1 = lu.solve(&rhs[1]).unwrap();
    (0..n).map(|i| [x0[i], x1[i]]).collect()
}

fn random_case(seed: u64, h: usize, w: usize, points: usize) -> (GrayImage, LocalHints) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gray = GrayImage::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..100.0f32)).collect()).unwrap();
    let mut hints = LocalHints::empty(h, w);
    for _ in 0..points {
        let (r, c) = (rng.random_range(0..h), rng.random_range(0..w));
        hints.paint(r..r + 1, c..c + 1, [rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0)]);
    }
    (gray, hints)
}

#[test]
fn iterative_solve_matches_dense_oracle() {
    let cfg = LevinConfig { solver_tol: 1e-12, ..LevinConfig::default() };
    for seed in 0..20 {
        let (h, w) = (3 + seed as usize % 6, 8 - seed as usize % 5);
        let (gray, hints) = random_case(seed, h, w, 1 + seed as usize % 4);
        let got = propagate_edits_f64(&gray, &hints, &cfg).unwrap();
        let want = dense_solve(&gray, &hints, cfg.variance_floor);
        for (g, o) in got.iter().zip(&want) {
            assert!((g[0] - o[0]).abs() < 1e-6 && (g[1] - o[1]).abs() < 1e-6, "seed {seed}: {g:?} vs {o:?}");
        }
    }
}

#[test]
fn converged_residual_is_small_and_perturbing_constraints_raises_it() {
    let cfg = LevinConfig::default();
    let (gray, hints) = random_case(7, 16, 16, 6);
    let out = propagate_edits(&gray, &hints, &cfg).unwrap();
    let base = residual(&gray, &hints, &out, &cfg).unwrap();
    let scale: f64 = hints.ab.iter().map(|p| (p[0] as f64).powi(2) + (p[1] as f64).powi(2)).sum();
    assert!(base <= cfg.solver_tol * scale, "{base} vs {scale}");
    let i = hints.mask.iter().position(|&m| m == 1).unwrap();
    let mut bumped = out.clone();
    bumped.ab[i][0] += 5.0;
    assert!(residual(&gray, &hints, &bumped, &cfg).unwrap() > base);
}

#[test]
fn equiluminant_two_color_interpolation() {
    let gray = GrayImage::filled(8, 16, 55.0);
    let mut hints = LocalHints::empty(8, 16);
    hints.paint(4..5, 1..2, [60.0, 20.0]);
    hints.paint(4..5, 14..15, [-40.0, 30.0]);
    let out = propagate_edits(&gray, &hints, &LevinConfig::default()).unwrap();
    assert_eq!(out.get(4, 1), [60.0, 20.0]);
    assert_eq!(out.get(4, 14), [-40.0, 30.0]);
    for p in &out.ab {
        assert!((-40.0 - 1e-3..=60.0 + 1e-3).contains(&p[0]));
        assert!((20.0 - 1e-3..=30.0 + 1e-3).contains(&p[1]));
    }
    assert!(out.get(4, 3)[0] > out.get(4, 12)[0]);
}

#[test]
fn moderate_image_solves_quickly() {
    let (gray, hints) = random_case(3, 128, 128, 10);
    let t = std::time::Instant::now();
    propagate_edits(&gray, &hints, &LevinConfig::default()).unwrap();
    assert!(t.elapsed().as_secs_f64() < 20.0, "{:?}", t.elapsed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn constraints_exact_and_shift_invariant(seed in 0u64..10_000, shift in -20f32..20.0) {
        let (gray, hints) = random_case(seed, 6, 7, 3);
        let cfg = LevinConfig::default();
        let out = propagate_edits(&gray, &hints, &cfg).unwrap();
        for i in 0..hints.mask.len() {
            if hints.mask[i] == 1 {
                prop_assert_eq!(out.ab[i], hints.ab[i]);
            }
        }
        let shifted = GrayImage { l: gray.l.iter().map(|v| v * 0.5 + 30.0 + shift).collect(), ..gray.clone() };
        let base = GrayImage { l: gray.l.iter().map(|v| v * 0.5 + 30.0).collect(), ..gray };
        let a = propagate_edits(&base, &hints, &cfg).unwrap();
        let b = propagate_edits(&shifted, &hints, &cfg).unwrap();
        for (p, q) in a.ab.iter().zip(&b.ab) {
            prop_assert!((p[0] - q[0]).abs() < 1e-2 && (p[1] - q[1]).abs() < 1e-2);
        }
    }
}

#[test]
fn dims_checked() {
    let r = propagate_edits(&GrayImage::filled(2, 2, 1.0), &LocalHints::empty(2, 3), &LevinConfig::default());
    assert!(r.is_err());
    let r = residual(&GrayImage::filled(2, 2, 1.0), &LocalHints::empty(2, 2), &AbImage::zeros(3, 2), &LevinConfig::default());
    assert!(r.is_err());
}
