use chromahint_core::colorspace::GrayImage;
use chromahint_core::hints::{hints_from_edits, GlobalHints, LocalHints, PointEdit};
use chromahint_core::model::loss::{
    cross_entropy_grad_logits, cross_entropy_grad_probs, cross_entropy_sum, huber_sum, huber_sum_grad, softmax_rows, LossConfig,
};
use chromahint_core::model::{
    load_checkpoint, param_group, save_checkpoint, LossWeights, Network, NetworkConfig, ParamGroup, TrainBatch, Variant,
};
use chromahint_core::nn::{Adam, AdamConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn huber_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        // 2×2 pixels, two channels.
        let target: Vec<f64> = (0..8).map(|_| rng.random_range(-50.0..50.0)).collect();
        let pred: Vec<f64> = target
            .iter()
            .map(|t| {
                let mut d: f64 = rng.random_range(-3.0..3.0);
                while (d.abs() - 1.0).abs() < 1e-2 {
                    d = rng.random_range(-3.0..3.0);
                }
                t + d
            })
            .collect();
        let grad = huber_sum_grad(&pred, &target, 1.0);
        for i in 0..pred.len() {
            let h = 1e-6;
            let mut p = pred.clone();
            p[i] += h;
            let up = huber_sum(&p, &target, 1.0);
            p[i] -= 2.0 * h;
            let down = huber_sum(&p, &target, 1.0);
            let fd = (up - down) / (2.0 * h);
            assert!(rel_err(fd, grad[i]) <= 1e-3, "fd {fd} vs {}", grad[i]);
        }
    }
}

fn random_simplex_rows(rng: &mut ChaCha8Rng, rows: usize, q: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for _ in 0..rows {
        let raw: Vec<f64> = (0..q).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        out.extend(raw.iter().map(|v| v / s));
    }
    out
}

#[test]
fn cross_entropy_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let q = 6;
    for _ in 0..100 {
        let target = random_simplex_rows(&mut rng, 4, q);
        let pred = random_simplex_rows(&mut rng, 4, q);
        let grad = cross_entropy_grad_probs(&pred, &target);
        for i in 0..pred.len() {
            let h = 1e-7;
            let mut p = pred.clone();
            p[i] += h;
            let up = cross_entropy_sum(&p, &target);
            p[i] -= 2.0 * h;
            let down = cross_entropy_sum(&p, &target);
            let fd = (up - down) / (2.0 * h);
            assert!(rel_err(fd, grad[i]) <= 1e-3, "probs: fd {fd} vs {}", grad[i]);
        }
        let logits: Vec<f64> = (0..4 * q).map(|_| rng.random_range(-2.0..2.0)).collect();
        let loss = |l: &[f64]| cross_entropy_sum(&softmax_rows(l, q), &target);
        let glog = cross_entropy_grad_logits(&softmax_rows(&logits, q), &target, q);
        for i in 0..logits.len() {
            let h = 1e-6;
            let mut l = logits.clone();
            l[i] += h;
            let up = loss(&l);
            l[i] -= 2.0 * h;
            let fd = (up - loss(&l)) / (2.0 * h);
            assert!(rel_err(fd, glog[i]) <= 1e-3 || (fd - glog[i]).abs() < 1e-7, "logits: fd {fd} vs {}", glog[i]);
        }
    }
}

#[test]
fn moving_mass_toward_target_lowers_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let q = 8;
    for _ in 0..200 {
        let pred = random_simplex_rows(&mut rng, 1, q);
        let mut target = vec![0.0; q];
        let hot = rng.random_range(0..q);
        target[hot] = 1.0;
        let mut moved = pred.iter().map(|p| p * 0.9).collect::<Vec<_>>();
        moved[hot] += 0.1;
        assert!(cross_entropy_sum(&moved, &target) < cross_entropy_sum(&pred, &target));
    }
}

fn tiny(variant: Variant, seed: u64) -> Network {
    Network::new(NetworkConfig { variant, base_width: 4, dist_hidden: 16, ..NetworkConfig::default() }, seed).unwrap()
}

fn textured_gray(h: usize, w: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..100.0)).collect()).unwrap()
}

fn local_batch(net: &Network, n: usize, size: usize, seed: u64) -> TrainBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = size * size;
    let input = Tensor::from_vec([n, 4, size, size], (0..n * 4 * plane).map(|_| rng.random_range(-0.5..0.5)).collect());
    let target_ab = (0..n * 2 * plane).map(|_| rng.random_range(-60.0..60.0)).collect();
    let q = net.config.q;
    let cells = n * (size / 4) * (size / 4);
    let mut target_dist = vec![0.0; cells * q];
    for c in 0..cells {
        target_dist[c * q + rng.random_range(0..q)] = 1.0;
    }
    TrainBatch { input, global: None, target_ab, target_dist: Some(target_dist) }
}

#[test]
fn side_loss_never_reaches_main_branch() {
    let mut net = tiny(Variant::Local, 1);
    let batch = local_batch(&net, 2, 16, 5);
    net.store.zero_grad();
    let weights = LossWeights { main: 0.0, side: 1.0 };
    let losses = net.accumulate_gradients(&batch, &LossConfig::default(), &weights).unwrap();
    assert!(losses.cross_entropy > 0.0);
    let mut side_moved = false;
    for p in net.store.iter().filter(|p| p.trainable) {
        match param_group(&p.name) {
            ParamGroup::Main => assert!(p.grad.iter().all(|&g| g == 0.0), "{} received gradient", p.name),
            _ => side_moved |= p.grad.iter().any(|&g| g != 0.0),
        }
    }
    assert!(side_moved);
    let before: Vec<Vec<f32>> = net.store.iter().map(|p| p.value.clone()).collect();
    let mut opt = Adam::new(AdamConfig::default(), &net.store);
    opt.step(&mut net.store, 1e-3);
    for (p, old) in net.store.iter().zip(&before) {
        if p.trainable && param_group(&p.name) == ParamGroup::Main {
            assert_eq!(&p.value, old, "{} changed", p.name);
        }
    }
}

#[test]
fn fully_convolutional_on_rectangles() {
    let net = tiny(Variant::Local, 2);
    for (h, w) in [(64, 64), (64, 96)] {
        let out = net.forward_local(&textured_gray(h, w, 3), &LocalHints::empty(h, w)).unwrap();
        assert_eq!(out.dims(), (h, w));
    }
}

#[test]
fn inference_is_deterministic_and_batch_independent() {
    let net = tiny(Variant::Local, 3);
    let (a, b) = (textured_gray(24, 24, 1), textured_gray(24, 24, 2));
    let ha = hints_from_edits(&[PointEdit::new(3, 4, [40.0, -20.0])], 24, 24).unwrap();
    let hb = LocalHints::empty(24, 24);
    let alone = net.forward_local(&a, &ha).unwrap();
    assert_eq!(alone, net.forward_local(&a, &ha).unwrap());
    let batch = net.forward_local_batch(&[(&b, &hb), (&a, &ha)]).unwrap();
    assert_eq!(batch[1], alone);
}

#[test]
fn single_pixel_change_stays_within_receptive_radius() {
    let net = tiny(Variant::Local, 4);
    let radius = net.config.receptive_radius();
    let n = 256;
    let gray = textured_gray(n, n, 9);
    let mut moved = gray.clone();
    moved.l[5 * n + 5] = 100.0 - moved.l[5 * n + 5];
    let hints = LocalHints::empty(n, n);
    let p0 = net.predict_local(&gray, &hints).unwrap();
    let p1 = net.predict_local(&moved, &hints).unwrap();
    let mut changed_near = false;
    for r in 0..n {
        for c in 0..n {
            let d = r.abs_diff(5).max(c.abs_diff(5));
            let same = p0.ab.get(r, c) == p1.ab.get(r, c);
            if d > radius {
                assert!(same, "pixel ({r}, {c}) at distance {d} changed");
            } else if !same {
                changed_near = true;
            }
        }
    }
    assert!(changed_near);
    for r in 0..n / 4 {
        for c in 0..n / 4 {
            if (4 * r).abs_diff(5).max((4 * c).abs_diff(5)) > radius + 4 {
                assert_eq!(p0.dist.row(r, c), p1.dist.row(r, c));
            }
        }
    }
}

#[test]
fn global_flags_off_ignore_payload() {
    let net = tiny(Variant::Global, 5);
    let gray = textured_gray(16, 16, 4);
    let mut junk = GlobalHints::none(313);
    junk.histogram[3] = 0.7;
    junk.saturation = 0.9;
    let clean = net.forward_global(&gray, &GlobalHints::none(313)).unwrap();
    assert_eq!(net.forward_global(&gray, &junk).unwrap(), clean);
    assert!(clean.ab.iter().all(|p| p[0].abs() <= 110.0 && p[1].abs() <= 110.0));
}

#[test]
fn checkpoint_round_trip_reproduces_inference() {
    let mut net = tiny(Variant::Local, 6);
    // One training step so batch-norm statistics are non-trivial.
    let batch = local_batch(&net, 2, 16, 8);
    net.accumulate_gradients(&batch, &LossConfig::default(), &LossWeights::default()).unwrap();
    let mut opt = Adam::new(AdamConfig::default(), &net.store);
    opt.step(&mut net.store, 1e-3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    save_checkpoint(&path, &net, "gamut", 1, Some(&opt), None).unwrap();
    let (back, manifest, back_opt) = load_checkpoint(&path).unwrap();
    assert_eq!(manifest.format, "ckpt-v1");
    assert_eq!(back_opt.unwrap(), opt);
    let gray = textured_gray(32, 40, 10);
    let hints = hints_from_edits(&[PointEdit::new(10, 10, [0.0, 50.0])], 32, 40).unwrap();
    assert_eq!(back.predict_local(&gray, &hints).unwrap(), net.predict_local(&gray, &hints).unwrap());
    let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("net.ckpt.json")).unwrap()).unwrap();
    for key in ["format", "variant", "base_width", "Q", "gamut_hash", "step"] {
        assert!(sidecar.get(key).is_some(), "manifest lacks {key}");
    }
}

#[test]
fn training_steps_reduce_loss_on_fixed_batch() {
    let mut net = tiny(Variant::Local, 7);
    let batch = local_batch(&net, 2, 16, 9);
    let mut opt = Adam::new(AdamConfig::default(), &net.store);
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..60 {
        net.store.zero_grad();
        let l = net.accumulate_gradients(&batch, &LossConfig::default(), &LossWeights::default()).unwrap();
        first.get_or_insert(l.huber);
        last = l.huber;
        opt.step(&mut net.store, 3e-3);
    }
    assert!(last < 0.8 * first.unwrap(), "huber {} -> {last}", first.unwrap());
}

#[test]
fn end_to_end_parameter_gradients_match_differences() {
    for variant in [Variant::Local, Variant::Global] {
        // Batch statistics over a few pixels make finite differences unreliable;
        // normalization gradients are checked per operation in the engine.
        let mut net = Network::new(NetworkConfig { variant, base_width: 2, dist_hidden: 8, q: 12, use_batchnorm: false, ..NetworkConfig::default() }, 21).unwrap();
        // Zero biases behind dead units put pre-activations exactly on the
        // ReLU kink, where one-sided differences halve the slope.
        let mut jitter = ChaCha8Rng::seed_from_u64(23);
        for p in net.store.iter_mut().filter(|p| p.name.ends_with(".b")) {
            p.value.iter_mut().for_each(|v| *v = jitter.random_range(-0.2..0.2));
        }
        let mut batch = local_batch(&net, 2, 16, 22);
        if variant == Variant::Global {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            batch.input = Tensor::from_vec([2, 1, 16, 16], (0..512).map(|_| rng.random_range(-0.5..0.5)).collect());
            batch.global = Some(Tensor::from_vec([2, 15, 1, 1], (0..30).map(|_| rng.random_range(0.0..1.0)).collect()));
            batch.target_dist = None;
        }
        // Small targets keep every residual in the quadratic Huber branch.
        batch.target_ab.iter_mut().for_each(|v| *v *= 0.001);
        let loss = |net: &Network| -> f64 {
            let mut n = net.clone();
            n.store.zero_grad();
            let l = n.accumulate_gradients(&batch, &LossConfig { delta: 1e3 }, &LossWeights::default()).unwrap();
            l.huber + l.cross_entropy
        };
        net.store.zero_grad();
        let mut probe = net.clone();
        probe.accumulate_gradients(&batch, &LossConfig { delta: 1e3 }, &LossWeights::default()).unwrap();
        let mut checked = 0;
        let mut agreed = 0;
        for (id, p) in probe.store.iter().enumerate() {
            if !p.trainable {
                continue;
            }
            let (i, g) = p.grad.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap();
            // Forward values are f32, so tiny gradients drown in rounding.
            if g.abs() < 5.0 {
                continue;
            }
            let h = 1e-3 * (1.0 + net.store.get(id).value[i].abs());
            let mut up = net.clone();
            up.store.get_mut(id).value[i] += h;
            let mut down = net.clone();
            down.store.get_mut(id).value[i] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h as f64);
            if rel_err(fd, *g as f64) < 5e-2 {
                agreed += 1;
            } else {
                eprintln!("{variant} {} [{i}]: fd {fd} vs analytic {g}", p.name);
            }
            checked += 1;
        }
        // Entries whose perturbation crosses a ReLU kink at the 2×2
        // bottleneck disagree regardless of correctness; allow a few.
        assert!(checked > 15, "only {checked} tensors checked");
        assert!(agreed * 10 >= checked * 9, "{variant}: {agreed}/{checked} gradients agree");
    }
}
