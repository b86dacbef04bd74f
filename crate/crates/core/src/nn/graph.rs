use super::kernels::{col2im, gemm, im2col, Layout};
use super::{ParamId, ParamStore, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Train mode normalizes with batch statistics and records running-stat
/// updates; eval mode uses the stored statistics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

enum Op {
    Leaf,
    Conv { x: Var, w: ParamId, b: ParamId, k: usize, dilation: usize },
    BatchNorm { x: Var, gamma: ParamId, beta: ParamId, xhat: Vec<f32>, inv_std: Vec<f32>, batch_stats: bool },
    Relu { x: Var },
    AvgPool2 { x: Var },
    Upsample2 { x: Var },
    Add { a: Var, b: Var },
    AddBroadcast { x: Var, v: Var },
    Concat { parts: Vec<Var> },
    TanhScale { x: Var, scale: f32 },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

struct StatUpdate {
    mean: ParamId,
    var: ParamId,
    batch_mean: Vec<f32>,
    batch_var: Vec<f32>,
}

/// Reverse-mode tape. Build it with the op methods, then call
/// [`Graph::backward`] once.
pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    pending: Vec<StatUpdate>,
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Self { nodes: Vec::new(), mode, pending: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn into_value(mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros([0, 0, 0, 0]))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_flows(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Copy of `x` that blocks gradients from flowing back into `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.input(t)
    }

    /// "Same"-padded convolution with a `[cout, cin, k, k]` weight.
    pub fn conv2d(&mut self, store: &ParamStore, x: Var, w: ParamId, b: ParamId, dilation: usize) -> Var {
        let wp = store.get(w);
        let (cout, cin, k) = (wp.shape[0], wp.shape[1], wp.shape[2]);
        let xt = self.value(x);
        assert_eq!(xt.c(), cin, "conv {} expects {cin} input channels, got {}", wp.name, xt.c());
        let [n, _, h, wd] = xt.shape;
        let hw = h * wd;
        let kk = cin * k * k;
        let mut out = Tensor::zeros([n, cout, h, wd]);
        let bias = &store.get(b).value;
        let direct = k == 1;
        let mut col = if direct { Vec::new() } else { vec![0.0; kk * hw] };
        for i in 0..n {
            let xi = xt.item(i);
            let src: &[f32] = if direct {
                xi
            } else {
                im2col(xi, cin, h, wd, k, dilation, &mut col);
                &col
            };
            let oi = &mut out.data[i * cout * hw..(i + 1) * cout * hw];
            gemm(cout, kk, hw, &wp.value, Layout::row_major(kk), src, Layout::row_major(hw), 0.0, oi, Layout::row_major(hw));
            for (co, plane) in oi.chunks_exact_mut(hw).enumerate() {
                let bv = bias[co];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        self.push(out, Op::Conv { x, w, b, k, dilation }, true)
    }

    /// Per-channel batch normalization with affine `gamma`, `beta` and
    /// running statistics `mean`, `var`.
    pub fn batch_norm(&mut self, store: &ParamStore, x: Var, gamma: ParamId, beta: ParamId, mean: ParamId, var: ParamId) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape;
        let hw = h * w;
        let count = (n * hw) as f64;
        let batch_stats = self.mode == Mode::Train;
        let (mu, sigma2): (Vec<f32>, Vec<f32>) = if batch_stats {
            (0..c)
                .map(|ch| {
                    let mut s = 0f64;
                    let mut s2 = 0f64;
                    for i in 0..n {
                        for &v in &xt.data[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                            s += v as f64;
                            s2 += (v as f64) * (v as f64);
                        }
                    }
                    let m = s / count;
                    (m as f32, (s2 / count - m * m).max(0.0) as f32)
                })
                .unzip()
        } else {
            (store.get(mean).value.clone(), store.get(var).value.clone())
        };
        let inv_std: Vec<f32> = sigma2.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = &store.get(gamma).value;
        let bt = &store.get(beta).value;
        let mut xhat = vec![0.0; xt.data.len()];
        let mut out = Tensor::zeros(xt.shape);
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for ((o, xh), &v) in out.data[r.clone()].iter_mut().zip(&mut xhat[r.clone()]).zip(&xt.data[r]) {
                    *xh = (v - mu[ch]) * inv_std[ch];
                    *o = g[ch] * *xh + bt[ch];
                }
            }
        }
        if batch_stats {
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            self.pending.push(StatUpdate {
                mean,
                var,
                batch_mean: mu,
                batch_var: sigma2.iter().map(|&v| (v as f64 * unbias) as f32).collect(),
            });
        }
        self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, true)
    }

    /// Folds recorded batch statistics into the running estimates.
    pub fn commit_stats(&mut self, store: &mut ParamStore) {
        for u in self.pending.drain(..) {
            for (r, b) in store.get_mut(u.mean).value.iter_mut().zip(&u.batch_mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
            for (r, b) in store.get_mut(u.var).value.iter_mut().zip(&u.batch_var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let out = Tensor::from_vec(xt.shape, xt.data.iter().map(|&v| v.max(0.0)).collect());
        let rg = self.grad_flows(x);
        self.push(out, Op::Relu { x }, rg)
    }

    /// 2×2 average pooling with stride 2; spatial dims must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape;
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for p in 0..n * c {
            let src = &xt.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    let s = src[2 * y * w + 2 * xx] + src[2 * y * w + 2 * xx + 1] + src[(2 * y + 1) * w + 2 * xx] + src[(2 * y + 1) * w + 2 * xx + 1];
                    dst[y * ow + xx] = 0.25 * s;
                }
            }
        }
        let rg = self.grad_flows(x);
        self.push(out, Op::AvgPool2 { x }, rg)
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for p in 0..n * c {
            let src = &xt.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.grad_flows(x);
        self.push(out, Op::Upsample2 { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.shape, bt.shape, "add shape mismatch");
        let out = Tensor::from_vec(at.shape, at.data.iter().zip(&bt.data).map(|(x, y)| x + y).collect());
        let rg = self.grad_flows(a) || self.grad_flows(b);
        self.push(out, Op::Add { a, b }, rg)
    }

    /// Adds a per-item channel vector `v: [n, c, 1, 1]` at every position of
    /// `x: [n, c, h, w]`.
    pub fn add_broadcast(&mut self, x: Var, v: Var) -> Var {
        let (xt, vt) = (self.value(x), self.value(v));
        assert_eq!((vt.n(), vt.c(), vt.plane()), (xt.n(), xt.c(), 1), "broadcast shape mismatch");
        let hw = xt.plane();
        let mut out = xt.clone();
        for (p, plane) in out.data.chunks_exact_mut(hw).enumerate() {
            let add = vt.data[p];
            plane.iter_mut().for_each(|e| *e += add);
        }
        let rg = self.grad_flows(x) || self.grad_flows(v);
        self.push(out, Op::AddBroadcast { x, v }, rg)
    }

    /// Channel concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = self.value(parts[0]).shape;
        let (n, h, w) = (first[0], first[2], first[3]);
        let c: usize = parts.iter().map(|&p| self.value(p).c()).sum();
        let mut out = Tensor::zeros([n, c, h, w]);
        let hw = h * w;
        for i in 0..n {
            let mut off = i * c * hw;
            for &p in parts {
                let pt = self.value(p);
                assert_eq!((pt.n(), pt.h(), pt.w()), (n, h, w), "concat shape mismatch");
                let src = pt.item(i);
                out.data[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.grad_flows(p));
        self.push(out, Op::Concat { parts: parts.to_vec() }, rg)
    }

    /// `scale · tanh(x)`.
    pub fn tanh_scale(&mut self, x: Var, scale: f32) -> Var {
        let xt = self.value(x);
        let out = Tensor::from_vec(xt.shape, xt.data.iter().map(|&v| scale * v.tanh()).collect());
        let rg = self.grad_flows(x);
        self.push(out, Op::TanhScale { x, scale }, rg)
    }

    /// Back-propagates the given output gradients, accumulating parameter
    /// gradients into `store`.
    pub fn backward(&self, seeds: Vec<(Var, Vec<f32>)>, store: &mut ParamStore) {
        self.backward_grads(seeds, store);
    }

    /// Like [`Graph::backward`], returning the gradient of every recorded
    /// value that received one (differentiable leaves included).
    fn backward_grads(&self, seeds: Vec<(Var, Vec<f32>)>, store: &mut ParamStore) -> Vec<Option<Vec<f32>>> {
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(g.len(), self.nodes[v.0].value.data.len(), "seed gradient size");
            self.accumulate(&mut grads, v, |dst| dst.iter_mut().zip(&g).for_each(|(d, s)| *d += s));
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv { x, w, b, k, dilation } => self.conv_backward(&mut grads, store, &g, *x, *w, *b, *k, *dilation),
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                    let [n, c, h, wd] = node.value.shape;
                    let hw = h * wd;
                    let gv = store.get(*gamma).value.clone();
                    let mut dgamma = vec![0f64; c];
                    let mut dbeta = vec![0f64; c];
                    for i in 0..n {
                        for ch in 0..c {
                            let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                            for (&gy, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                                dgamma[ch] += (gy * xh) as f64;
                                dbeta[ch] += gy as f64;
                            }
                        }
                    }
                    let gp = store.get_mut(*gamma);
                    gp.grad.iter_mut().zip(&dgamma).for_each(|(d, s)| *d += *s as f32);
                    let bp = store.get_mut(*beta);
                    bp.grad.iter_mut().zip(&dbeta).for_each(|(d, s)| *d += *s as f32);
                    if self.grad_flows(*x) {
                        let count = (n * hw) as f64;
                        self.accumulate(&mut grads, *x, |dx| {
                            for i in 0..n {
                                for ch in 0..c {
                                    let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                                    let scale = gv[ch] * inv_std[ch];
                                    if *batch_stats {
                                        // dxhat = g·gamma; dx = inv_std/N (N dxhat − Σdxhat − xhat Σ dxhat·xhat)
                                        let sum_g = dbeta[ch] / count;
                                        let sum_gx = dgamma[ch] / count;
                                        for ((d, &gy), &xh) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                                            *d += scale * (gy - sum_g as f32 - xh * sum_gx as f32);
                                        }
                                    } else {
                                        for (d, &gy) in dx[r.clone()].iter_mut().zip(&g[r]) {
                                            *d += scale * gy;
                                        }
                                    }
                                }
                            }
                        });
                    }
                }
                Op::Relu { x } => {
                    let y = &node.value.data;
                    self.accumulate(&mut grads, *x, |dx| {
                        for ((d, &gy), &yv) in dx.iter_mut().zip(&g).zip(y) {
                            if yv > 0.0 {
                                *d += gy;
                            }
                        }
                    });
                }
                Op::AvgPool2 { x } => {
                    let [n, c, oh, ow] = node.value.shape;
                    let (h, w) = (2 * oh, 2 * ow);
                    self.accumulate(&mut grads, *x, |dx| {
                        for p in 0..n * c {
                            let src = &g[p * oh * ow..(p + 1) * oh * ow];
                            let dst = &mut dx[p * h * w..(p + 1) * h * w];
                            for y in 0..h {
                                for xx in 0..w {
                                    dst[y * w + xx] += 0.25 * src[(y / 2) * ow + xx / 2];
                                }
                            }
                        }
                    });
                }
                Op::Upsample2 { x } => {
                    let [n, c, oh, ow] = node.value.shape;
                    let (h, w) = (oh / 2, ow / 2);
                    self.accumulate(&mut grads, *x, |dx| {
                        for p in 0..n * c {
                            let src = &g[p * oh * ow..(p + 1) * oh * ow];
                            let dst = &mut dx[p * h * w..(p + 1) * h * w];
                            for y in 0..oh {
                                for xx in 0..ow {
                                    dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
                                }
                            }
                        }
                    });
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        self.accumulate(&mut grads, v, |d| d.iter_mut().zip(&g).for_each(|(d, s)| *d += s));
                    }
                }
                Op::AddBroadcast { x, v } => {
                    self.accumulate(&mut grads, *x, |d| d.iter_mut().zip(&g).for_each(|(d, s)| *d += s));
                    let hw = node.value.plane();
                    self.accumulate(&mut grads, *v, |d| {
                        for (dv, plane) in d.iter_mut().zip(g.chunks_exact(hw)) {
                            *dv += plane.iter().map(|&e| e as f64).sum::<f64>() as f32;
                        }
                    });
                }
                Op::Concat { parts } => {
                    let [n, c, h, w] = node.value.shape;
                    let hw = h * w;
                    let mut off_c = 0;
                    for &p in parts {
                        let pc = self.nodes[p.0].value.c();
                        self.accumulate(&mut grads, p, |d| {
                            for i in 0..n {
                                let src = &g[(i * c + off_c) * hw..(i * c + off_c + pc) * hw];
                                d[i * pc * hw..(i + 1) * pc * hw].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                            }
                        });
                        off_c += pc;
                    }
                }
                Op::TanhScale { x, scale } => {
                    let y = &node.value.data;
                    self.accumulate(&mut grads, *x, |dx| {
                        for ((d, &gy), &yv) in dx.iter_mut().zip(&g).zip(y) {
                            let t = yv / scale;
                            *d += gy * scale * (1.0 - t * t);
                        }
                    });
                }
            }
        }
        grads
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], v: Var, f: impl FnOnce(&mut [f32])) {
        if !self.grad_flows(v) {
            return;
        }
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.data.len()]);
        f(g);
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(&self, grads: &mut [Option<Vec<f32>>], store: &mut ParamStore, g: &[f32], x: Var, w: ParamId, b: ParamId, k: usize, dilation: usize) {
        let xt = &self.nodes[x.0].value;
        let [n, cin, h, wd] = xt.shape;
        let hw = h * wd;
        let kk = cin * k * k;
        let cout = store.get(w).shape[0];
        let direct = k == 1;
        let want_dx = self.grad_flows(x);
        let mut col = if direct { Vec::new() } else { vec![0.0; kk * hw] };
        let mut dcol = if direct || !want_dx { Vec::new() } else { vec![0.0; kk * hw] };
        let mut dx_all = if want_dx { vec![0.0; xt.data.len()] } else { Vec::new() };
        {
            let bp = store.get_mut(b);
            for i in 0..n {
                for (co, plane) in g[i * cout * hw..(i + 1) * cout * hw].chunks_exact(hw).enumerate() {
                    bp.grad[co] += plane.iter().map(|&e| e as f64).sum::<f64>() as f32;
                }
            }
        }
        let wp = store.get_mut(w);
        for i in 0..n {
            let gi = &g[i * cout * hw..(i + 1) * cout * hw];
            let xi = xt.item(i);
            let src: &[f32] = if direct {
                xi
            } else {
                im2col(xi, cin, h, wd, k, dilation, &mut col);
                &col
            };
            gemm(cout, hw, kk, gi, Layout::row_major(hw), src, Layout::transposed(hw), 1.0, &mut wp.grad, Layout::row_major(kk));
            if want_dx {
                let dxi = &mut dx_all[i * cin * hw..(i + 1) * cin * hw];
                if direct {
                    gemm(kk, cout, hw, &wp.value, Layout::transposed(kk), gi, Layout::row_major(hw), 1.0, dxi, Layout::row_major(hw));
                } else {
                    gemm(kk, cout, hw, &wp.value, Layout::transposed(kk), gi, Layout::row_major(hw), 0.0, &mut dcol, Layout::row_major(hw));
                    col2im(&dcol, cin, h, wd, k, dilation, dxi);
                }
            }
        }
        if want_dx {
            self.accumulate(grads, x, |d| d.iter_mut().zip(&dx_all).for_each(|(d, s)| *d += s));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(shape, (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Checks d<proj, f(x)>/dx against central differences for every input
    /// entry, where `build` maps the input leaf to an output var.
    fn check_input_grad(x: Tensor, store: &mut ParamStore, mode: Mode, build: impl Fn(&mut Graph, &ParamStore, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |xt: &Tensor, store: &ParamStore, proj: &[f32]| -> f64 {
            let mut g = Graph::new(mode);
            let xv = g.input(xt.clone());
            let y = build(&mut g, store, xv);
            g.value(y).data.iter().zip(proj).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let mut g = Graph::new(mode);
        let xv = g.push(x.clone(), Op::Leaf, true);
        let y = g_build(&mut g, store, xv, &build);
        let proj: Vec<f32> = (0..g.value(y).data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut grads = g.backward_grads(vec![(y, proj.clone())], store);
        let dx = grads[xv.0].take().unwrap_or_else(|| vec![0.0; x.data.len()]);
        let h = 1e-2f32;
        for i in 0..x.data.len() {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (eval(&xp, store, &proj) - eval(&xm, store, &proj)) / (2.0 * h as f64);
            let an = dx[i] as f64;
            assert!((fd - an).abs() <= 2e-2 * (1.0 + fd.abs().max(an.abs())), "entry {i}: fd {fd} analytic {an}");
        }
    }

    fn g_build(g: &mut Graph, store: &ParamStore, x: Var, build: &impl Fn(&mut Graph, &ParamStore, Var) -> Var) -> Var {
        build(g, store, x)
    }

    #[test]
    fn conv_input_and_weight_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let (w, b) = store.add_conv("c", 2, 3, 3, 1.0, &mut rng);
        for d in [1, 2] {
            let x = random_tensor([2, 2, 5, 4], &mut rng);
            check_input_grad(x, &mut store, Mode::Train, |g, s, v| g.conv2d(s, v, w, b, d));
        }
        let (w1, b1) = store.add_conv("p", 2, 3, 1, 1.0, &mut rng);
        check_input_grad(random_tensor([2, 2, 3, 3], &mut rng), &mut store, Mode::Train, |g, s, v| g.conv2d(s, v, w1, b1, 1));
    }

    #[test]
    fn conv_weight_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let (w, b) = store.add_conv("c", 2, 2, 3, 1.0, &mut rng);
        let x = random_tensor([2, 2, 4, 4], &mut rng);
        let proj: Vec<f32> = (0..2 * 2 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |store: &ParamStore| -> f64 {
            let mut g = Graph::new(Mode::Train);
            let xv = g.input(x.clone());
            let y = g.conv2d(store, xv, w, b, 2);
            g.value(y).data.iter().zip(&proj).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let mut g = Graph::new(Mode::Train);
        let xv = g.input(x.clone());
        let y = g.conv2d(&store, xv, w, b, 2);
        store.zero_grad();
        g.backward(vec![(y, proj.clone())], &mut store);
        for pid in [w, b] {
            let analytic = store.get(pid).grad.clone();
            for i in 0..analytic.len() {
                let mut s = store.clone();
                s.get_mut(pid).value[i] += 1e-2;
                let fp = f(&s);
                s.get_mut(pid).value[i] -= 2e-2;
                let fm = f(&s);
                let fd = (fp - fm) / 2e-2;
                assert!((fd - analytic[i] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "param {pid} entry {i}");
            }
        }
    }

    #[test]
    fn elementwise_and_resampling_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let x = random_tensor([2, 3, 4, 6], &mut rng);
        check_input_grad(x.clone(), &mut store, Mode::Train, |g, _, v| g.avg_pool2(v));
        check_input_grad(x.clone(), &mut store, Mode::Train, |g, _, v| g.upsample2(v));
        check_input_grad(x.clone(), &mut store, Mode::Train, |g, _, v| g.tanh_scale(v, 3.0));
        check_input_grad(x.clone(), &mut store, Mode::Train, |g, _, v| {
            let p = g.avg_pool2(v);
            let u = g.upsample2(p);
            let s = g.add(u, v);
            g.concat(&[s, v, u])
        });
    }

    #[test]
    fn batch_norm_gradients_in_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let gamma = store.add("g", &[3], vec![1.5, -0.5, 2.0], true);
        let beta = store.add("b", &[3], vec![0.1, 0.2, 0.3], true);
        let mean = store.add("m", &[3], vec![0.1, -0.1, 0.0], false);
        let var = store.add("v", &[3], vec![0.5, 1.5, 1.0], false);
        let x = random_tensor([2, 3, 3, 3], &mut rng);
        for mode in [Mode::Train, Mode::Eval] {
            check_input_grad(x.clone(), &mut store, mode, |g, s, v| g.batch_norm(s, v, gamma, beta, mean, var));
        }
    }

    #[test]
    fn broadcast_add_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let (w, b) = store.add_conv("lin", 4, 3, 1, 1.0, &mut rng);
        let feat = random_tensor([2, 3, 2, 2], &mut rng);
        check_input_grad(random_tensor([2, 4, 1, 1], &mut rng), &mut store, Mode::Train, |g, s, v| {
            let f = g.input(feat.clone());
            let lin = g.conv2d(s, v, w, b, 1);
            let r = g.relu(lin);
            g.add_broadcast(f, r)
        });
    }

    #[test]
    fn batch_stats_and_running_update() {
        let mut store = ParamStore::new();
        let gamma = store.add("g", &[1], vec![1.0], true);
        let beta = store.add("b", &[1], vec![0.0], true);
        let mean = store.add("m", &[1], vec![0.0], false);
        let var = store.add("v", &[1], vec![1.0], false);
        let mut g = Graph::new(Mode::Train);
        let x = g.input(Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.batch_norm(&store, x, gamma, beta, mean, var);
        let out = &g.value(y).data;
        assert!(out.iter().sum::<f32>().abs() < 1e-5);
        g.commit_stats(&mut store);
        assert!((store.get(mean).value[0] - 0.25).abs() < 1e-6);
        // Unbiased batch variance 5/3.
        assert!((store.get(var).value[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let (w, b) = store.add_conv("a", 1, 2, 3, 1.0, &mut rng);
        let (w2, b2) = store.add_conv("h", 2, 2, 1, 1.0, &mut rng);
        let mut g = Graph::new(Mode::Train);
        let x = g.input(random_tensor([1, 1, 4, 4], &mut rng));
        let f = g.conv2d(&store, x, w, b, 1);
        let d = g.detach(f);
        let head = g.conv2d(&store, d, w2, b2, 1);
        store.zero_grad();
        g.backward(vec![(head, vec![1.0; 32])], &mut store);
        assert!(store.get(w).grad.iter().all(|&v| v == 0.0));
        assert!(store.get(w2).grad.iter().any(|&v| v != 0.0));
    }
}
