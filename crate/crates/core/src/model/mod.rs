//! The colorization network: a ten-block U-Net with a local-hint variant
//! (hint planes concatenated to the input, plus a hypercolumn color
//! classifier at quarter resolution) and a global-hint variant (a 1×1 branch
//! summed into the bottleneck).

mod checkpoint;
pub mod loss;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorspace::{AbImage, ColorDistribution, GrayImage, AB_LIMIT};
use crate::error::{check_dims, Error, Result};
use crate::hints::{GlobalHints, LocalHints};
use crate::nn::{Graph, Mode, ParamId, ParamStore, Tensor, Var};

pub use checkpoint::{load_checkpoint, manifest_path, save_checkpoint, CheckpointManifest, CKPT_FORMAT};
use loss::{cross_entropy_grad_logits, cross_entropy_sum, huber_sum, huber_sum_grad, softmax_rows, LossConfig};

/// Number of local input planes: L, a, b, mask.
pub const LOCAL_INPUT_CHANNELS: usize = 4;
/// Spatial dims must be multiples of this; other sizes are padded.
pub const SIZE_MULTIPLE: usize = 8;
/// `(source block, destination block)` shortcut connections, 1-based.
pub const SHORTCUTS: [(usize, usize); 3] = [(3, 8), (2, 9), (1, 10)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Local,
    Global,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Local => "local",
            Variant::Global => "global",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub base_width: usize,
    pub convs_per_block: usize,
    pub use_batchnorm: bool,
    /// Number of color bins predicted by the distribution head.
    pub q: usize,
    /// Hidden width of the two-layer hypercolumn classifier.
    pub dist_hidden: usize,
    /// Number of 1×1 conv-relu layers in the global branch.
    pub global_layers: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Local,
            base_width: 32,
            convs_per_block: 2,
            use_batchnorm: true,
            q: 313,
            dist_hidden: 128,
            global_layers: 4,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.convs_per_block == 0 || self.q == 0 || self.dist_hidden == 0 {
            return Err(Error::InvalidConfig("network widths and counts must be positive".into()));
        }
        if self.variant == Variant::Global && self.global_layers == 0 {
            return Err(Error::InvalidConfig("global branch needs at least one layer".into()));
        }
        Ok(())
    }

    /// Output width of each of the ten blocks.
    pub fn block_widths(&self) -> [usize; 10] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 8 * w, 8 * w, 8 * w, 8 * w, 4 * w, 2 * w, w]
    }

    pub fn block_dilation(block: usize) -> usize {
        if block == 5 || block == 6 {
            2
        } else {
            1
        }
    }

    pub fn input_channels(&self) -> usize {
        match self.variant {
            Variant::Local => LOCAL_INPUT_CHANNELS,
            Variant::Global => 1,
        }
    }

    /// Channels of the concatenated hypercolumn (blocks 2, 4, 6, 8).
    pub fn hypercolumn_width(&self) -> usize {
        let bw = self.block_widths();
        bw[1] + bw[3] + bw[5] + bw[7]
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Conservative bound (pixels, Chebyshev) on how far a change to one
    /// input pixel can influence any output in inference mode.
    pub fn receptive_radius(&self) -> usize {
        let k = self.convs_per_block;
        let mut r = 0;
        let mut scale = 1;
        for block in 1..=10 {
            match block {
                2..=4 => {
                    scale *= 2;
                    r += scale;
                }
                8..=10 => {
                    r += scale;
                    scale /= 2;
                }
                _ => {}
            }
            r += k * Self::block_dilation(block) * scale;
        }
        // Hypercolumn taps upsampled from eighth resolution.
        r + 8
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    convs: Vec<ConvIds>,
    dilation: usize,
    bn: Option<BnIds>,
    shortcut: Option<ConvIds>,
}

#[derive(Debug, Clone)]
struct Layers {
    blocks: Vec<Block>,
    out: ConvIds,
    hyper: Option<(ConvIds, ConvIds)>,
    global: Vec<ConvIds>,
}

/// Variables produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[n, 2, h, w]` chrominance in ab units.
    pub ab: Var,
    /// `[n, q, h/4, w/4]` unnormalized bin scores.
    pub logits: Option<Var>,
}

/// One mini-batch of pre-encoded training data.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    /// `[n, c, h, w]`, already normalized (see [`encode_local_input`]).
    pub input: Tensor,
    /// `[n, q + 3, 1, 1]` global hint vectors for the global variant.
    pub global: Option<Tensor>,
    /// `[n, 2, h, w]` target chrominance in ab units.
    pub target_ab: Vec<f32>,
    /// `[n, h/4, w/4, q]` soft-encoded targets for the distribution head.
    pub target_dist: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub main: f64,
    pub side: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { main: 1.0, side: 1.0 }
    }
}

/// Summed (not averaged) batch losses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLoss {
    pub huber: f64,
    pub cross_entropy: f64,
}

/// Output of a local-variant pass with both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPrediction {
    pub ab: AbImage,
    pub dist: ColorDistribution,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    pub store: ParamStore,
    layers: Layers,
}

/// Where a parameter lives, used to tell the main branch apart from the
/// side heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Main,
    Distribution,
    Global,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("hyper.") {
        ParamGroup::Distribution
    } else if name.starts_with("global.") {
        ParamGroup::Global
    } else {
        ParamGroup::Main
    }
}

impl Network {
    /// Freshly initialized weights from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let widths = config.block_widths();
        let mut blocks = Vec::with_capacity(10);
        for block in 1..=10 {
            let cin = if block == 1 { config.input_channels() } else { widths[block - 2] };
            let cout = widths[block - 1];
            let convs = (0..config.convs_per_block)
                .map(|j| {
                    let (w, b) = store.add_conv(&format!("b{block}.conv{j}"), if j == 0 { cin } else { cout }, cout, 3, 1.0, &mut rng);
                    ConvIds { w, b }
                })
                .collect();
            let shortcut = SHORTCUTS.iter().find(|s| s.1 == block).map(|&(src, _)| {
                let (w, b) = store.add_conv(&format!("b{block}.short"), widths[src - 1], cout, 1, 1.0, &mut rng);
                ConvIds { w, b }
            });
            let bn = (config.use_batchnorm && block < 10).then(|| BnIds {
                gamma: store.add(&format!("b{block}.bn.gamma"), &[cout], vec![1.0; cout], true),
                beta: store.add(&format!("b{block}.bn.beta"), &[cout], vec![0.0; cout], true),
                mean: store.add(&format!("b{block}.bn.mean"), &[cout], vec![0.0; cout], false),
                var: store.add(&format!("b{block}.bn.var"), &[cout], vec![1.0; cout], false),
            });
            blocks.push(Block { convs, dilation: NetworkConfig::block_dilation(block), bn, shortcut });
        }
        let (w, b) = store.add_conv("out", widths[9], 2, 1, 0.1, &mut rng);
        let out = ConvIds { w, b };
        let hyper = (config.variant == Variant::Local).then(|| {
            let (w1, b1) = store.add_conv("hyper.fc1", config.hypercolumn_width(), config.dist_hidden, 1, 1.0, &mut rng);
            let (w2, b2) = store.add_conv("hyper.fc2", config.dist_hidden, config.q, 1, 0.5, &mut rng);
            (ConvIds { w: w1, b: b1 }, ConvIds { w: w2, b: b2 })
        });
        let global = if config.variant == Variant::Global {
            (0..config.global_layers)
                .map(|j| {
                    let cin = if j == 0 { config.q + 3 } else { widths[3] };
                    let (w, b) = store.add_conv(&format!("global.fc{j}"), cin, widths[3], 1, 1.0, &mut rng);
                    ConvIds { w, b }
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self { config, store, layers: Layers { blocks, out, hyper, global } })
    }

    /// Rebuilds a network around stored parameters, checking every name and
    /// shape against the configuration.
    pub fn from_store(config: NetworkConfig, store: ParamStore) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        if store.len() != net.store.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", net.store.len(), store.len())));
        }
        for (mine, theirs) in net.store.iter_mut().zip(store.iter()) {
            if mine.name != theirs.name || mine.shape != theirs.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    theirs.name, theirs.shape, mine.name, mine.shape
                )));
            }
            mine.value.clone_from(&theirs.value);
        }
        Ok(net)
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn conv_relu(&self, g: &mut Graph, x: Var, c: ConvIds, dilation: usize) -> Var {
        let y = g.conv2d(&self.store, x, c.w, c.b, dilation);
        g.relu(y)
    }

    fn norm(&self, g: &mut Graph, x: Var, bn: Option<BnIds>) -> Var {
        match bn {
            Some(b) => g.batch_norm(&self.store, x, b.gamma, b.beta, b.mean, b.var),
            None => x,
        }
    }

    /// Records the full forward pass on `g`.
    pub fn forward_graph(&self, g: &mut Graph, input: Var, global: Option<Var>, want_logits: bool) -> ForwardVars {
        let blocks = &self.layers.blocks;
        let mut feats: Vec<Var> = Vec::with_capacity(10);
        let mut x = input;
        for (i, blk) in blocks.iter().enumerate() {
            let block = i + 1;
            if (2..=4).contains(&block) {
                x = g.avg_pool2(x);
            }
            let mut convs = blk.convs.iter();
            if let Some(short) = blk.shortcut {
                x = g.upsample2(x);
                let first = convs.next().expect("at least one conv");
                let main = g.conv2d(&self.store, x, first.w, first.b, blk.dilation);
                let src = SHORTCUTS.iter().find(|s| s.1 == block).unwrap().0;
                let skip = g.conv2d(&self.store, feats[src - 1], short.w, short.b, 1);
                let sum = g.add(main, skip);
                x = g.relu(sum);
            }
            for &c in convs {
                x = self.conv_relu(g, x, c, blk.dilation);
            }
            x = self.norm(g, x, blk.bn);
            if block == 4 {
                if let Some(gv) = global {
                    let mut v = gv;
                    for &c in &self.layers.global {
                        v = self.conv_relu(g, v, c, 1);
                    }
                    x = g.add_broadcast(x, v);
                }
            }
            feats.push(x);
        }
        let out = g.conv2d(&self.store, x, self.layers.out.w, self.layers.out.b, 1);
        let ab = g.tanh_scale(out, AB_LIMIT);
        let logits = match (&self.layers.hyper, want_logits) {
            (Some((fc1, fc2)), true) => {
                let f2 = g.detach(feats[1]);
                let f2 = g.avg_pool2(f2);
                let f4 = g.detach(feats[3]);
                let f4 = g.upsample2(f4);
                let f6 = g.detach(feats[5]);
                let f6 = g.upsample2(f6);
                let f8 = g.detach(feats[7]);
                let hc = g.concat(&[f2, f4, f6, f8]);
                let h = self.conv_relu(g, hc, *fc1, 1);
                Some(g.conv2d(&self.store, h, fc2.w, fc2.b, 1))
            }
            _ => None,
        };
        ForwardVars { ab, logits }
    }

    /// Runs one training forward/backward pass, adding the weighted loss
    /// gradients to the parameter gradients and folding batch statistics
    /// into the running estimates.
    pub fn accumulate_gradients(&mut self, batch: &TrainBatch, loss: &LossConfig, weights: &LossWeights) -> Result<StepLoss> {
        loss.validate()?;
        let mut g = Graph::new(Mode::Train);
        let input = g.input(batch.input.clone());
        let global = batch.global.clone().map(|t| g.input(t));
        if self.variant() == Variant::Global && global.is_none() {
            return Err(Error::ModelMismatch("global-variant training needs global hint vectors".into()));
        }
        let want_logits = self.variant() == Variant::Local && batch.target_dist.is_some();
        let vars = self.forward_graph(&mut g, input, global, want_logits);
        let mut seeds = Vec::new();
        let pred = g.value(vars.ab);
        if pred.data.len() != batch.target_ab.len() {
            return Err(Error::InvalidConfig("target ab size does not match the batch".into()));
        }
        let mut out = StepLoss { huber: huber_sum(&pred.data, &batch.target_ab, loss.delta), cross_entropy: 0.0 };
        if weights.main != 0.0 {
            let grad = huber_sum_grad(&pred.data, &batch.target_ab, loss.delta);
            seeds.push((vars.ab, grad.into_iter().map(|v| (v * weights.main) as f32).collect()));
        }
        if let (Some(lv), Some(target)) = (vars.logits, &batch.target_dist) {
            let lt = g.value(lv);
            let [n, q, h, w] = lt.shape;
            let rows = channels_to_rows(&lt.data, n, q, h * w);
            if rows.len() != target.len() {
                return Err(Error::InvalidConfig("target distribution size does not match the batch".into()));
            }
            let probs = softmax_rows(&rows, q);
            let target64: Vec<f64> = target.iter().map(|&v| v as f64).collect();
            out.cross_entropy = cross_entropy_sum(&probs, &target64);
            if weights.side != 0.0 {
                let grad = cross_entropy_grad_logits(&probs, &target64, q);
                let grad: Vec<f32> = grad.into_iter().map(|v| (v * weights.side) as f32).collect();
                seeds.push((lv, rows_to_channels(&grad, n, q, h * w)));
            }
        }
        g.backward(seeds, &mut self.store);
        g.commit_stats(&mut self.store);
        Ok(out)
    }

    fn eval(&self, input: Tensor, global: Option<Tensor>, want_logits: bool) -> (Tensor, Option<Tensor>) {
        let mut g = Graph::new(Mode::Eval);
        let x = g.input(input);
        let gv = global.map(|t| g.input(t));
        let vars = self.forward_graph(&mut g, x, gv, want_logits);
        let logits = vars.logits.map(|l| g.value(l).clone());
        (g.into_value(vars.ab), logits)
    }

    fn require(&self, variant: Variant) -> Result<()> {
        if self.variant() != variant {
            return Err(Error::ModelMismatch(format!("operation needs a {variant} model, loaded model is {}", self.variant())));
        }
        Ok(())
    }

    fn local_tensor(&self, items: &[(&GrayImage, &LocalHints)]) -> Result<(Tensor, (usize, usize))> {
        self.require(Variant::Local)?;
        let dims = items.first().ok_or(Error::EmptyImage)?.0.dims();
        for (gray, hints) in items {
            check_dims(dims, gray.dims())?;
            check_dims(dims, hints.dims())?;
        }
        let (hp, wp) = padded_dims(dims.0, dims.1);
        let plane = LOCAL_INPUT_CHANNELS * hp * wp;
        let mut data = vec![0.0; items.len() * plane];
        for (i, (gray, hints)) in items.iter().enumerate() {
            let gp = pad_gray(gray, hp, wp);
            let hp_hints = pad_hints(hints, hp, wp);
            encode_local_input(&gp, &hp_hints, &mut data[i * plane..(i + 1) * plane]);
        }
        Ok((Tensor::from_vec([items.len(), LOCAL_INPUT_CHANNELS, hp, wp], data), dims))
    }

    /// Inference-mode chrominance for each (gray, hints) pair; all pairs
    /// must share dimensions.
    pub fn forward_local_batch(&self, items: &[(&GrayImage, &LocalHints)]) -> Result<Vec<AbImage>> {
        let (input, (h, w)) = self.local_tensor(items)?;
        let (ab, _) = self.eval(input, None, false);
        Ok((0..items.len()).map(|i| crop_ab(&ab, i, h, w)).collect())
    }

    pub fn forward_local(&self, gray: &GrayImage, hints: &LocalHints) -> Result<AbImage> {
        Ok(self.forward_local_batch(&[(gray, hints)])?.remove(0))
    }

    /// Quarter-resolution color distribution from the hypercolumn head.
    pub fn forward_distribution(&self, gray: &GrayImage, hints: &LocalHints) -> Result<ColorDistribution> {
        Ok(self.predict_local(gray, hints)?.dist)
    }

    /// Both heads from a single pass.
    pub fn predict_local(&self, gray: &GrayImage, hints: &LocalHints) -> Result<LocalPrediction> {
        let (input, (h, w)) = self.local_tensor(&[(gray, hints)])?;
        let (ab, logits) = self.eval(input, None, true);
        let logits = logits.expect("local variant has a distribution head");
        Ok(LocalPrediction { ab: crop_ab(&ab, 0, h, w), dist: logits_to_distribution(&logits, h.div_ceil(4), w.div_ceil(4)) })
    }

    pub fn forward_global(&self, gray: &GrayImage, hints: &GlobalHints) -> Result<AbImage> {
        self.require(Variant::Global)?;
        if hints.q() != self.config.q {
            return Err(Error::ModelMismatch(format!("global hints have {} bins, model expects {}", hints.q(), self.config.q)));
        }
        let (h, w) = gray.dims();
        let (hp, wp) = padded_dims(h, w);
        let gp = pad_gray(gray, hp, wp);
        let mut data = vec![0.0; hp * wp];
        encode_gray_input(&gp, &mut data);
        let input = Tensor::from_vec([1, 1, hp, wp], data);
        let vec = global_vector(hints);
        let global = Tensor::from_vec([1, vec.len(), 1, 1], vec);
        let (ab, _) = self.eval(input, Some(global), false);
        Ok(crop_ab(&ab, 0, h, w))
    }

    /// Short hash of every stored value, for identifying loaded weights.
    pub fn weights_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in self.store.iter() {
            h.update(p.name.as_bytes());
            for v in &p.value {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Global hint vector with unrevealed slots forced to zero.
pub fn global_vector(hints: &GlobalHints) -> Vec<f32> {
    let mut v = hints.to_vector();
    let q = hints.q();
    if !hints.hist_flag {
        v[..q].fill(0.0);
    }
    if !hints.sat_flag {
        v[q + 1] = 0.0;
    }
    v
}

pub fn padded_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE, w.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE)
}

/// Mirror index without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflection-pads on the bottom and right.
pub fn pad_gray(gray: &GrayImage, hp: usize, wp: usize) -> GrayImage {
    if gray.dims() == (hp, wp) {
        return gray.clone();
    }
    let mut l = Vec::with_capacity(hp * wp);
    for r in 0..hp {
        let sr = reflect(r, gray.height);
        for c in 0..wp {
            l.push(gray.get(sr, reflect(c, gray.width)));
        }
    }
    GrayImage { height: hp, width: wp, l }
}

/// Zero-pads (no hints) on the bottom and right.
pub fn pad_hints(hints: &LocalHints, hp: usize, wp: usize) -> LocalHints {
    if hints.dims() == (hp, wp) {
        return hints.clone();
    }
    let mut out = LocalHints::empty(hp, wp);
    for r in 0..hints.height {
        let src = r * hints.width..(r + 1) * hints.width;
        let dst = r * wp..r * wp + hints.width;
        out.ab[dst.clone()].copy_from_slice(&hints.ab[src.clone()]);
        out.mask[dst].copy_from_slice(&hints.mask[src]);
    }
    out
}

/// Writes the normalized input planes `L/100 − 0.5`, `a/110`, `b/110`,
/// `mask` into `dst` (length `4·h·w`).
pub fn encode_local_input(gray: &GrayImage, hints: &LocalHints, dst: &mut [f32]) {
    let hw = gray.height * gray.width;
    assert_eq!(dst.len(), LOCAL_INPUT_CHANNELS * hw);
    let (l, rest) = dst.split_at_mut(hw);
    let (a, rest) = rest.split_at_mut(hw);
    let (b, m) = rest.split_at_mut(hw);
    for i in 0..hw {
        l[i] = gray.l[i] / 100.0 - 0.5;
        a[i] = hints.ab[i][0] / AB_LIMIT;
        b[i] = hints.ab[i][1] / AB_LIMIT;
        m[i] = hints.mask[i] as f32;
    }
}

pub fn encode_gray_input(gray: &GrayImage, dst: &mut [f32]) {
    for (d, &l) in dst.iter_mut().zip(&gray.l) {
        *d = l / 100.0 - 0.5;
    }
}

fn crop_ab(t: &Tensor, item: usize, h: usize, w: usize) -> AbImage {
    let (hp, wp) = (t.h(), t.w());
    let data = t.item(item);
    let mut ab = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            ab.push([data[r * wp + c], data[hp * wp + r * wp + c]]);
        }
    }
    AbImage { height: h, width: w, ab }
}

fn logits_to_distribution(t: &Tensor, h: usize, w: usize) -> ColorDistribution {
    let [_, q, hq, wq] = t.shape;
    let mut dist = ColorDistribution::zeros(h, w, q);
    let mut row = vec![0f32; q];
    for r in 0..h {
        for c in 0..w {
            for (k, v) in row.iter_mut().enumerate() {
                *v = t.data[(k * hq + r) * wq + c];
            }
            let p = softmax_rows(&row, q);
            for (d, v) in dist.row_mut(r, c).iter_mut().zip(p) {
                *d = v as f32;
            }
        }
    }
    dist
}

/// `[n, q, hw]` → `[n, hw, q]`.
pub fn channels_to_rows(data: &[f32], n: usize, q: usize, hw: usize) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for i in 0..n {
        let src = &data[i * q * hw..(i + 1) * q * hw];
        let dst = &mut out[i * q * hw..(i + 1) * q * hw];
        for k in 0..q {
            for p in 0..hw {
                dst[p * q + k] = src[k * hw + p];
            }
        }
    }
    out
}

/// `[n, hw, q]` → `[n, q, hw]`.
pub fn rows_to_channels(data: &[f32], n: usize, q: usize, hw: usize) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for i in 0..n {
        let src = &data[i * q * hw..(i + 1) * q * hw];
        let dst = &mut out[i * q * hw..(i + 1) * q * hw];
        for p in 0..hw {
            for k in 0..q {
                dst[k * hw + p] = src[p * q + k];
            }
        }
    }
    out
}
