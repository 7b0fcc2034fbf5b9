//! A small fully-convolutional segmentation network with explicit backprop.
//!
//! Every layer is a "same"-padded convolution over HWC grids; hidden layers use
//! ReLU and the last layer is a 1x1 convolution to the class logits, followed
//! by a per-pixel softmax.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;

use crate::consistency::{
    consistency_grad_probs, consistency_loss, multiscale_forward, softmax_backward, ConsistencyConfig, ScaleSet, SegModel,
};
use crate::error::{Error, Result};
use crate::grid::{
    average_probmaps, renormalize, renormalize_backward, resample, resize, resize_bilinear_adjoint, Grid, LabelMask,
    ProbMap, ResampleMode,
};
use crate::rng::{stream, StreamTag};

mod gemm;
use gemm::{gemm, View};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kernel: usize,
    pub out_channels: usize,
    pub activation: Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Normal with std `sqrt(2 / fan_in)`, zero biases.
    HeNormal,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// Hidden layers; a 1x1 convolution to the class logits is always appended.
    pub hidden: Vec<LayerSpec>,
    pub init: InitScheme,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let relu3 = |out| LayerSpec { kernel: 3, out_channels: out, activation: Activation::Relu };
        ModelSpec { hidden: vec![relu3(16), relu3(16)], init: InitScheme::HeNormal }
    }
}

impl ModelSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        for (i, l) in self.hidden.iter().enumerate() {
            if l.kernel == 0 || l.kernel % 2 == 0 {
                p.push(format!("model.hidden[{i}].kernel must be odd, got {}", l.kernel));
            }
            if l.out_channels == 0 {
                p.push(format!("model.hidden[{i}].out_channels must be >= 1"));
            }
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerLayout {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub activation: Activation,
    /// Offset of the `[ky][kx][cin][cout]` weight block.
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerLayout {
    fn weight_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub in_channels: usize,
    pub num_classes: usize,
    pub layers: Vec<LayerLayout>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, in_channels: usize, num_classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut cin = in_channels;
        let last = LayerSpec { kernel: 1, out_channels: num_classes, activation: Activation::Identity };
        for l in spec.hidden.iter().chain(std::iter::once(&last)) {
            let mut lay = LayerLayout {
                kernel: l.kernel,
                in_channels: cin,
                out_channels: l.out_channels,
                activation: l.activation,
                weight_offset: offset,
                bias_offset: 0,
            };
            offset += lay.weight_len();
            lay.bias_offset = offset;
            offset += l.out_channels;
            cin = l.out_channels;
            layers.push(lay);
        }
        ParamLayout { in_channels, num_classes, layers, len: offset }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ModelParams,
}

/// Intermediate values retained for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of every layer; `inputs[i + 1]` is the activated output of layer `i`.
    pub inputs: Vec<Grid>,
    pub logits: Grid,
    pub probs: ProbMap,
}

impl Model {
    pub fn new(spec: ModelSpec, in_channels: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let problems = spec.problems();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        if in_channels == 0 || num_classes < 2 {
            return Err(Error::invalid(format!(
                "model needs >= 1 input channel and >= 2 classes, got {in_channels} and {num_classes}"
            )));
        }
        let layout = ParamLayout::new(&spec, in_channels, num_classes);
        let mut values = vec![0.0; layout.len];
        if spec.init == InitScheme::HeNormal {
            let mut rng = stream(seed, StreamTag::Init, 0);
            for l in &layout.layers {
                let fan_in = (l.kernel * l.kernel * l.in_channels) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                for v in &mut values[l.weight_offset..l.weight_offset + l.weight_len()] {
                    *v = normal.sample(&mut rng);
                }
            }
        }
        Ok(Model { spec, params: ModelParams { layout, values } })
    }

    pub fn from_params(spec: ModelSpec, in_channels: usize, num_classes: usize, values: Vec<f64>) -> Result<Self> {
        let layout = ParamLayout::new(&spec, in_channels, num_classes);
        if values.len() != layout.len {
            return Err(Error::CountMismatch(format!(
                "model expects {} parameters, got {}",
                layout.len,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".to_string()));
        }
        Ok(Model { spec, params: ModelParams { layout, values } })
    }

    pub fn in_channels(&self) -> usize {
        self.params.layout.in_channels
    }

    pub fn num_params(&self) -> usize {
        self.params.layout.len
    }

    pub fn forward(&self, x: &Grid) -> Result<ForwardCache> {
        if x.channels() != self.in_channels() {
            return Err(Error::shape(format!(
                "input has {} channels, model expects {}",
                x.channels(),
                self.in_channels()
            )));
        }
        let layers = &self.params.layout.layers;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut cur = x.clone();
        for (i, l) in layers.iter().enumerate() {
            let w = &self.params.values[l.weight_offset..l.weight_offset + l.weight_len()];
            let b = &self.params.values[l.bias_offset..l.bias_offset + l.out_channels];
            let out = conv_forward(&cur, w, b, l);
            inputs.push(cur);
            cur = out;
            if i + 1 == layers.len() {
                break;
            }
        }
        let probs = softmax(&cur);
        Ok(ForwardCache { inputs, logits: cur, probs })
    }

    /// Accumulates into `grad` the parameter gradient for an upstream gradient at the logits.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Grid, grad: &mut [f64]) -> Result<()> {
        if grad_logits.dims() != cache.logits.dims() {
            return Err(Error::shape("logit gradient does not match the forward pass"));
        }
        if grad.len() != self.num_params() {
            return Err(Error::shape(format!("gradient buffer has {} entries, expected {}", grad.len(), self.num_params())));
        }
        let layers = &self.params.layout.layers;
        let mut upstream = grad_logits.clone();
        for i in (0..layers.len()).rev() {
            let l = &layers[i];
            let input = &cache.inputs[i];
            let w = &self.params.values[l.weight_offset..l.weight_offset + l.weight_len()];
            let (gw, rest) = grad[l.weight_offset..].split_at_mut(l.weight_len());
            let gb = &mut rest[..l.out_channels];
            let need_input_grad = i > 0;
            let grad_in = conv_backward(input, &upstream, w, l, gw, gb, need_input_grad);
            if let Some(mut g) = grad_in {
                // input of layer i is the activated output of layer i - 1
                if layers[i - 1].activation == Activation::Relu {
                    for (gv, &a) in g.data_mut().iter_mut().zip(input.data()) {
                        if a <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
                upstream = g;
            }
        }
        Ok(())
    }
}

impl SegModel for Model {
    fn num_classes(&self) -> usize {
        self.params.layout.num_classes
    }

    fn predict(&self, x: &Grid) -> Result<ProbMap> {
        Ok(self.forward(x)?.probs)
    }
}

/// Fills `col` with one row per output pixel, laid out `[ky][kx][cin]` to
/// match the weight rows. Out-of-bounds taps are zero.
fn im2col(input: &Grid, k: usize, col: &mut Vec<f64>) {
    let (h, wd, cin) = input.dims();
    let pad = k / 2;
    let kd = k * k * cin;
    let src = input.data();
    col.clear();
    col.resize(h * wd * kd, 0.0);
    for y in 0..h {
        for x in 0..wd {
            let row = &mut col[(y * wd + x) * kd..(y * wd + x + 1) * kd];
            for ky in 0..k {
                let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else { continue };
                for kx in 0..k {
                    let Some(ix) = (x + kx).checked_sub(pad).filter(|&v| v < wd) else { continue };
                    let t = (ky * k + kx) * cin;
                    row[t..t + cin].copy_from_slice(&src[(iy * wd + ix) * cin..(iy * wd + ix + 1) * cin]);
                }
            }
        }
    }
}

thread_local! {
    // patch and patch-gradient buffers reused across calls; fresh multi-megabyte
    // allocations cost more in page faults than the copies themselves
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Runs `f` on the patch matrix of `input`, borrowing the input directly for 1x1 kernels.
fn with_patches<R>(input: &Grid, k: usize, f: impl FnOnce(&[f64], &mut Vec<f64>) -> R) -> R {
    SCRATCH.with(|s| {
        let (col, spare) = &mut *s.borrow_mut();
        if k == 1 {
            f(input.data(), spare)
        } else {
            im2col(input, k, col);
            f(col, spare)
        }
    })
}

fn conv_forward(input: &Grid, w: &[f64], b: &[f64], l: &LayerLayout) -> Grid {
    let (h, wd, cin) = input.dims();
    let (k, cout) = (l.kernel, l.out_channels);
    let kd = k * k * cin;
    let p = h * wd;
    let mut out = vec![0.0; p * cout];
    for o in out.chunks_exact_mut(cout) {
        o.copy_from_slice(b);
    }
    with_patches(input, k, |col, _| gemm(p, cout, kd, View { data: col, rs: kd, cs: 1 }, w, cout, &mut out, cout));
    if l.activation == Activation::Relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    Grid::from_raw(h, wd, cout, out)
}

/// `grad_out` is the gradient at the layer's pre-activation output.
fn conv_backward(
    input: &Grid,
    grad_out: &Grid,
    w: &[f64],
    l: &LayerLayout,
    gw: &mut [f64],
    gb: &mut [f64],
    need_input_grad: bool,
) -> Option<Grid> {
    let (h, wd, cin) = input.dims();
    let (k, cout) = (l.kernel, l.out_channels);
    let pad = k / 2;
    let kd = k * k * cin;
    let p = h * wd;
    let go = grad_out.data();
    for g in go.chunks_exact(cout) {
        for (bv, &gv) in gb.iter_mut().zip(g) {
            *bv += gv;
        }
    }
    with_patches(input, k, |col, gcol| {
        gemm(kd, cout, p, View { data: col, rs: 1, cs: kd }, go, cout, gw, cout);
        if !need_input_grad {
            return None;
        }
        let mut wt = vec![0.0; w.len()];
        for j in 0..kd {
            for co in 0..cout {
                wt[co * kd + j] = w[j * cout + co];
            }
        }
        gcol.clear();
        gcol.resize(p * kd, 0.0);
        gemm(p, kd, cout, View { data: go, rs: cout, cs: 1 }, &wt, kd, gcol, kd);
        if k == 1 {
            return Some(Grid::from_raw(h, wd, cin, gcol.clone()));
        }
        let mut gin = vec![0.0; p * cin];
        for y in 0..h {
            for x in 0..wd {
                let row = &gcol[(y * wd + x) * kd..(y * wd + x + 1) * kd];
                for ky in 0..k {
                    let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < h) else { continue };
                    for kx in 0..k {
                        let Some(ix) = (x + kx).checked_sub(pad).filter(|&v| v < wd) else { continue };
                        let t = (ky * k + kx) * cin;
                        let gi = &mut gin[(iy * wd + ix) * cin..(iy * wd + ix + 1) * cin];
                        for (a, &v) in gi.iter_mut().zip(&row[t..t + cin]) {
                            *a += v;
                        }
                    }
                }
            }
        }
        Some(Grid::from_raw(h, wd, cin, gin))
    })
}

/// Per-pixel softmax over channels.
pub fn softmax(logits: &Grid) -> ProbMap {
    let (h, w, k) = logits.dims();
    let mut out = logits.data().to_vec();
    for px in out.chunks_exact_mut(k) {
        let m = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in px.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        px.iter_mut().for_each(|v| *v /= s);
    }
    ProbMap::from_grid_unchecked(Grid::from_raw(h, w, k, out))
}

/// Floor on probabilities inside the cross-entropy logarithm.
pub const CE_FLOOR: f64 = 1e-12;

/// Mean per-pixel cross-entropy and its gradient with respect to `p`.
pub fn cross_entropy(p: &ProbMap, labels: &LabelMask) -> Result<(f64, Grid)> {
    if p.height() != labels.height() || p.width() != labels.width() {
        return Err(Error::shape("prediction and annotation sizes differ"));
    }
    let (h, w, k) = p.grid().dims();
    let n = (h * w) as f64;
    let mut grad = vec![0.0; h * w * k];
    let mut loss = 0.0;
    for (idx, &y) in labels.data().iter().enumerate() {
        let y = y as usize;
        if y >= k {
            return Err(Error::invalid(format!("label {y} at pixel {idx} is not below {k}")));
        }
        let py = p.pixel_at(idx)[y];
        loss -= py.max(CE_FLOOR).ln();
        if py > CE_FLOOR {
            grad[idx * k + y] = -1.0 / (py * n);
        }
    }
    Ok((loss / n, Grid::from_raw(h, w, k, grad)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub cross_entropy: f64,
    pub consistency: f64,
    pub total: f64,
}

/// Result of one example's forward/backward under the composite objective.
#[derive(Clone, Debug)]
pub struct ExampleStep {
    pub loss: LossTerms,
    pub per_scale: Vec<ProbMap>,
    pub q: ProbMap,
}

/// Composite objective for one example:
/// mean over scales of the cross-entropy of `p_k` against `labels`, plus
/// `lambda` times the consistency loss when `consistency` is given.
/// Adds the parameter gradient (scaled by `weight`) into `grad`.
pub fn composite_loss_and_grad(
    model: &Model,
    x: &Grid,
    labels: &LabelMask,
    scales: &ScaleSet,
    consistency: Option<&ConsistencyConfig>,
    weight: f64,
    grad: &mut [f64],
) -> Result<ExampleStep> {
    let (h, w) = (x.height(), x.width());
    let s = scales.len() as f64;
    let mut caches = Vec::with_capacity(scales.len());
    let mut resized = Vec::with_capacity(scales.len());
    let mut per_scale = Vec::with_capacity(scales.len());
    for &scale in scales.as_slice() {
        let xs = resample(x, scale, ResampleMode::Bilinear)?;
        let cache = model.forward(&xs)?;
        if cache.probs.height() == h && cache.probs.width() == w {
            per_scale.push(cache.probs.clone());
            resized.push(None);
        } else {
            let u = resize(cache.probs.grid(), h, w, ResampleMode::Bilinear);
            per_scale.push(renormalize(&u)?);
            resized.push(Some(u));
        }
        caches.push(cache);
    }
    let q = average_probmaps(&per_scale)?;

    let mut grads_p = Vec::with_capacity(per_scale.len());
    let mut ce_total = 0.0;
    for p in &per_scale {
        let (ce, g) = cross_entropy(p, labels)?;
        ce_total += ce / s;
        grads_p.push(g);
    }
    for g in &mut grads_p {
        g.data_mut().iter_mut().for_each(|v| *v /= s);
    }
    let mut cons_loss = 0.0;
    if let Some(cfg) = consistency.filter(|c| c.lambda > 0.0) {
        let (l, _) = consistency_loss(&per_scale, &q, cfg.rho, cfg.gate)?;
        cons_loss = l;
        if l > 0.0 {
            let cg = consistency_grad_probs(&per_scale, &q, cfg.rho, cfg.gate, cfg.stop_grad_q)?;
            for (g, c) in grads_p.iter_mut().zip(cg) {
                for (a, b) in g.data_mut().iter_mut().zip(c.data()) {
                    *a += cfg.lambda * b;
                }
            }
        }
    }
    let lambda = consistency.map_or(0.0, |c| c.lambda);
    let loss = LossTerms { cross_entropy: ce_total, consistency: cons_loss, total: ce_total + lambda * cons_loss };

    for ((cache, u), gp) in caches.iter().zip(&resized).zip(grads_p) {
        let mut gp = gp;
        if weight != 1.0 {
            gp.data_mut().iter_mut().for_each(|v| *v *= weight);
        }
        let g_small = match u {
            None => gp,
            Some(u) => {
                let gu = renormalize_backward(u, &gp);
                resize_bilinear_adjoint(&gu, cache.probs.height(), cache.probs.width())
            }
        };
        let g_logits = softmax_backward(&cache.probs, &g_small);
        model.backward(cache, &g_logits, grad)?;
    }
    Ok(ExampleStep { loss, per_scale, q })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 0.01, momentum: 0.9, weight_decay: 0.0, batch_size: 8 }
    }
}

impl OptimConfig {
    /// Learning rates searched for the default.
    pub const LR_SWEEP: [f64; 5] = [0.1, 0.01, 0.001, 0.0001, 0.00001];

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            p.push(format!("optim.lr must be > 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            p.push(format!("optim.momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            p.push(format!("optim.weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            p.push("optim.batch_size must be >= 1".to_string());
        }
        p
    }
}

/// Momentum SGD with L2 weight decay:
/// `v <- momentum * v + (g + wd * theta)`, `theta <- theta - lr * v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(num_params: usize) -> Self {
        Sgd { velocity: vec![0.0; num_params] }
    }
}

pub fn sgd_step(params: &mut ModelParams, opt: &mut Sgd, grad: &[f64], cfg: &OptimConfig) -> Result<()> {
    if grad.len() != params.values.len() || opt.velocity.len() != params.values.len() {
        return Err(Error::shape("gradient/velocity length does not match the parameters"));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    for ((theta, v), &g) in params.values.iter_mut().zip(opt.velocity.iter_mut()).zip(grad) {
        *v = cfg.momentum * *v + g + cfg.weight_decay * *theta;
        *theta -= cfg.lr * *v;
    }
    if params.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameters after SGD step".to_string()));
    }
    Ok(())
}

/// Unaugmented multiscale-averaged predictions `q` for each image.
pub fn predict_dataset<'a, I>(model: &Model, images: I, scales: &ScaleSet) -> Result<Vec<ProbMap>>
where
    I: IntoIterator<Item = &'a Grid>,
{
    images.into_iter().map(|x| multiscale_forward(model, x, scales).map(|o| o.q)).collect()
}
