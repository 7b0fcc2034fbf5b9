//! Multiscale prediction averaging and the scale-consistency regularizer.
//!
//! The input is rescaled by each factor of a [`ScaleSet`], the model output at
//! every scale is resampled back to the input resolution (`p_k`) and averaged
//! into `q`. The regularizer is the mean over scales and confident pixels of
//! `KL(p_k || q)`; a pixel is confident when `max_c q_c >= rho`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{average_probmaps, renormalize, resample, resize, Grid, ProbMap, ResampleMode};

/// Floor applied inside logarithms.
pub const LOG_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScaleSet(Vec<f64>);

impl ScaleSet {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        let s = ScaleSet(scales);
        let p = s.problems();
        if p.is_empty() {
            Ok(s)
        } else {
            Err(Error::invalid(p.join("; ")))
        }
    }

    pub fn single() -> Self {
        ScaleSet(vec![1.0])
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !self.0.contains(&1.0) {
            p.push(format!("scale set {:?} must contain 1.0", self.0));
        }
        if let Some(bad) = self.0.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            p.push(format!("scale factor {bad} must be positive"));
        }
        p
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ScaleSet {
    fn default() -> Self {
        ScaleSet(vec![0.7, 1.0, 1.5])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Gate each pixel on its own `max_c q_c`.
    Pixel,
    /// Gate the whole example on the mean over pixels of `max_c q_c`.
    Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsistencyConfig {
    pub lambda: f64,
    pub rho: f64,
    pub gate: GateMode,
    /// Treat `q` as a constant when differentiating.
    pub stop_grad_q: bool,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig { lambda: 1.0, rho: 0.8, gate: GateMode::Pixel, stop_grad_q: false }
    }
}

impl ConsistencyConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            p.push(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            p.push(format!("rho must be in [0, 1], got {}", self.rho));
        }
        p
    }
}

/// A segmentation model that maps an image to per-pixel class probabilities
/// at the same spatial size.
pub trait SegModel {
    fn num_classes(&self) -> usize;

    /// Smallest accepted input height/width.
    fn min_input_size(&self) -> usize {
        1
    }

    fn predict(&self, x: &Grid) -> Result<ProbMap>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiscaleOutput {
    /// Per-scale predictions at the input resolution.
    pub per_scale: Vec<ProbMap>,
    pub q: ProbMap,
}

/// Resamples a model output back to `h x w` and restores the simplex.
/// Outputs already at that size are returned untouched.
pub fn to_common_size(p: &ProbMap, h: usize, w: usize) -> Result<ProbMap> {
    if p.height() == h && p.width() == w {
        return Ok(p.clone());
    }
    renormalize(&resize(p.grid(), h, w, ResampleMode::Bilinear))
}

pub fn multiscale_forward<M: SegModel + ?Sized>(model: &M, x: &Grid, scales: &ScaleSet) -> Result<MultiscaleOutput> {
    let (h, w) = (x.height(), x.width());
    let mut per_scale = Vec::with_capacity(scales.len());
    for &s in scales.as_slice() {
        let xs = resample(x, s, ResampleMode::Bilinear)?;
        if xs.height().min(xs.width()) < model.min_input_size() {
            return Err(Error::invalid(format!(
                "scale {s} gives a {}x{} input, below the model minimum {}",
                xs.height(),
                xs.width(),
                model.min_input_size()
            )));
        }
        per_scale.push(to_common_size(&model.predict(&xs)?, h, w)?);
    }
    let q = average_probmaps(&per_scale)?;
    Ok(MultiscaleOutput { per_scale, q })
}

fn check_same(ps: &[ProbMap], q: &ProbMap) -> Result<()> {
    if ps.is_empty() {
        return Err(Error::invalid("consistency needs at least one scale"));
    }
    if let Some(i) = ps.iter().position(|p| p.grid().dims() != q.grid().dims()) {
        return Err(Error::shape(format!("scale {i} prediction does not match q")));
    }
    Ok(())
}

/// Pixels on which the regularizer is active.
pub fn gate_mask(q: &ProbMap, rho: f64, mode: GateMode) -> Vec<bool> {
    let maxes: Vec<f64> = (0..q.grid().num_pixels())
        .map(|i| q.pixel_at(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    match mode {
        GateMode::Pixel => maxes.iter().map(|&m| m >= rho).collect(),
        GateMode::Image => {
            let on = maxes.iter().sum::<f64>() / maxes.len() as f64 >= rho;
            vec![on; maxes.len()]
        }
    }
}

#[inline]
fn kl_term(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p.max(LOG_FLOOR).ln() - q.max(LOG_FLOOR).ln())
    }
}

/// Mean of `KL(p_k || q)` over scales and gated pixels; 0 when nothing is gated.
pub fn consistency_loss(ps: &[ProbMap], q: &ProbMap, rho: f64, mode: GateMode) -> Result<(f64, Vec<bool>)> {
    check_same(ps, q)?;
    let gate = gate_mask(q, rho, mode);
    let gated = gate.iter().filter(|&&g| g).count();
    if gated == 0 {
        return Ok((0.0, gate));
    }
    let mut total = 0.0;
    for p in ps {
        for (idx, _) in gate.iter().enumerate().filter(|(_, g)| **g) {
            let qq = q.pixel_at(idx);
            total += p.pixel_at(idx).iter().zip(qq).map(|(&a, &b)| kl_term(a, b)).sum::<f64>();
        }
    }
    Ok((total / (ps.len() * gated) as f64, gate))
}

/// Gradient of [`consistency_loss`] with respect to each `p_k`, differentiating
/// through `q = mean_k p_k` unless `stop_grad_q`. The gate is held fixed.
pub fn consistency_grad_probs(
    ps: &[ProbMap],
    q: &ProbMap,
    rho: f64,
    mode: GateMode,
    stop_grad_q: bool,
) -> Result<Vec<Grid>> {
    check_same(ps, q)?;
    let (h, w, k) = q.grid().dims();
    let gate = gate_mask(q, rho, mode);
    let gated = gate.iter().filter(|&&g| g).count();
    let mut grads = vec![vec![0.0; h * w * k]; ps.len()];
    if gated == 0 {
        return Ok(grads.into_iter().map(|d| Grid::from_raw(h, w, k, d)).collect());
    }
    let s = ps.len() as f64;
    let norm = 1.0 / (s * gated as f64);
    let mut via_q = vec![0.0; k];
    for (idx, _) in gate.iter().enumerate().filter(|(_, g)| **g) {
        let qq = q.pixel_at(idx);
        via_q.iter_mut().for_each(|v| *v = 0.0);
        if !stop_grad_q {
            for p in ps {
                for (c, &pc) in p.pixel_at(idx).iter().enumerate() {
                    if qq[c] > LOG_FLOOR {
                        via_q[c] -= pc / qq[c];
                    }
                }
            }
            via_q.iter_mut().for_each(|v| *v /= s);
        }
        for (g, p) in grads.iter_mut().zip(ps) {
            for (c, &pc) in p.pixel_at(idx).iter().enumerate() {
                let direct = if pc > LOG_FLOOR {
                    pc.ln() - qq[c].max(LOG_FLOOR).ln() + 1.0
                } else {
                    LOG_FLOOR.ln() - qq[c].max(LOG_FLOOR).ln()
                };
                g[idx * k + c] = norm * (direct + via_q[c]);
            }
        }
    }
    Ok(grads.into_iter().map(|d| Grid::from_raw(h, w, k, d)).collect())
}

/// Backpropagates `dL/dp` through a per-pixel softmax `p = softmax(z)`.
pub fn softmax_backward(p: &ProbMap, grad_p: &Grid) -> Grid {
    let (h, w, k) = p.grid().dims();
    let mut out = vec![0.0; h * w * k];
    for idx in 0..h * w {
        let pp = p.pixel_at(idx);
        let gp = grad_p.pixel_at(idx);
        let dot: f64 = pp.iter().zip(gp).map(|(a, b)| a * b).sum();
        for c in 0..k {
            out[idx * k + c] = pp[c] * (gp[c] - dot);
        }
    }
    Grid::from_raw(h, w, k, out)
}

/// Gradient of [`consistency_loss`] with respect to the logits of each `p_k`,
/// for predictions produced at the common resolution (`p_k = softmax(z_k)`).
pub fn consistency_grad(
    ps: &[ProbMap],
    q: &ProbMap,
    rho: f64,
    mode: GateMode,
    stop_grad_q: bool,
) -> Result<Vec<Grid>> {
    let gp = consistency_grad_probs(ps, q, rho, mode, stop_grad_q)?;
    Ok(ps.iter().zip(&gp).map(|(p, g)| softmax_backward(p, g)).collect())
}
