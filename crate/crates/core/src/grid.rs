//! Dense pixel grids, per-pixel probability maps and label masks.
//!
//! All grids are stored row-major with the channel index innermost, so the
//! value at `(row, col, ch)` lives at `(row * width + col) * channels + ch`.

use crate::error::{Error, Result};

/// Tolerance on per-pixel channel sums accepted by [`ProbMap::from_grid`].
pub const SIMPLEX_TOL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value at flat index {i}")));
        }
        Ok(Grid { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "grid dimensions must be positive");
        Grid { height, width, channels, data: vec![value; height * width * channels] }
    }

    /// Builds a grid without the finiteness scan. Callers guarantee the invariants.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Grid { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Channel vector of the pixel with flat index `idx = row * width + col`.
    #[inline]
    pub fn pixel_at(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dims() == other.dims()
    }
}

/// A grid whose channels are per-pixel class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap(Grid);

impl ProbMap {
    /// Validates the simplex invariant (values in `[0, 1]`, sums within [`SIMPLEX_TOL`] of 1).
    pub fn from_grid(grid: Grid) -> Result<Self> {
        for idx in 0..grid.num_pixels() {
            let px = grid.pixel_at(idx);
            if px.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::invalid(format!("probability outside [0, 1] at pixel {idx}")));
            }
            let sum: f64 = px.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid(format!("channel sum {sum} at pixel {idx} is not 1")));
            }
        }
        Ok(ProbMap(grid))
    }

    pub(crate) fn from_grid_unchecked(grid: Grid) -> Self {
        ProbMap(grid)
    }

    /// Uniform distribution over `classes` at every pixel.
    pub fn uniform(height: usize, width: usize, classes: usize) -> Self {
        ProbMap(Grid::filled(height, width, classes, 1.0 / classes as f64))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.channels
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    #[inline]
    pub fn prob(&self, row: usize, col: usize, class: usize) -> f64 {
        self.0.get(row, col, class)
    }

    #[inline]
    pub fn pixel_at(&self, idx: usize) -> &[f64] {
        self.0.pixel_at(idx)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("mask dimensions must be positive, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "mask data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(LabelMask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        assert!(height > 0 && width > 0, "mask dimensions must be positive");
        LabelMask { height, width, data: vec![class; height * width] }
    }

    /// Parses rows of equal length, mainly for tests and small fixtures.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("ragged mask rows"));
        }
        Self::new(height, width, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, class: u8) {
        self.data[row * self.width + col] = class;
    }

    pub fn same_shape(&self, other: &LabelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Checks that every id is below `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.data.iter().position(|&v| v as usize >= num_classes) {
            Some(i) => Err(Error::invalid(format!(
                "class id {} at pixel {i} is not below {num_classes}",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn contains(&self, class: u8) -> bool {
        self.data.contains(&class)
    }

    /// Binary {0,1} mask of the pixels labelled `class`.
    pub fn binary(&self, class: u8) -> LabelMask {
        LabelMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| u8::from(v == class)).collect(),
        }
    }
}

/// Element-wise arithmetic mean of same-shaped probability maps.
pub fn average_probmaps(maps: &[ProbMap]) -> Result<ProbMap> {
    let first = maps.first().ok_or_else(|| Error::invalid("average of zero probability maps"))?;
    for (i, m) in maps.iter().enumerate().skip(1) {
        if !m.grid().same_shape(first.grid()) {
            return Err(Error::shape(format!(
                "probability map {i} has shape {:?}, expected {:?}",
                m.grid().dims(),
                first.grid().dims()
            )));
        }
    }
    if maps.len() == 1 {
        return Ok(first.clone());
    }
    let n = maps.len() as f64;
    let mut acc = vec![0.0; first.grid().data().len()];
    for m in maps {
        for (a, v) in acc.iter_mut().zip(m.grid().data()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    let (h, w, c) = first.grid().dims();
    Ok(ProbMap::from_grid_unchecked(Grid::from_raw(h, w, c, acc)))
}

/// Hard labels: per pixel the smallest class index attaining the maximum probability.
pub fn argmax_labels(p: &ProbMap) -> LabelMask {
    let g = p.grid();
    let data = (0..g.num_pixels()).map(|idx| argmax(g.pixel_at(idx)) as u8).collect();
    LabelMask { height: g.height(), width: g.width(), data }
}

#[inline]
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    Bilinear,
    Nearest,
}

/// Output length for scaling `dim` by `scale`: round half up, floored at 1.
pub fn scaled_dim(dim: usize, scale: f64) -> usize {
    ((scale * dim as f64 + 0.5).floor() as usize).max(1)
}

/// Rescales `g` by `scale` along both spatial axes.
///
/// Output dimensions are [`scaled_dim`] of the input. Sampling uses pixel-center
/// alignment, `src = (dst + 0.5) / s - 0.5` with `s = out_dim / in_dim` per axis,
/// clamped to the valid index range.
pub fn resample(g: &Grid, scale: f64, mode: ResampleMode) -> Result<Grid> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("resample scale must be positive, got {scale}")));
    }
    Ok(resize(g, scaled_dim(g.height(), scale), scaled_dim(g.width(), scale), mode))
}

/// Interpolation taps for one axis: `(i0, i1, w1)` with weight `1 - w1` on `i0`.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let s = out_len as f64 / in_len as f64;
    let max = (in_len - 1) as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) / s - 0.5).clamp(0.0, max);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            Tap { i0, i1, w1: src - i0 as f64 }
        })
        .collect()
}

fn nearest_index(in_len: usize, out_len: usize, d: usize) -> usize {
    let s = out_len as f64 / in_len as f64;
    (((d as f64 + 0.5) / s).floor() as usize).min(in_len - 1)
}

/// Resizes to an explicit `out_h x out_w`; identical dimensions return a copy.
pub fn resize(g: &Grid, out_h: usize, out_w: usize, mode: ResampleMode) -> Grid {
    assert!(out_h > 0 && out_w > 0, "resize target must be non-empty");
    let (h, w, c) = g.dims();
    if out_h == h && out_w == w {
        return g.clone();
    }
    let mut out = vec![0.0; out_h * out_w * c];
    match mode {
        ResampleMode::Nearest => {
            for y in 0..out_h {
                let sy = nearest_index(h, out_h, y);
                for x in 0..out_w {
                    let sx = nearest_index(w, out_w, x);
                    let dst = (y * out_w + x) * c;
                    out[dst..dst + c].copy_from_slice(g.pixel(sy, sx));
                }
            }
        }
        ResampleMode::Bilinear => {
            let ty = bilinear_taps(h, out_h);
            let tx = bilinear_taps(w, out_w);
            for (y, ry) in ty.iter().enumerate() {
                for (x, rx) in tx.iter().enumerate() {
                    let dst = (y * out_w + x) * c;
                    let p00 = g.pixel(ry.i0, rx.i0);
                    let p01 = g.pixel(ry.i0, rx.i1);
                    let p10 = g.pixel(ry.i1, rx.i0);
                    let p11 = g.pixel(ry.i1, rx.i1);
                    for ch in 0..c {
                        let top = p00[ch] * (1.0 - rx.w1) + p01[ch] * rx.w1;
                        let bottom = p10[ch] * (1.0 - rx.w1) + p11[ch] * rx.w1;
                        out[dst + ch] = top * (1.0 - ry.w1) + bottom * ry.w1;
                    }
                }
            }
        }
    }
    Grid::from_raw(out_h, out_w, c, out)
}

/// Adjoint of bilinear [`resize`]: maps a gradient on the resized grid back to
/// a gradient on the `in_h x in_w` source grid.
pub fn resize_bilinear_adjoint(grad_out: &Grid, in_h: usize, in_w: usize) -> Grid {
    let (out_h, out_w, c) = grad_out.dims();
    if out_h == in_h && out_w == in_w {
        return grad_out.clone();
    }
    let ty = bilinear_taps(in_h, out_h);
    let tx = bilinear_taps(in_w, out_w);
    let mut acc = vec![0.0; in_h * in_w * c];
    for (y, ry) in ty.iter().enumerate() {
        for (x, rx) in tx.iter().enumerate() {
            let g = grad_out.pixel(y, x);
            let taps = [
                (ry.i0, rx.i0, (1.0 - ry.w1) * (1.0 - rx.w1)),
                (ry.i0, rx.i1, (1.0 - ry.w1) * rx.w1),
                (ry.i1, rx.i0, ry.w1 * (1.0 - rx.w1)),
                (ry.i1, rx.i1, ry.w1 * rx.w1),
            ];
            for (sy, sx, wt) in taps {
                let base = (sy * in_w + sx) * c;
                for ch in 0..c {
                    acc[base + ch] += wt * g[ch];
                }
            }
        }
    }
    Grid::from_raw(in_h, in_w, c, acc)
}

/// Divides every pixel by its channel sum.
pub fn renormalize(p: &Grid) -> Result<ProbMap> {
    let c = p.channels();
    let mut data = p.data().to_vec();
    for (idx, px) in data.chunks_exact_mut(c).enumerate() {
        if px.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid(format!("negative probability at pixel {idx}")));
        }
        let sum: f64 = px.iter().sum();
        if sum <= 0.0 {
            return Err(Error::invalid(format!("all-zero channels at pixel {idx}")));
        }
        px.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(ProbMap::from_grid_unchecked(Grid::from_raw(p.height(), p.width(), c, data)))
}

/// Gradient through [`renormalize`]: given `dL/dp` at the output and the
/// un-normalized input `u`, returns `dL/du`.
pub fn renormalize_backward(u: &Grid, grad_p: &Grid) -> Grid {
    let c = u.channels();
    let mut out = vec![0.0; u.data().len()];
    for idx in 0..u.num_pixels() {
        let uu = u.pixel_at(idx);
        let gp = grad_p.pixel_at(idx);
        let sum: f64 = uu.iter().sum();
        let dot: f64 = uu.iter().zip(gp).map(|(a, b)| a * b).sum::<f64>() / sum;
        for ch in 0..c {
            out[idx * c + ch] = (gp[ch] - dot) / sum;
        }
    }
    Grid::from_raw(u.height(), u.width(), c, out)
}
