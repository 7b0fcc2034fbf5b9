//! Synthetic multi-class segmentation data and morphological annotation noise.
//!
//! Over-annotation is simulated by dilation and under-annotation by erosion of
//! each class mask with a 3x3 square structuring element; the "degree" of the
//! noise is the number of iterations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMask};
use crate::metrics::{pooled_miou, IoUReport};
use crate::rng::{stream, StreamTag};

/// Iterated binary dilation with a 3x3 square. Pixels outside the image count as 0.
pub fn dilate(mask: &LabelMask, iterations: usize) -> LabelMask {
    let mut cur = mask.clone();
    for _ in 0..iterations {
        cur = morph_step(&cur, true);
    }
    cur
}

/// Iterated binary erosion with a 3x3 square. Pixels outside the image count as 0,
/// so border pixels are always eroded.
pub fn erode(mask: &LabelMask, iterations: usize) -> LabelMask {
    let mut cur = mask.clone();
    for _ in 0..iterations {
        cur = morph_step(&cur, false);
    }
    cur
}

// One separable pass: max (dilate) or min (erode) over rows, then columns.
fn morph_step(mask: &LabelMask, is_dilate: bool) -> LabelMask {
    let (h, w) = (mask.height(), mask.width());
    let src = mask.data();
    let combine = |a: u8, b: u8| if is_dilate { a | b } else { a & b };
    let mut horiz = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let left = if x > 0 { src[y * w + x - 1] } else { 0 };
            let right = if x + 1 < w { src[y * w + x + 1] } else { 0 };
            horiz[y * w + x] = combine(combine(left, src[y * w + x]), right);
        }
    }
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let up = if y > 0 { horiz[(y - 1) * w + x] } else { 0 };
            let down = if y + 1 < h { horiz[(y + 1) * w + x] } else { 0 };
            out[y * w + x] = combine(combine(up, horiz[y * w + x]), down);
        }
    }
    LabelMask::new(h, w, out).expect("dimensions preserved")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Upper bound (inclusive) of the per-example iteration count.
    pub max_iterations: usize,
    /// Probability of dilation; erosion otherwise.
    pub p_dilate: f64,
    /// Corrupt each foreground class independently instead of the foreground union.
    pub per_class: bool,
    /// Optional per-class override of `p_dilate`, indexed by foreground class id - 1.
    pub class_p_dilate: Vec<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { max_iterations: 3, p_dilate: 0.5, per_class: true, class_p_dilate: Vec::new() }
    }
}

impl NoiseConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(0.0..=1.0).contains(&self.p_dilate) {
            p.push(format!("noise.p_dilate must be in [0, 1], got {}", self.p_dilate));
        }
        for (i, v) in self.class_p_dilate.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                p.push(format!("noise.class_p_dilate[{i}] must be in [0, 1], got {v}"));
            }
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Morph {
    Dilate(usize),
    Erode(usize),
}

/// Draws the type and degree from two uniforms so that, for a fixed stream,
/// the degree is non-decreasing in `max_iterations`.
fn draw_morph(cfg: &NoiseConfig, p_dilate: f64, rng: &mut ChaCha8Rng) -> Morph {
    let dilate = rng.random::<f64>() < p_dilate;
    let u: f64 = rng.random();
    let iters = ((u * (cfg.max_iterations + 1) as f64) as usize).min(cfg.max_iterations);
    if dilate {
        Morph::Dilate(iters)
    } else {
        Morph::Erode(iters)
    }
}

/// Corrupts a clean annotation with random dilation/erosion.
///
/// Foreground classes are processed in ascending id order; dilated pixels are
/// painted over whatever was there before, eroded pixels fall back to class 0.
pub fn corrupt_mask(clean: &LabelMask, cfg: &NoiseConfig, rng: &mut ChaCha8Rng) -> LabelMask {
    if cfg.max_iterations == 0 {
        return clean.clone();
    }
    let present: Vec<u8> = {
        let mut seen = [false; 256];
        clean.data().iter().for_each(|&v| seen[v as usize] = true);
        (1..=255u8).filter(|&c| seen[c as usize]).collect()
    };
    if cfg.per_class {
        let ops: Vec<(u8, Morph)> = present
            .iter()
            .map(|&c| {
                let p = cfg.class_p_dilate.get(c as usize - 1).copied().unwrap_or(cfg.p_dilate);
                (c, draw_morph(cfg, p, rng))
            })
            .collect();
        compose(clean, &ops)
    } else {
        let op = draw_morph(cfg, cfg.p_dilate, rng);
        match op {
            Morph::Dilate(_) => {
                let ops: Vec<(u8, Morph)> = present.iter().map(|&c| (c, op)).collect();
                compose(clean, &ops)
            }
            Morph::Erode(k) => {
                let fg = LabelMask::new(
                    clean.height(),
                    clean.width(),
                    clean.data().iter().map(|&v| u8::from(v != 0)).collect(),
                )
                .expect("same shape");
                let kept = erode(&fg, k);
                let data = clean.data().iter().zip(kept.data()).map(|(&v, &k)| if k == 1 { v } else { 0 }).collect();
                LabelMask::new(clean.height(), clean.width(), data).expect("same shape")
            }
        }
    }
}

fn compose(clean: &LabelMask, ops: &[(u8, Morph)]) -> LabelMask {
    let mut out = LabelMask::filled(clean.height(), clean.width(), 0);
    for &(class, op) in ops {
        let b = clean.binary(class);
        let transformed = match op {
            Morph::Dilate(k) => dilate(&b, k),
            Morph::Erode(k) => erode(&b, k),
        };
        for (o, &t) in out.data_mut().iter_mut().zip(transformed.data()) {
            if t == 1 {
                *o = class;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Ring,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub shape: ShapeKind,
    /// Half-extent range in pixels `[min, max]`.
    pub size_range: [f64; 2],
    /// Probability that an example contains this class.
    pub frequency: f64,
    /// Mean feature value per channel.
    pub intensity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_train: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub background_intensity: Vec<f64>,
    /// Foreground classes 1..K; class 0 is background.
    pub classes: Vec<ClassSpec>,
    pub feature_noise_sigma: f64,
    /// Minimum free pixels between two shapes.
    pub min_gap: usize,
    pub max_placement_attempts: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let class = |name: &str, shape, size_range, frequency, intensity: Vec<f64>| ClassSpec {
            name: name.to_string(),
            shape,
            size_range,
            frequency,
            intensity,
        };
        SynthConfig {
            num_train: 24,
            num_val: 16,
            num_test: 16,
            height: 32,
            width: 32,
            channels: 3,
            background_intensity: vec![0.0, 0.0, 0.0],
            classes: vec![
                class("disc", ShapeKind::Ellipse, [6.0, 10.0], 0.9, vec![1.0, 0.0, 0.0]),
                class("box", ShapeKind::Rectangle, [3.0, 6.0], 0.6, vec![0.0, 1.0, 0.0]),
                class("ring", ShapeKind::Ring, [4.0, 7.0], 0.4, vec![0.0, 0.0, 1.0]),
            ],
            feature_noise_sigma: 0.3,
            min_gap: 2,
            max_placement_attempts: 200,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.classes.len() + 1
    }

    pub fn num_examples(&self) -> usize {
        self.num_train + self.num_val + self.num_test
    }

    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.classes.is_empty() {
            p.push("synth.classes must list at least one foreground class (K >= 2)".to_string());
        }
        if self.classes.len() > 254 {
            p.push("synth.classes supports at most 254 foreground classes".to_string());
        }
        if self.height == 0 || self.width == 0 {
            p.push(format!("synth image size must be positive, got {}x{}", self.height, self.width));
        }
        if self.channels == 0 {
            p.push("synth.channels must be >= 1".to_string());
        }
        if self.background_intensity.len() != self.channels {
            p.push(format!(
                "synth.background_intensity has {} entries, expected {}",
                self.background_intensity.len(),
                self.channels
            ));
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            p.push(format!("synth.feature_noise_sigma must be >= 0, got {}", self.feature_noise_sigma));
        }
        if self.num_train == 0 {
            p.push("synth.num_train must be >= 1".to_string());
        }
        let half = self.height.min(self.width) as f64 / 2.0;
        for (i, c) in self.classes.iter().enumerate() {
            let [lo, hi] = c.size_range;
            if !(lo >= 1.0 && hi >= lo) {
                p.push(format!("synth.classes[{i}].size_range must satisfy 1 <= min <= max, got [{lo}, {hi}]"));
            }
            if hi >= half {
                p.push(format!("synth.classes[{i}].size_range max {hi} does not fit a {}x{} image", self.height, self.width));
            }
            if !(0.0..=1.0).contains(&c.frequency) {
                p.push(format!("synth.classes[{i}].frequency must be in [0, 1], got {}", c.frequency));
            }
            if c.intensity.len() != self.channels {
                p.push(format!(
                    "synth.classes[{i}].intensity has {} entries, expected {}",
                    c.intensity.len(),
                    self.channels
                ));
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub synth: SynthConfig,
    pub noise: NoiseConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub images: Vec<Grid>,
    pub clean_masks: Vec<LabelMask>,
    pub noisy_masks: Vec<LabelMask>,
    pub splits: Vec<Split>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits.iter().enumerate().filter(|(_, s)| **s == split).map(|(i, _)| i).collect()
    }

    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(Grid::dims)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if self.clean_masks.len() != n || self.noisy_masks.len() != n || self.splits.len() != n {
            return Err(Error::CountMismatch(format!(
                "{n} images, {} clean masks, {} noisy masks, {} split tags",
                self.clean_masks.len(),
                self.noisy_masks.len(),
                self.splits.len()
            )));
        }
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::invalid(format!("num_classes must be in [2, 255], got {}", self.num_classes)));
        }
        if let Some(first) = self.images.first() {
            for i in 0..n {
                let img = &self.images[i];
                if img.dims() != first.dims() {
                    return Err(Error::shape(format!("image {i} has shape {:?}, expected {:?}", img.dims(), first.dims())));
                }
                for m in [&self.clean_masks[i], &self.noisy_masks[i]] {
                    if m.height() != img.height() || m.width() != img.width() {
                        return Err(Error::shape(format!("mask {i} does not match its image")));
                    }
                    m.validate(self.num_classes)?;
                }
            }
        }
        Ok(())
    }

    /// Pooled mIoU of the noisy training annotations against the clean ones.
    pub fn annotation_quality(&self) -> Result<IoUReport> {
        let idx = self.indices(Split::Train);
        let noisy: Vec<LabelMask> = idx.iter().map(|&i| self.noisy_masks[i].clone()).collect();
        let clean: Vec<LabelMask> = idx.iter().map(|&i| self.clean_masks[i].clone()).collect();
        pooled_miou(&noisy, &clean, self.num_classes)
    }

    /// Same images and clean masks with training annotations re-corrupted under `noise`.
    pub fn recorrupt(&self, noise: &NoiseConfig, seed: u64) -> Dataset {
        let mut out = self.clone();
        for i in 0..self.len() {
            out.noisy_masks[i] = if self.splits[i] == Split::Train {
                let mut rng = stream(seed, StreamTag::Corruption, i as u64);
                corrupt_mask(&self.clean_masks[i], noise, &mut rng)
            } else {
                self.clean_masks[i].clone()
            };
        }
        if let Some(p) = out.provenance.as_mut() {
            p.noise = noise.clone();
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct PlacedShape {
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
}

impl PlacedShape {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        match self.kind {
            ShapeKind::Ellipse => (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0,
            ShapeKind::Rectangle => u.abs() <= self.rx && v.abs() <= self.ry,
            ShapeKind::Ring => {
                let r = (u / self.rx).powi(2) + (v / self.ry).powi(2);
                (0.3..=1.0).contains(&r)
            }
        }
    }

    fn bounding_radius(&self) -> f64 {
        match self.kind {
            ShapeKind::Rectangle => self.rx.hypot(self.ry),
            _ => self.rx.max(self.ry),
        }
    }
}

fn draw_shape(spec: &ClassSpec, h: usize, w: usize, rng: &mut ChaCha8Rng) -> PlacedShape {
    let [lo, hi] = spec.size_range;
    let ry = rng.random_range(lo..=hi);
    let rx = rng.random_range(lo..=hi);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let mut shape = PlacedShape { kind: spec.shape, cy: 0.0, cx: 0.0, ry, rx, angle };
    let r = shape.bounding_radius().min(h.min(w) as f64 / 2.0 - 0.5);
    shape.cy = rng.random_range(r..=(h as f64 - 1.0 - r).max(r));
    shape.cx = rng.random_range(r..=(w as f64 - 1.0 - r).max(r));
    shape
}

/// Per-class draws before the whole example is restarted.
const TRIES_PER_CLASS: usize = 20;

/// Rasterizes the foreground classes of one example. A class that cannot be
/// placed restarts the example, up to `max_placement_attempts` restarts.
fn place_example(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<LabelMask> {
    let mut last_failed = 0u8;
    for _ in 0..cfg.max_placement_attempts.max(1) {
        match try_place_example(cfg, rng) {
            Ok(mask) => return Ok(mask),
            Err(class) => last_failed = class,
        }
    }
    let name = &cfg.classes[last_failed as usize - 1].name;
    Err(Error::Infeasible(format!(
        "could not place class {last_failed} ({name}) after {} attempts",
        cfg.max_placement_attempts
    )))
}

fn try_place_example(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> std::result::Result<LabelMask, u8> {
    let (h, w) = (cfg.height, cfg.width);
    let mut mask = LabelMask::filled(h, w, 0);
    let mut occupied = LabelMask::filled(h, w, 0);
    for (i, spec) in cfg.classes.iter().enumerate() {
        let class = (i + 1) as u8;
        if !rng.random_bool(spec.frequency) {
            continue;
        }
        let mut placed = false;
        for _ in 0..TRIES_PER_CLASS {
            let shape = draw_shape(spec, h, w, rng);
            let pixels: Vec<usize> = (0..h * w)
                .filter(|&p| shape.contains((p / w) as f64, (p % w) as f64))
                .collect();
            if pixels.is_empty() || pixels.iter().any(|&p| occupied.data()[p] == 1) {
                continue;
            }
            let mut footprint = LabelMask::filled(h, w, 0);
            for &p in &pixels {
                mask.data_mut()[p] = class;
                footprint.data_mut()[p] = 1;
            }
            let grown = dilate(&footprint, cfg.min_gap);
            for (o, g) in occupied.data_mut().iter_mut().zip(grown.data()) {
                *o |= g;
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(class);
        }
    }
    Ok(mask)
}

fn render_image(cfg: &SynthConfig, mask: &LabelMask, rng: &mut ChaCha8Rng) -> Grid {
    let c = cfg.channels;
    let normal = Normal::new(0.0, cfg.feature_noise_sigma.max(0.0)).expect("sigma >= 0");
    let mut data = Vec::with_capacity(mask.len() * c);
    for &label in mask.data() {
        let base = if label == 0 { &cfg.background_intensity } else { &cfg.classes[label as usize - 1].intensity };
        for &b in base.iter().take(c) {
            let v = b + if cfg.feature_noise_sigma > 0.0 { normal.sample(rng) } else { 0.0 };
            // stored as f32 on disk; keep the in-memory value exactly representable
            data.push(v as f32 as f64);
        }
    }
    Grid::from_raw(mask.height(), mask.width(), c, data)
}

/// Generates train/val/test examples. Only training annotations are corrupted.
///
/// Each example draws its shapes, pixel noise and corruption from independent
/// streams derived from `cfg.seed`, so changing `noise` leaves images and clean
/// masks untouched.
pub fn generate_dataset(cfg: &SynthConfig, noise: &NoiseConfig) -> Result<Dataset> {
    let mut problems = cfg.problems();
    problems.extend(noise.problems());
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let n = cfg.num_examples();
    let mut ds = Dataset {
        num_classes: cfg.num_classes(),
        class_names: std::iter::once("background".to_string()).chain(cfg.classes.iter().map(|c| c.name.clone())).collect(),
        images: Vec::with_capacity(n),
        clean_masks: Vec::with_capacity(n),
        noisy_masks: Vec::with_capacity(n),
        splits: Vec::with_capacity(n),
        provenance: Some(Provenance { synth: cfg.clone(), noise: noise.clone(), seed: cfg.seed }),
    };
    for i in 0..n {
        let split = if i < cfg.num_train {
            Split::Train
        } else if i < cfg.num_train + cfg.num_val {
            Split::Val
        } else {
            Split::Test
        };
        let mut shape_rng = stream(cfg.seed, StreamTag::Shapes, i as u64);
        let clean = place_example(cfg, &mut shape_rng)?;
        let mut pixel_rng = stream(cfg.seed, StreamTag::PixelNoise, i as u64);
        let image = render_image(cfg, &clean, &mut pixel_rng);
        let noisy = if split == Split::Train {
            let mut noise_rng = stream(cfg.seed, StreamTag::Corruption, i as u64);
            corrupt_mask(&clean, noise, &mut noise_rng)
        } else {
            clean.clone()
        };
        ds.images.push(image);
        ds.clean_masks.push(clean);
        ds.noisy_masks.push(noisy);
        ds.splits.push(split);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pixel(h: usize, w: usize, r: usize, c: usize) -> LabelMask {
        let mut m = LabelMask::filled(h, w, 0);
        m.set(r, c, 1);
        m
    }

    #[test]
    fn zero_iterations_are_identity() {
        let m = single_pixel(5, 5, 2, 2);
        assert_eq!(dilate(&m, 0), m);
        assert_eq!(erode(&m, 0), m);
    }

    #[test]
    fn dilate_single_pixel_gives_three_by_three_block() {
        let d = dilate(&single_pixel(5, 5, 2, 2), 1);
        for r in 0..5 {
            for c in 0..5 {
                let inside = (1..=3).contains(&r) && (1..=3).contains(&c);
                assert_eq!(d.get(r, c), u8::from(inside), "({r},{c})");
            }
        }
    }

    #[test]
    fn erode_block_gives_center() {
        let mut m = LabelMask::filled(5, 5, 0);
        for r in 1..=3 {
            for c in 1..=3 {
                m.set(r, c, 1);
            }
        }
        assert_eq!(erode(&m, 1), single_pixel(5, 5, 2, 2));
    }

    #[test]
    fn fixed_points() {
        let ones = LabelMask::filled(4, 6, 1);
        assert_eq!(dilate(&ones, 3), ones);
        let zeros = LabelMask::filled(4, 6, 0);
        assert_eq!(erode(&zeros, 3), zeros);
        // zero padding erodes an all-ones mask from the border inwards
        assert_eq!(erode(&ones, 1).data().iter().filter(|&&v| v == 1).count(), 2 * 4);
    }

    #[test]
    fn corrupt_with_zero_iterations_is_identity() {
        let clean = LabelMask::from_rows(&[&[0, 1, 1], &[0, 2, 2], &[0, 0, 0]]).unwrap();
        let cfg = NoiseConfig { max_iterations: 0, ..Default::default() };
        let mut rng = stream(1, StreamTag::Corruption, 0);
        assert_eq!(corrupt_mask(&clean, &cfg, &mut rng), clean);
    }

    #[test]
    fn forced_single_dilation_matches_composed_oracle() {
        let clean = single_pixel(7, 7, 3, 3);
        let cfg = NoiseConfig { max_iterations: 1, p_dilate: 1.0, per_class: true, ..Default::default() };
        // draw until the iteration count is 1 (the only randomness left)
        for idx in 0..64 {
            let mut rng = stream(9, StreamTag::Corruption, idx);
            let noisy = corrupt_mask(&clean, &cfg, &mut rng);
            if noisy != clean {
                assert_eq!(noisy, dilate(&clean, 1));
                return;
            }
        }
        panic!("never drew a non-zero iteration count");
    }

    #[test]
    fn dilation_overwrites_in_ascending_class_order() {
        let clean = LabelMask::from_rows(&[&[1, 0, 2]]).unwrap();
        let out = compose(&clean, &[(1, Morph::Dilate(1)), (2, Morph::Dilate(1))]);
        assert_eq!(out.data(), &[1, 2, 2]);
        let eroded = compose(&clean, &[(1, Morph::Erode(1)), (2, Morph::Dilate(0))]);
        assert_eq!(eroded.data(), &[0, 0, 2]);
    }

    #[test]
    fn union_mode_erodes_foreground_as_a_whole() {
        let mut clean = LabelMask::filled(5, 6, 0);
        for r in 1..4 {
            clean.set(r, 1, 1);
            clean.set(r, 2, 1);
            clean.set(r, 3, 2);
            clean.set(r, 4, 2);
        }
        let cfg = NoiseConfig { max_iterations: 1, p_dilate: 0.0, per_class: false, ..Default::default() };
        for idx in 0..64 {
            let mut rng = stream(3, StreamTag::Corruption, idx);
            let noisy = corrupt_mask(&clean, &cfg, &mut rng);
            if noisy != clean {
                // the 3x4 foreground block erodes to its 1x2 core, keeping both classes
                let kept: Vec<(usize, usize, u8)> = (0..5)
                    .flat_map(|r| (0..6).map(move |c| (r, c)))
                    .filter(|&(r, c)| noisy.get(r, c) != 0)
                    .map(|(r, c)| (r, c, noisy.get(r, c)))
                    .collect();
                assert_eq!(kept, vec![(2, 2, 1), (2, 3, 2)]);
                return;
            }
        }
        panic!("never drew a non-zero iteration count");
    }

    #[test]
    fn generation_is_deterministic_and_clean_without_noise() {
        let cfg = SynthConfig { num_train: 6, num_val: 2, num_test: 2, ..Default::default() };
        let none = NoiseConfig { max_iterations: 0, ..Default::default() };
        let a = generate_dataset(&cfg, &none).unwrap();
        assert_eq!(a.noisy_masks, a.clean_masks);
        let b = generate_dataset(&cfg, &none).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn validation_and_test_annotations_are_never_corrupted() {
        let cfg = SynthConfig { num_train: 4, num_val: 3, num_test: 3, ..Default::default() };
        let noise = NoiseConfig { max_iterations: 4, p_dilate: 0.5, per_class: true, ..Default::default() };
        let ds = generate_dataset(&cfg, &noise).unwrap();
        for i in ds.indices(Split::Val).into_iter().chain(ds.indices(Split::Test)) {
            assert_eq!(ds.noisy_masks[i], ds.clean_masks[i]);
        }
        assert!(ds.indices(Split::Train).iter().any(|&i| ds.noisy_masks[i] != ds.clean_masks[i]));
    }

    #[test]
    fn noise_level_does_not_change_images() {
        let cfg = SynthConfig { num_train: 4, num_val: 1, num_test: 1, ..Default::default() };
        let a = generate_dataset(&cfg, &NoiseConfig { max_iterations: 1, ..Default::default() }).unwrap();
        let b = generate_dataset(&cfg, &NoiseConfig { max_iterations: 5, ..Default::default() }).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.clean_masks, b.clean_masks);
        let c = a.recorrupt(&NoiseConfig { max_iterations: 5, ..Default::default() }, cfg.seed);
        assert_eq!(c.noisy_masks, b.noisy_masks);
    }

    #[test]
    fn infeasible_placement_is_reported() {
        let mut cfg = SynthConfig { height: 12, width: 12, ..Default::default() };
        for c in cfg.classes.iter_mut() {
            c.size_range = [5.0, 5.5];
            c.frequency = 1.0;
        }
        cfg.max_placement_attempts = 5;
        let err = generate_dataset(&cfg, &NoiseConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
    }

    #[test]
    fn invalid_configs_list_every_problem() {
        let mut cfg = SynthConfig { channels: 5, feature_noise_sigma: -1.0, ..Default::default() };
        cfg.classes[0].frequency = 2.0;
        let noise = NoiseConfig { p_dilate: 1.5, ..Default::default() };
        match generate_dataset(&cfg, &noise) {
            Err(Error::Config(p)) => assert!(p.len() >= 6, "{p:?}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
