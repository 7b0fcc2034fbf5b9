//! Training runs for the four ablation arms, with per-epoch diagnostics.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::consistency::{ConsistencyConfig, GateMode, ScaleSet, SegModel};
use crate::correct::{correct_labels, label_quality, update_state, update_state_global, AnnotationStore, CorrectionState, TriggerMode};
use crate::earlycurve::{fit_points, FitOptions, FitResult, DEFAULT_MIN_POINTS, DEFAULT_R};
use crate::error::{Error, Result};
use crate::grid::{argmax_labels, Grid, LabelMask, ProbMap};
use crate::metrics::{wrong_region, ClassIoUSeries, PooledCounts};
use crate::netcore::{composite_loss_and_grad, predict_dataset, sgd_step, Model, ModelSpec, OptimConfig, Sgd};
use crate::rng::{stream, StreamTag};
use crate::synthgen::{generate_dataset, Dataset, NoiseConfig, Split, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    CorrectionOnly,
    ConsistencyOnly,
    #[default]
    Adele,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::CorrectionOnly, Mode::ConsistencyOnly, Mode::Adele];

    pub fn corrects(self) -> bool {
        matches!(self, Mode::CorrectionOnly | Mode::Adele)
    }

    pub fn uses_consistency(self) -> bool {
        matches!(self, Mode::ConsistencyOnly | Mode::Adele)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::CorrectionOnly => "correction_only",
            Mode::ConsistencyOnly => "consistency_only",
            Mode::Adele => "adele",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode '{s}' (expected baseline, correction_only, consistency_only or adele)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Relabel from the end-of-epoch unaugmented predictions.
    #[default]
    Epoch,
    /// Relabel each minibatch from the predictions of its training step.
    Iteration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda: f64,
    pub rho: f64,
    pub r: f64,
    pub tau: f64,
    pub scales: ScaleSet,
    pub gate: GateMode,
    pub stop_grad_q: bool,
    pub granularity: Granularity,
    pub trigger_mode: TriggerMode,
    pub min_points: usize,
    pub epochs: usize,
    pub optim: OptimConfig,
    pub model: ModelSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Adele,
            lambda: 1.0,
            rho: 0.8,
            r: DEFAULT_R,
            tau: 0.8,
            scales: ScaleSet::default(),
            gate: GateMode::Pixel,
            stop_grad_q: false,
            granularity: Granularity::Epoch,
            trigger_mode: TriggerMode::PerClass,
            min_points: DEFAULT_MIN_POINTS,
            epochs: 40,
            optim: OptimConfig::default(),
            model: ModelSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            p.push(format!("train.lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            p.push(format!("train.rho must be in [0, 1], got {}", self.rho));
        }
        if !(0.0..1.0).contains(&self.r) {
            p.push(format!("train.r must be in [0, 1), got {}", self.r));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            p.push(format!("train.tau must be in (0, 1], got {}", self.tau));
        }
        if self.min_points < 3 {
            p.push(format!("train.min_points must be >= 3, got {}", self.min_points));
        }
        p.extend(self.scales.problems().into_iter().map(|s| format!("train.{s}")));
        p.extend(self.optim.problems().into_iter().map(|s| format!("train.{s}")));
        p.extend(self.model.problems().into_iter().map(|s| format!("train.{s}")));
        p
    }

    /// Scales used for training and for the predictions that drive correction.
    pub fn training_scales(&self) -> ScaleSet {
        if self.mode.uses_consistency() {
            self.scales.clone()
        } else {
            ScaleSet::single()
        }
    }

    fn consistency(&self) -> Option<ConsistencyConfig> {
        self.mode.uses_consistency().then_some(ConsistencyConfig {
            lambda: self.lambda,
            rho: self.rho,
            gate: self.gate,
            stop_grad_q: self.stop_grad_q,
        })
    }
}

/// One CSV line. `class == None` marks the per-epoch aggregate row, whose
/// IoU fields are means over the classes with a defined value; per-class rows
/// carry that class's IoU in the `*_miou` fields. The aggregate `iou_el`
/// (`iou_m`) only averages foreground classes that occur in the clean
/// (original noisy) training masks on wrongly annotated pixels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub class: Option<u8>,
    pub train_iou: Option<f64>,
    pub iou_el: Option<f64>,
    pub iou_m: Option<f64>,
    pub val_miou: Option<f64>,
    pub test_miou: Option<f64>,
    pub label_quality: Option<f64>,
    pub triggered: bool,
    pub trigger_epoch: Option<usize>,
    pub corrected_pixels: u64,
    pub fit_a: Option<f64>,
    pub fit_b: Option<f64>,
    pub fit_c: Option<f64>,
    pub fit_sse: Option<f64>,
    pub consistency_loss: Option<f64>,
    pub train_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub epochs: usize,
    pub annotation_miou: f64,
    pub best_val_epoch: usize,
    pub best_val_miou: f64,
    /// Test mIoU of the epoch with the best validation mIoU.
    pub best_val_test_miou: f64,
    pub last_epoch_val_miou: f64,
    pub last_epoch_test_miou: f64,
    pub max_test_miou: f64,
    pub max_test_epoch: usize,
    pub final_iou_el: Option<f64>,
    pub final_iou_m: Option<f64>,
    pub final_label_quality: Option<f64>,
    pub trigger_epochs: Vec<Option<usize>>,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
    pub model: Model,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn aggregate_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| r.class.is_none())
    }

    pub fn class_rows(&self, class: u8) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(move |r| r.class == Some(class))
    }

    pub fn final_aggregate(&self) -> &MetricsRow {
        self.aggregate_rows().last().expect("a run always has an initialization row")
    }
}

fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn select<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Mutable state of one training run, advanced an epoch at a time.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    model: Model,
    opt: Sgd,
    store: AnnotationStore,
    state: CorrectionState,
    series: Vec<ClassIoUSeries>,
    mean_series: Vec<(f64, f64)>,
    global_fit: Option<FitResult>,
    train_idx: Vec<usize>,
    val_idx: Vec<usize>,
    test_idx: Vec<usize>,
    train_clean: Vec<LabelMask>,
    wrong: Vec<Vec<bool>>,
    /// Foreground classes present in the clean / original noisy training masks on wrong pixels.
    el_classes: Vec<usize>,
    m_classes: Vec<usize>,
    epoch: usize,
    rows: Vec<MetricsRow>,
    started: Instant,
}

struct EpochStats {
    train_loss: Option<f64>,
    consistency_loss: Option<f64>,
}

impl<'a> Trainer<'a> {
    /// Validates inputs, initializes the model and logs the epoch-0 rows.
    pub fn new(cfg: TrainConfig, data: &'a Dataset) -> Result<Self> {
        let problems = cfg.problems();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        data.validate()?;
        let (train_idx, val_idx, test_idx) = (data.indices(Split::Train), data.indices(Split::Val), data.indices(Split::Test));
        if train_idx.is_empty() || val_idx.is_empty() || test_idx.is_empty() {
            return Err(Error::invalid(format!(
                "dataset needs train, val and test examples, got {}/{}/{}",
                train_idx.len(),
                val_idx.len(),
                test_idx.len()
            )));
        }
        let k = data.num_classes;
        let channels = data.images[0].channels();
        let model = Model::new(cfg.model.clone(), channels, k, cfg.seed)?;
        let store = AnnotationStore::new(select(&data.noisy_masks, &train_idx), k)?;
        let train_clean = select(&data.clean_masks, &train_idx);
        let wrong = train_clean
            .iter()
            .zip(store.original())
            .map(|(g, n)| wrong_region(g, n))
            .collect::<Result<Vec<_>>>()?;
        let present_on_wrong = |masks: &[LabelMask]| -> Vec<usize> {
            let mut seen = vec![false; k];
            for (m, w) in masks.iter().zip(&wrong) {
                for (&v, &is_wrong) in m.data().iter().zip(w) {
                    if is_wrong {
                        seen[v as usize] = true;
                    }
                }
            }
            (1..k).filter(|&c| seen[c]).collect()
        };
        let el_classes = present_on_wrong(&train_clean);
        let m_classes = present_on_wrong(store.original());
        let mut t = Trainer {
            opt: Sgd::new(model.num_params()),
            model,
            store,
            state: CorrectionState::new(k),
            series: (0..k).map(|c| ClassIoUSeries::new(c as u8)).collect(),
            mean_series: Vec::new(),
            global_fit: None,
            train_idx,
            val_idx,
            test_idx,
            train_clean,
            wrong,
            el_classes,
            m_classes,
            epoch: 0,
            rows: Vec::new(),
            started: Instant::now(),
            cfg,
            data,
        };
        t.log_epoch(EpochStats { train_loss: None, consistency_loss: None })?;
        Ok(t)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    pub fn state(&self) -> &CorrectionState {
        &self.state
    }

    /// Runs one pass over the shuffled training set followed by the
    /// end-of-epoch prediction, trigger, correction and logging steps.
    /// Returns the rows appended for this epoch.
    pub fn run_epoch(&mut self) -> Result<&[MetricsRow]> {
        self.epoch += 1;
        let epoch = self.epoch;
        let scales = self.cfg.training_scales();
        let cons = self.cfg.consistency();
        let iteration_correction = self.cfg.mode.corrects() && self.cfg.granularity == Granularity::Iteration;

        let mut order: Vec<usize> = (0..self.train_idx.len()).collect();
        order.shuffle(&mut stream(self.cfg.seed, StreamTag::Shuffle, epoch as u64));

        let mut loss_sum = 0.0;
        let mut cons_sum = 0.0;
        let mut grad = vec![0.0; self.model.num_params()];
        for batch in order.chunks(self.cfg.optim.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let weight = 1.0 / batch.len() as f64;
            let mut batch_q = Vec::new();
            for &j in batch {
                let x = &self.data.images[self.train_idx[j]];
                let y = &self.store.working()[j];
                let step = composite_loss_and_grad(&self.model, x, y, &scales, cons.as_ref(), weight, &mut grad)?;
                loss_sum += step.loss.total;
                cons_sum += step.loss.consistency;
                if iteration_correction {
                    batch_q.push((j, step.q));
                }
            }
            sgd_step(&mut self.model.params, &mut self.opt, &grad, &self.cfg.optim)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}: {e}")))?;
            if iteration_correction && self.state.any_triggered() {
                correct_labels(&mut self.store, &mut self.state, batch_q.iter().map(|(j, q)| (*j, q)), self.cfg.tau)?;
            }
        }
        let n = self.train_idx.len() as f64;
        let stats = EpochStats {
            train_loss: Some(loss_sum / n),
            consistency_loss: self.cfg.mode.uses_consistency().then_some(cons_sum / n),
        };
        self.log_epoch(stats)?;
        let start = self.rows.len() - (self.data.num_classes + 1);
        Ok(&self.rows[start..])
    }

    fn fit_opts(&self) -> FitOptions {
        FitOptions { min_points: self.cfg.min_points, ..FitOptions::default() }
    }

    /// End-of-epoch bookkeeping; at epoch 0 only metrics are recorded.
    fn log_epoch(&mut self, stats: EpochStats) -> Result<()> {
        let k = self.data.num_classes;
        let epoch = self.epoch;
        let train_images: Vec<&Grid> = self.train_idx.iter().map(|&i| &self.data.images[i]).collect();
        let q = predict_dataset(&self.model, train_images, &self.cfg.training_scales())?;
        let preds: Vec<LabelMask> = q.iter().map(argmax_labels).collect();

        let mut vs_noisy = PooledCounts::new(k);
        let mut el = PooledCounts::new(k);
        let mut mem = PooledCounts::new(k);
        for (j, p) in preds.iter().enumerate() {
            vs_noisy.add(p, &self.store.original()[j], None)?;
            el.add(p, &self.train_clean[j], Some(&self.wrong[j]))?;
            mem.add(p, &self.store.original()[j], Some(&self.wrong[j]))?;
        }

        if epoch > 0 {
            for (c, s) in self.series.iter_mut().enumerate() {
                s.push(epoch, vs_noisy.class_iou(c))?;
            }
            if let Some(m) = mean_defined((0..k).map(|c| vs_noisy.class_iou(c))) {
                self.mean_series.push((epoch as f64, m));
            }
            if self.cfg.mode.corrects() {
                self.update_triggers(epoch)?;
                if self.cfg.granularity == Granularity::Epoch {
                    correct_labels(&mut self.store, &mut self.state, q.iter().enumerate(), self.cfg.tau)?;
                }
            }
        }

        let quality = label_quality(&self.store, &self.train_clean)?;
        let val = self.split_counts(&self.val_idx)?;
        let test = self.split_counts(&self.test_idx)?;

        let mut rows = Vec::with_capacity(k + 1);
        for c in 0..k {
            let cs = &self.state.classes[c];
            let fit = cs.last_fit.filter(|_| self.cfg.mode.corrects());
            rows.push(MetricsRow {
                epoch,
                class: Some(c as u8),
                train_iou: vs_noisy.class_iou(c),
                iou_el: el.class_iou(c),
                iou_m: mem.class_iou(c),
                val_miou: val.class_iou(c),
                test_miou: test.class_iou(c),
                label_quality: quality.per_class_iou[c],
                triggered: cs.triggered,
                trigger_epoch: cs.trigger_epoch,
                corrected_pixels: cs.corrected_pixels,
                fit_a: fit.map(|f| f.a),
                fit_b: fit.map(|f| f.b),
                fit_c: fit.map(|f| f.c),
                fit_sse: fit.map(|f| f.sse),
                consistency_loss: None,
                train_loss: None,
            });
        }
        let gfit = self.global_fit.filter(|_| self.cfg.trigger_mode == TriggerMode::Global && self.cfg.mode.corrects());
        rows.push(MetricsRow {
            epoch,
            class: None,
            train_iou: vs_noisy.mean_iou(),
            iou_el: mean_defined(self.el_classes.iter().map(|&c| el.class_iou(c))),
            iou_m: mean_defined(self.m_classes.iter().map(|&c| mem.class_iou(c))),
            val_miou: val.mean_iou(),
            test_miou: test.mean_iou(),
            label_quality: Some(quality.miou),
            triggered: self.state.any_triggered(),
            trigger_epoch: self.state.classes.iter().filter_map(|c| c.trigger_epoch).min(),
            corrected_pixels: self.state.classes.iter().map(|c| c.corrected_pixels).sum(),
            fit_a: gfit.map(|f| f.a),
            fit_b: gfit.map(|f| f.b),
            fit_c: gfit.map(|f| f.c),
            fit_sse: gfit.map(|f| f.sse),
            consistency_loss: stats.consistency_loss,
            train_loss: stats.train_loss,
        });
        self.rows.extend(rows);
        Ok(())
    }

    fn update_triggers(&mut self, epoch: usize) -> Result<()> {
        let opts = self.fit_opts();
        match self.cfg.trigger_mode {
            TriggerMode::PerClass => {
                let mut fits = Vec::with_capacity(self.series.len());
                for s in &self.series {
                    let pts = s.defined_points();
                    fits.push(if pts.len() >= opts.min_points { Some(fit_points(&pts, &opts)?) } else { None });
                }
                update_state(&mut self.state, &fits, epoch, self.cfg.r)?;
            }
            TriggerMode::Global => {
                if self.mean_series.len() >= opts.min_points {
                    self.global_fit = Some(fit_points(&self.mean_series, &opts)?);
                }
                update_state_global(&mut self.state, self.global_fit.as_ref(), epoch, self.cfg.r);
            }
        }
        Ok(())
    }

    /// Single-scale predictions on a clean split, pooled per class.
    fn split_counts(&self, idx: &[usize]) -> Result<PooledCounts> {
        let mut pc = PooledCounts::new(self.data.num_classes);
        for &i in idx {
            let p = argmax_labels(&self.model.predict(&self.data.images[i])?);
            pc.add(&p, &self.data.clean_masks[i], None)?;
        }
        Ok(pc)
    }

    pub fn finish(self) -> Result<RunRecord> {
        let summary = summarize(&self.rows, self.epoch, self.data.annotation_quality()?.miou, &self.state);
        Ok(RunRecord {
            config: self.cfg,
            num_classes: self.data.num_classes,
            class_names: self.data.class_names.clone(),
            rows: self.rows,
            summary,
            model: self.model,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        })
    }
}

fn summarize(rows: &[MetricsRow], epochs: usize, annotation_miou: f64, state: &CorrectionState) -> RunSummary {
    let agg: Vec<&MetricsRow> = rows.iter().filter(|r| r.class.is_none()).collect();
    // model selection skips the untrained initialization when there is anything else
    let candidates: Vec<&&MetricsRow> = agg.iter().filter(|r| r.epoch > 0 || epochs == 0).collect();
    let v = |r: &MetricsRow| r.val_miou.unwrap_or(0.0);
    let t = |r: &MetricsRow| r.test_miou.unwrap_or(0.0);
    let mut best = candidates[0];
    let mut max_t = candidates[0];
    for r in &candidates {
        if v(r) > v(best) {
            best = r;
        }
        if t(r) > t(max_t) {
            max_t = r;
        }
    }
    let last = agg.last().expect("initialization row");
    RunSummary {
        epochs,
        annotation_miou,
        best_val_epoch: best.epoch,
        best_val_miou: v(best),
        best_val_test_miou: t(best),
        last_epoch_val_miou: v(last),
        last_epoch_test_miou: t(last),
        max_test_miou: t(max_t),
        max_test_epoch: max_t.epoch,
        final_iou_el: last.iou_el,
        final_iou_m: last.iou_m,
        final_label_quality: last.label_quality,
        trigger_epochs: state.classes.iter().map(|c| c.trigger_epoch).collect(),
    }
}

/// Trains `cfg.epochs` epochs on `data`.
pub fn run_experiment(cfg: &TrainConfig, data: &Dataset) -> Result<RunRecord> {
    let mut t = Trainer::new(cfg.clone(), data)?;
    while !t.is_done() {
        t.run_epoch()?;
    }
    t.finish()
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub level: usize,
    pub annotation_miou: f64,
    pub baseline: RunRecord,
    pub adele: RunRecord,
}

impl SweepPoint {
    pub fn gap(&self) -> f64 {
        self.adele.summary.last_epoch_test_miou - self.baseline.summary.last_epoch_test_miou
    }
}

/// Dataset with the training annotations corrupted at `level` iterations.
pub fn sweep_dataset(base: &Dataset, noise: &NoiseConfig, seed: u64, level: usize) -> Dataset {
    base.recorrupt(&NoiseConfig { max_iterations: level, ..noise.clone() }, seed)
}

fn check_levels(levels: &[usize]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid("sweep needs at least one corruption level"));
    }
    for (i, l) in levels.iter().enumerate() {
        if levels[..i].contains(l) {
            return Err(Error::invalid(format!("duplicate corruption level {l}")));
        }
    }
    Ok(())
}

fn sweep_point(base: &Dataset, synth: &SynthConfig, noise: &NoiseConfig, train: &TrainConfig, level: usize) -> Result<SweepPoint> {
    let data = sweep_dataset(base, noise, synth.seed, level);
    let annotation_miou = data.annotation_quality()?.miou;
    let baseline = run_experiment(&TrainConfig { mode: Mode::Baseline, ..train.clone() }, &data)?;
    let adele = run_experiment(&TrainConfig { mode: Mode::Adele, ..train.clone() }, &data)?;
    Ok(SweepPoint { level, annotation_miou, baseline, adele })
}

/// Baseline and ADELE runs at each corruption level, on shared images.
/// Levels are spread over `threads` worker threads; results keep `levels` order.
pub fn noise_sweep(
    synth: &SynthConfig,
    noise: &NoiseConfig,
    train: &TrainConfig,
    levels: &[usize],
    threads: usize,
) -> Result<Vec<SweepPoint>> {
    check_levels(levels)?;
    let base = generate_dataset(synth, &NoiseConfig { max_iterations: 0, ..noise.clone() })?;
    let threads = threads.clamp(1, levels.len());
    if threads == 1 {
        return levels.iter().map(|&l| sweep_point(&base, synth, noise, train, l)).collect();
    }
    let mut slots: Vec<Option<Result<SweepPoint>>> = (0..levels.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = levels.len().div_ceil(threads);
        let handles: Vec<_> = levels
            .chunks(chunk)
            .enumerate()
            .map(|(ci, ls)| {
                let base = &base;
                scope.spawn(move || (ci * chunk, ls.iter().map(|&l| sweep_point(base, synth, noise, train, l)).collect::<Vec<_>>()))
            })
            .collect();
        for h in handles {
            let (start, res) = h.join().expect("sweep worker panicked");
            for (o, r) in res.into_iter().enumerate() {
                slots[start + o] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every level ran")).collect()
}

/// Single-scale class probabilities for each example of `split`.
pub fn predict_split(model: &Model, data: &Dataset, split: Split) -> Result<Vec<ProbMap>> {
    data.indices(split).into_iter().map(|i| model.predict(&data.images[i])).collect()
}

/// Pooled mIoU of single-scale predictions against the clean masks of `split`.
pub fn evaluate_split(model: &Model, data: &Dataset, split: Split) -> Result<Option<f64>> {
    let mut pc = PooledCounts::new(data.num_classes);
    for i in data.indices(split) {
        let p = argmax_labels(&model.predict(&data.images[i])?);
        pc.add(&p, &data.clean_masks[i], None)?;
    }
    Ok(pc.mean_iou())
}
