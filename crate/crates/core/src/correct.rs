//! Per-class trigger bookkeeping and confidence-thresholded relabeling.

use serde::{Deserialize, Serialize};

use crate::earlycurve::{check_trigger, FitResult};
use crate::error::{Error, Result};
use crate::grid::{argmax, LabelMask, ProbMap};
use crate::metrics::{pooled_miou, IoUReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TriggerMode {
    /// Each class triggers on its own fitted training-IoU curve.
    #[default]
    PerClass,
    /// All classes trigger together on the curve of the mean training IoU.
    Global,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassState {
    pub triggered: bool,
    pub trigger_epoch: Option<usize>,
    pub corrected_pixels: u64,
    /// Most recent fit and its relative slope change, kept for logging.
    pub last_fit: Option<FitResult>,
    pub last_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionState {
    pub classes: Vec<ClassState>,
}

impl CorrectionState {
    pub fn new(num_classes: usize) -> Self {
        CorrectionState { classes: vec![ClassState::default(); num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_triggered(&self, class: usize) -> bool {
        self.classes.get(class).is_some_and(|c| c.triggered)
    }

    pub fn trigger_epoch(&self, class: usize) -> Option<usize> {
        self.classes.get(class).and_then(|c| c.trigger_epoch)
    }

    pub fn any_triggered(&self) -> bool {
        self.classes.iter().any(|c| c.triggered)
    }

    pub fn triggered_classes(&self) -> Vec<u8> {
        (0..self.classes.len()).filter(|&c| self.classes[c].triggered).map(|c| c as u8).collect()
    }
}

/// Applies the trigger test at `epoch` to every untriggered class with a fit.
/// Returns the classes that triggered now.
pub fn update_state(state: &mut CorrectionState, fits: &[Option<FitResult>], epoch: usize, r: f64) -> Result<Vec<u8>> {
    if fits.len() != state.num_classes() {
        return Err(Error::shape(format!("{} fits for {} classes", fits.len(), state.num_classes())));
    }
    let mut newly = Vec::new();
    for (c, (cs, fit)) in state.classes.iter_mut().zip(fits).enumerate() {
        let Some(fit) = fit else { continue };
        let d = check_trigger(c as u8, fit, epoch, r);
        cs.last_fit = Some(*fit);
        cs.last_ratio = Some(d.relative_slope_change);
        if !cs.triggered && d.triggered {
            cs.triggered = true;
            cs.trigger_epoch = Some(epoch);
            newly.push(c as u8);
        }
    }
    Ok(newly)
}

/// Global variant: one fit (of the mean curve) decides for all classes at once.
pub fn update_state_global(state: &mut CorrectionState, fit: Option<&FitResult>, epoch: usize, r: f64) -> Vec<u8> {
    let Some(fit) = fit else { return Vec::new() };
    let d = check_trigger(0, fit, epoch, r);
    for cs in &mut state.classes {
        cs.last_fit = Some(*fit);
        cs.last_ratio = Some(d.relative_slope_change);
    }
    if !d.triggered || state.any_triggered() {
        return Vec::new();
    }
    for cs in &mut state.classes {
        cs.triggered = true;
        cs.trigger_epoch = Some(epoch);
    }
    (0..state.num_classes() as u8).collect()
}

/// Frozen original annotations next to the mutable working copy.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationStore {
    num_classes: usize,
    original: Vec<LabelMask>,
    working: Vec<LabelMask>,
    /// `contains[i][c]`: working mask `i` has at least one pixel of class `c`.
    contains: Vec<Vec<bool>>,
}

fn presence(mask: &LabelMask, k: usize) -> Vec<bool> {
    let mut p = vec![false; k];
    for &v in mask.data() {
        p[v as usize] = true;
    }
    p
}

impl AnnotationStore {
    pub fn new(masks: Vec<LabelMask>, num_classes: usize) -> Result<Self> {
        for (i, m) in masks.iter().enumerate() {
            m.validate(num_classes).map_err(|e| Error::invalid(format!("annotation {i}: {e}")))?;
        }
        let contains = masks.iter().map(|m| presence(m, num_classes)).collect();
        Ok(AnnotationStore { num_classes, working: masks.clone(), original: masks, contains })
    }

    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn original(&self) -> &[LabelMask] {
        &self.original
    }

    pub fn working(&self) -> &[LabelMask] {
        &self.working
    }

    pub fn contains(&self, example: usize, class: u8) -> bool {
        self.contains[example][class as usize]
    }

    /// Relabels one example; returns the number of changed pixels per class.
    pub fn correct_example(&mut self, example: usize, q: &ProbMap, state: &CorrectionState, tau: f64) -> Result<Vec<u64>> {
        let k = self.num_classes;
        let mut changed = vec![0u64; k];
        if example >= self.working.len() {
            return Err(Error::invalid(format!("example {example} out of range ({} stored)", self.working.len())));
        }
        let mask = &mut self.working[example];
        if q.height() != mask.height() || q.width() != mask.width() || q.num_classes() != k {
            return Err(Error::shape(format!(
                "q is {}x{}x{}, annotation {example} is {}x{} with {k} classes",
                q.height(),
                q.width(),
                q.num_classes(),
                mask.height(),
                mask.width()
            )));
        }
        for c in state.triggered_classes() {
            if !self.contains[example][c as usize] {
                continue;
            }
            let data = mask.data_mut();
            for (idx, label) in data.iter_mut().enumerate() {
                let px = q.pixel_at(idx);
                if px[c as usize] >= tau {
                    let new = argmax(px) as u8;
                    if *label != new {
                        *label = new;
                        changed[c as usize] += 1;
                    }
                }
            }
        }
        if changed.iter().any(|&n| n > 0) {
            self.contains[example] = presence(mask, k);
        }
        Ok(changed)
    }
}

/// Relabels every example `i` of `qs` (given as `(example index, q)`) and
/// accumulates the per-class changed-pixel counts into `state`.
pub fn correct_labels<'a, I>(store: &mut AnnotationStore, state: &mut CorrectionState, qs: I, tau: f64) -> Result<Vec<u64>>
where
    I: IntoIterator<Item = (usize, &'a ProbMap)>,
{
    let mut total = vec![0u64; store.num_classes()];
    if !state.any_triggered() {
        return Ok(total);
    }
    for (i, q) in qs {
        let changed = store.correct_example(i, q, state, tau)?;
        for (t, n) in total.iter_mut().zip(changed) {
            *t += n;
        }
    }
    for (cs, &n) in state.classes.iter_mut().zip(&total) {
        cs.corrected_pixels += n;
    }
    Ok(total)
}

/// Pooled mIoU of the working annotations against the clean masks.
pub fn label_quality(store: &AnnotationStore, clean: &[LabelMask]) -> Result<IoUReport> {
    pooled_miou(store.working(), clean, store.num_classes())
}
