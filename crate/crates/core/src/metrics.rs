//! IoU-family metrics.
//!
//! Besides plain IoU/mIoU this module provides the two diagnostics used to
//! observe early learning and memorization on incorrectly-annotated pixels:
//! [`iou_el`] (overlap with the ground truth) and [`iou_m`] (overlap with the
//! wrong labels), and the dataset-pooled per-class training IoU series that
//! drives the correction trigger.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LabelMask;

/// Intersection and union pixel counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IouCounts {
    pub intersection: u64,
    pub union: u64,
}

impl IouCounts {
    /// `None` when the union is empty.
    pub fn ratio(&self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }
}

impl std::ops::AddAssign for IouCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.intersection += rhs.intersection;
        self.union += rhs.union;
    }
}

fn check_shapes(a: &LabelMask, b: &LabelMask, region: Option<&[bool]>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "masks are {}x{} and {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if let Some(r) = region {
        if r.len() != a.len() {
            return Err(Error::shape(format!("region has {} pixels, masks have {}", r.len(), a.len())));
        }
    }
    Ok(())
}

/// Counts for a single class, optionally restricted to `region`.
pub fn class_counts(pred: &LabelMask, reference: &LabelMask, class: u8, region: Option<&[bool]>) -> Result<IouCounts> {
    check_shapes(pred, reference, region)?;
    let mut counts = IouCounts::default();
    for (i, (&p, &r)) in pred.data().iter().zip(reference.data()).enumerate() {
        if region.is_some_and(|reg| !reg[i]) {
            continue;
        }
        let (pc, rc) = (p == class, r == class);
        counts.intersection += u64::from(pc && rc);
        counts.union += u64::from(pc || rc);
    }
    Ok(counts)
}

/// Counts for classes `0..num_classes` in one pass.
pub fn all_class_counts(
    pred: &LabelMask,
    reference: &LabelMask,
    num_classes: usize,
    region: Option<&[bool]>,
) -> Result<Vec<IouCounts>> {
    check_shapes(pred, reference, region)?;
    let mut counts = vec![IouCounts::default(); num_classes];
    for (i, (&p, &r)) in pred.data().iter().zip(reference.data()).enumerate() {
        if region.is_some_and(|reg| !reg[i]) {
            continue;
        }
        let (p, r) = (p as usize, r as usize);
        if p == r {
            if p < num_classes {
                counts[p].intersection += 1;
                counts[p].union += 1;
            }
        } else {
            if p < num_classes {
                counts[p].union += 1;
            }
            if r < num_classes {
                counts[r].union += 1;
            }
        }
    }
    Ok(counts)
}

/// IoU of `class` between two masks, restricted to `region` when given.
/// Returns `None` when the union is empty.
pub fn iou(pred: &LabelMask, reference: &LabelMask, class: u8, region: Option<&[bool]>) -> Result<Option<f64>> {
    Ok(class_counts(pred, reference, class, region)?.ratio())
}

/// Pixels whose noisy annotation disagrees with the ground truth.
pub fn wrong_region(gt: &LabelMask, noisy: &LabelMask) -> Result<Vec<bool>> {
    check_shapes(gt, noisy, None)?;
    Ok(gt.data().iter().zip(noisy.data()).map(|(g, n)| g != n).collect())
}

/// Early-learning IoU: prediction vs ground truth on the incorrectly-labelled pixels.
pub fn iou_el(pred: &LabelMask, gt: &LabelMask, noisy: &LabelMask, class: u8) -> Result<Option<f64>> {
    let region = wrong_region(gt, noisy)?;
    iou(pred, gt, class, Some(&region))
}

/// Memorization IoU: prediction vs the (wrong) noisy labels on the incorrectly-labelled pixels.
pub fn iou_m(pred: &LabelMask, gt: &LabelMask, noisy: &LabelMask, class: u8) -> Result<Option<f64>> {
    let region = wrong_region(gt, noisy)?;
    iou(pred, noisy, class, Some(&region))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub classes: Vec<u8>,
    pub per_class_iou: Vec<Option<f64>>,
    pub counts: Vec<IouCounts>,
    pub miou: f64,
    /// Classes with an empty union, excluded from the mean.
    pub skipped: Vec<u8>,
}

impl IoUReport {
    pub fn from_counts(classes: Vec<u8>, counts: Vec<IouCounts>) -> Result<Self> {
        let per_class_iou: Vec<Option<f64>> = counts.iter().map(IouCounts::ratio).collect();
        let defined: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::invalid("mIoU undefined: every class has an empty union"));
        }
        let skipped = classes.iter().zip(&per_class_iou).filter(|(_, v)| v.is_none()).map(|(c, _)| *c).collect();
        Ok(IoUReport {
            miou: defined.iter().sum::<f64>() / defined.len() as f64,
            classes,
            per_class_iou,
            counts,
            skipped,
        })
    }
}

pub fn miou(pred: &LabelMask, reference: &LabelMask, classes: &[u8]) -> Result<IoUReport> {
    let counts = classes
        .iter()
        .map(|&c| class_counts(pred, reference, c, None))
        .collect::<Result<Vec<_>>>()?;
    IoUReport::from_counts(classes.to_vec(), counts)
}

/// Per-class counts pooled over many mask pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledCounts {
    counts: Vec<IouCounts>,
}

impl PooledCounts {
    pub fn new(num_classes: usize) -> Self {
        PooledCounts { counts: vec![IouCounts::default(); num_classes] }
    }

    pub fn add(&mut self, pred: &LabelMask, reference: &LabelMask, region: Option<&[bool]>) -> Result<()> {
        let c = all_class_counts(pred, reference, self.counts.len(), region)?;
        for (acc, v) in self.counts.iter_mut().zip(c) {
            *acc += v;
        }
        Ok(())
    }

    pub fn counts(&self) -> &[IouCounts] {
        &self.counts
    }

    pub fn class_iou(&self, class: usize) -> Option<f64> {
        self.counts[class].ratio()
    }

    pub fn report(&self) -> Result<IoUReport> {
        IoUReport::from_counts((0..self.counts.len() as u8).collect(), self.counts.clone())
    }

    /// Mean over defined classes, `None` if no class is defined.
    pub fn mean_iou(&self) -> Option<f64> {
        let defined: Vec<f64> = self.counts.iter().filter_map(IouCounts::ratio).collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Dataset-pooled mIoU over all classes `0..num_classes`.
pub fn pooled_miou(preds: &[LabelMask], refs: &[LabelMask], num_classes: usize) -> Result<IoUReport> {
    if preds.len() != refs.len() {
        return Err(Error::shape(format!("{} predictions vs {} references", preds.len(), refs.len())));
    }
    let mut pooled = PooledCounts::new(num_classes);
    for (p, r) in preds.iter().zip(refs) {
        pooled.add(p, r, None)?;
    }
    pooled.report()
}

/// Training IoU of one class against the original noisy annotations, one entry per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassIoUSeries {
    pub class: u8,
    pub points: Vec<(usize, Option<f64>)>,
}

impl ClassIoUSeries {
    pub fn new(class: u8) -> Self {
        ClassIoUSeries { class, points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.points.last().map(|p| p.0)
    }

    /// Appends a value, enforcing strictly increasing epochs `>= 1` and values in `[0, 1]`.
    pub fn push(&mut self, epoch: usize, value: Option<f64>) -> Result<()> {
        if epoch == 0 {
            return Err(Error::invalid("training IoU epochs start at 1"));
        }
        if let Some(last) = self.last_epoch() {
            if epoch <= last {
                return Err(Error::invalid(format!("epoch {epoch} is not after the last recorded epoch {last}")));
            }
        }
        if let Some(v) = value {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("IoU value {v} outside [0, 1]")));
            }
        }
        self.points.push((epoch, value));
        Ok(())
    }

    /// `(t, iou)` pairs with undefined entries dropped.
    pub fn defined_points(&self) -> Vec<(f64, f64)> {
        self.points.iter().filter_map(|&(t, v)| v.map(|v| (t as f64, v))).collect()
    }
}

/// Appends the pooled class IoU of `preds` vs `original_noisy` at `epoch`.
pub fn append_training_iou(
    series: &mut ClassIoUSeries,
    epoch: usize,
    preds: &[LabelMask],
    original_noisy: &[LabelMask],
) -> Result<()> {
    if preds.len() != original_noisy.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} annotations",
            preds.len(),
            original_noisy.len()
        )));
    }
    let mut total = IouCounts::default();
    for (p, n) in preds.iter().zip(original_noisy) {
        total += class_counts(p, n, series.class, None)?;
    }
    series.push(epoch, total.ratio())
}
