//! Rand index, adjusted Rand index, IoU and tolerance-based boundary
//! precision/recall/F1.
//!
//! Partition metrics take the ground truth first. Ground-truth pixels
//! labelled 0 are left out of pair counting; a prediction's 0 is an
//! ordinary cluster.

use alloc::collections::BTreeMap;

use crate::classical::{connected_components, squared_distance_transform, Connectivity};
use crate::postproc::label_to_boundary;
use crate::raster::{BinaryMask, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("inputs differ in size ({0} vs {1} elements)")]
    SizeMismatch(usize, usize),
    #[error("need at least two ground-truth elements, got {0}")]
    TooFewElements(usize),
    #[error("{kind} evaluation cannot use {annotation} inputs")]
    KindMismatch { kind: &'static str, annotation: &'static str },
}

/// Pair counts: `tp` pairs together in both, `tn` apart in both, `fp`
/// together only in the prediction, `fn_` together only in the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

struct Contingency {
    n: u64,
    /// Σ C(n_ij, 2)
    index: u64,
    /// Σ C(a_i, 2) over truth clusters
    truth_pairs: u64,
    /// Σ C(b_j, 2) over predicted clusters
    pred_pairs: u64,
}

fn contingency(truth: &[u32], pred: &[u32]) -> Result<Contingency, MetricsError> {
    if truth.len() != pred.len() {
        return Err(MetricsError::SizeMismatch(truth.len(), pred.len()));
    }
    let mut cells: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut rows: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cols: BTreeMap<u32, u64> = BTreeMap::new();
    let mut n = 0u64;
    for (&t, &p) in truth.iter().zip(pred) {
        if t == 0 {
            continue;
        }
        n += 1;
        *cells.entry((t, p)).or_default() += 1;
        *rows.entry(t).or_default() += 1;
        *cols.entry(p).or_default() += 1;
    }
    if n < 2 {
        return Err(MetricsError::TooFewElements(n as usize));
    }
    Ok(Contingency {
        n,
        index: cells.values().map(|&c| pairs(c)).sum(),
        truth_pairs: rows.values().map(|&c| pairs(c)).sum(),
        pred_pairs: cols.values().map(|&c| pairs(c)).sum(),
    })
}

/// Pair confusion from the contingency table.
pub fn pair_confusion(truth: &[u32], pred: &[u32]) -> Result<ConfusionCounts, MetricsError> {
    let c = contingency(truth, pred)?;
    let tp = c.index;
    let fn_ = c.truth_pairs - tp;
    let fp = c.pred_pairs - tp;
    Ok(ConfusionCounts {
        tp,
        fp,
        fn_,
        tn: pairs(c.n) - tp - fp - fn_,
    })
}

pub fn rand_index(counts: &ConfusionCounts) -> Result<f64, MetricsError> {
    let total = counts.total();
    if total == 0 {
        return Err(MetricsError::TooFewElements(total as usize));
    }
    Ok((counts.tp + counts.tn) as f64 / total as f64)
}

/// Hubert-Arabie ARI. When both partitions are trivial in the same way
/// the index is undefined; identical partitions then score 1, others 0.
pub fn adjusted_rand_index(truth: &[u32], pred: &[u32]) -> Result<f64, MetricsError> {
    let c = contingency(truth, pred)?;
    let total = pairs(c.n) as i128;
    let (idx, sa, sb) = (c.index as i128, c.truth_pairs as i128, c.pred_pairs as i128);
    // (Index - Sa Sb / T) / ((Sa + Sb) / 2 - Sa Sb / T), scaled by 2T
    let num = 2 * (idx * total - sa * sb);
    let den = total * (sa + sb) - 2 * sa * sb;
    if den == 0 {
        return Ok(if idx == sa && idx == sb { 1.0 } else { 0.0 });
    }
    Ok(num as f64 / den as f64)
}

/// RI and ARI of a label-map pair.
pub fn partition_scores(truth: &LabelMap, pred: &LabelMap) -> Result<(f64, f64), MetricsError> {
    let counts = pair_confusion(truth.labels(), pred.labels())?;
    Ok((rand_index(&counts)?, adjusted_rand_index(truth.labels(), pred.labels())?))
}

fn check_masks(a: &BinaryMask, b: &BinaryMask) -> Result<(), MetricsError> {
    if !a.same_frame(b) {
        return Err(MetricsError::SizeMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Pixel IoU; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricsError> {
    check_masks(pred, gt)?;
    let inter = pred.intersection_count(gt);
    let union = pred.area() + gt.area() - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_ratios(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }

    const PERFECT: Prf = Prf { precision: 1.0, recall: 1.0, f1: 1.0 };
    const ZERO: Prf = Prf { precision: 0.0, recall: 0.0, f1: 0.0 };
}

/// Exact pixel precision/recall/F1.
pub fn pixel_prf(pred: &BinaryMask, gt: &BinaryMask) -> Result<Prf, MetricsError> {
    boundary_prf(pred, gt, 0)
}

fn matched_within(from: &BinaryMask, to: &BinaryMask, tol2: u64) -> usize {
    let d = squared_distance_transform(to);
    from.iter_indices().filter(|&i| d[i] <= tol2).count()
}

/// A predicted pixel is correct when a ground-truth pixel lies within
/// Euclidean distance `tolerance`, and symmetrically for recall.
pub fn boundary_prf(pred: &BinaryMask, gt: &BinaryMask, tolerance: u32) -> Result<Prf, MetricsError> {
    check_masks(pred, gt)?;
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(Prf::PERFECT),
        (true, false) | (false, true) => return Ok(Prf::ZERO),
        _ => {}
    }
    let tol2 = tolerance as u64 * tolerance as u64;
    let precision = matched_within(pred, gt, tol2) as f64 / pred.area() as f64;
    let recall = matched_within(gt, pred, tol2) as f64 / gt.area() as f64;
    Ok(Prf::from_ratios(precision, recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalKind {
    #[default]
    Grain,
    Phase,
}

impl EvalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalKind::Grain => "grain",
            EvalKind::Phase => "phase",
        }
    }
}

pub const DEFAULT_TOLERANCE: u32 = 2;

/// What one side of an evaluation pair looks like on disk.
#[derive(Debug, Clone, Copy)]
pub enum Annotation<'a> {
    Labels(&'a LabelMap),
    /// Set pixels are grain boundaries.
    Boundary(&'a BinaryMask),
    Phase(&'a BinaryMask),
}

impl Annotation<'_> {
    fn name(&self) -> &'static str {
        match self {
            Annotation::Labels(_) => "label-map",
            Annotation::Boundary(_) => "boundary",
            Annotation::Phase(_) => "phase",
        }
    }
}

/// One image's metric values; entries that do not apply to the kind are
/// `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricRow {
    pub ari: Option<f64>,
    pub ri: Option<f64>,
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl MetricRow {
    pub const NAMES: [&'static str; 6] = ["ARI", "RI", "IoU", "Precision", "Recall", "F1"];

    /// Present values in [`Self::NAMES`] order.
    pub fn entries(&self) -> impl Iterator<Item = (&'static str, f64)> {
        let vals = [self.ari, self.ri, self.iou, self.precision, self.recall, self.f1];
        Self::NAMES.into_iter().zip(vals).filter_map(|(n, v)| v.map(|v| (n, v)))
    }
}

/// Boundary pixels are dropped and the rest split into 4-connected grains.
pub fn boundary_to_partition(boundary: &BinaryMask) -> LabelMap {
    connected_components(&boundary.complement(), Connectivity::Four).0
}

fn grain_parts(a: Annotation<'_>) -> Result<(LabelMap, BinaryMask), MetricsError> {
    match a {
        Annotation::Labels(lm) => Ok((lm.clone(), label_to_boundary(lm))),
        Annotation::Boundary(b) => Ok((boundary_to_partition(b), b.clone())),
        Annotation::Phase(_) => Err(MetricsError::KindMismatch {
            kind: "grain",
            annotation: a.name(),
        }),
    }
}

fn phase_part(a: Annotation<'_>) -> Result<BinaryMask, MetricsError> {
    match a {
        Annotation::Phase(m) => Ok(m.clone()),
        Annotation::Labels(lm) => Ok(lm.foreground()),
        Annotation::Boundary(_) => Err(MetricsError::KindMismatch {
            kind: "phase",
            annotation: a.name(),
        }),
    }
}

/// Grain: ARI/RI over partitions plus boundary P/R/F1 at `tolerance`.
/// Phase: IoU plus pixel P/R/F1.
pub fn evaluate_pair(pred: Annotation<'_>, gt: Annotation<'_>, kind: EvalKind, tolerance: u32) -> Result<MetricRow, MetricsError> {
    match kind {
        EvalKind::Grain => {
            let (pl, pb) = grain_parts(pred)?;
            let (gl, gb) = grain_parts(gt)?;
            let (ri, ari) = partition_scores(&gl, &pl)?;
            let prf = boundary_prf(&pb, &gb, tolerance)?;
            Ok(MetricRow {
                ari: Some(ari),
                ri: Some(ri),
                iou: None,
                precision: Some(prf.precision),
                recall: Some(prf.recall),
                f1: Some(prf.f1),
            })
        }
        EvalKind::Phase => {
            let p = phase_part(pred)?;
            let g = phase_part(gt)?;
            let prf = pixel_prf(&p, &g)?;
            Ok(MetricRow {
                ari: None,
                ri: None,
                iou: Some(iou(&p, &g)?),
                precision: Some(prf.precision),
                recall: Some(prf.recall),
                f1: Some(prf.f1),
            })
        }
    }
}
