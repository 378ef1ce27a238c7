//! Crop pyramid, prompted prediction per crop, two-stage NMS and merging
//! into a single label map.

use alloc::vec::Vec;
use core::time::Duration;

use crate::backend::{BackendError, Embedding, SegmentBackend};
use crate::math::{ceil, round_half_down};
use crate::prompt::{generate_prompts, PromptConfig, PromptConfigError, PromptPoint, PromptSet};
use crate::raster::{CropBox, LabelMap, MaskOrigin, Micrograph, ScoredMask};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub crop_layers: u32,
    /// Fraction in `[0, 1)`.
    pub crop_overlap: f64,
    pub score_min: f32,
    /// IoU above which the weaker of two masks is suppressed, in `(0, 1]`.
    pub nms_iou: f64,
    pub min_mask_area: usize,
    pub prompt: PromptConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            crop_layers: 1,
            crop_overlap: 0.34,
            score_min: 0.8,
            nms_iou: 0.7,
            min_mask_area: 16,
            prompt: PromptConfig::default(),
        }
    }
}

/// Deeper layers would make crops smaller than a pixel on any real image.
pub const MAX_CROP_LAYERS: u32 = 8;

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |key: &'static str, reason: &'static str| Err(PipelineError::Config { key, reason });
        if self.crop_layers > MAX_CROP_LAYERS {
            return bad("crop_layers", "must be at most 8");
        }
        if !(0.0..1.0).contains(&self.crop_overlap) {
            return bad("crop_overlap", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.score_min) {
            return bad("score_min", "must lie in [0, 1]");
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return bad("nms_iou", "must lie in (0, 1]");
        }
        self.prompt.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Prompts,
    Encode,
    Predict,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Prompts => "prompts",
            Stage::Encode => "encode",
            Stage::Predict => "predict",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid {key}: {reason}")]
    Config { key: &'static str, reason: &'static str },
    #[error("invalid prompt settings: {0}")]
    Prompt(#[from] PromptConfigError),
    #[error("{} failed on crop {crop_index} {crop:?}: {source}", stage.as_str())]
    Backend {
        stage: Stage,
        crop_index: usize,
        crop: CropBox,
        source: BackendError,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::Config { .. } | PipelineError::Prompt(_) => Stage::Config,
            PipelineError::Backend { stage, .. } => *stage,
        }
    }
}

/// Monotonic time source, so the core stays free of `std::time`.
pub trait Clock {
    fn now(&self) -> Duration;
}

/// Reports zero for everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> Duration {
        Duration::ZERO
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageTimings {
    pub prompts: Duration,
    pub crops: Duration,
    pub merge: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Kept masks in the full-image frame. Label `i + 1` belongs to `masks[i]`.
    pub masks: Vec<ScoredMask>,
    pub labelmap: LabelMap,
    pub prompts: Option<PromptSet>,
    pub crops: Vec<CropBox>,
    pub timing: StageTimings,
}

impl SegmentationResult {
    pub fn prompts_used(&self) -> &[PromptPoint] {
        self.prompts.as_ref().map_or(&[], |p| &p.points)
    }
}

fn axis_crops(len: u32, n: u32, overlap: f64) -> Vec<(u32, u32)> {
    if n == 1 {
        return alloc::vec![(0, len)];
    }
    let lc = (ceil(len as f64 * (1.0 + overlap) / n as f64) as u32).clamp(1, len);
    let span = (len - lc) as f64;
    (0..n)
        .map(|j| {
            let o = round_half_down(j as f64 * span / (n - 1) as f64) as u32;
            (o, o + lc)
        })
        .collect()
}

/// Layer 0 is the full frame; layer `i` tiles each axis with `2^i`
/// overlapping crops. Ordered by layer, then row, then column.
pub fn generate_crops(width: u32, height: u32, layers: u32, overlap: f64) -> Vec<CropBox> {
    let mut out = alloc::vec![CropBox::full(width, height)];
    for layer in 1..=layers.min(MAX_CROP_LAYERS) {
        let n = 1u32 << layer;
        let xs = axis_crops(width, n.min(width), overlap);
        let ys = axis_crops(height, n.min(height), overlap);
        for &(y0, y1) in &ys {
            for &(x0, x1) in &xs {
                out.push(CropBox { x0, y0, x1, y1, layer });
            }
        }
    }
    out
}

/// Runs every full-frame prompt that falls inside `crop` through the
/// backend, keeps the best candidate per prompt, filters by score and area
/// and returns the survivors in the full frame.
pub fn segment_crop<B: SegmentBackend>(
    img: &Micrograph,
    crop: &CropBox,
    crop_index: usize,
    backend: &B,
    prompts: &[PromptPoint],
    cfg: &PipelineConfig,
) -> Result<Vec<ScoredMask>, PipelineError> {
    let tag = |stage, source| PipelineError::Backend {
        stage,
        crop_index,
        crop: *crop,
        source,
    };
    let inside: Vec<&PromptPoint> = prompts.iter().filter(|p| crop.contains(p.x, p.y)).collect();
    if inside.is_empty() {
        return Ok(Vec::new());
    }
    let emb = backend.encode_crop(img, crop).map_err(|e| tag(Stage::Encode, e))?;
    let frame = emb.frame();
    let mut out = Vec::new();
    for p in inside {
        let outcome = backend
            .predict(&emb, p.x - frame.x0, p.y - frame.y0)
            .map_err(|e| tag(Stage::Predict, e))?;
        let best = outcome.into_best();
        if best.score() < cfg.score_min || best.area() < cfg.min_mask_area {
            continue;
        }
        let mask = best.mask.place_into(crop, img.width(), img.height());
        let origin = MaskOrigin {
            crop: crop_index,
            prompt: Some((p.x, p.y)),
        };
        let placed = ScoredMask::new(mask, best.score(), origin).expect("score already validated");
        out.push(placed);
    }
    Ok(out)
}

struct Summary {
    area: usize,
    bbox: Option<CropBox>,
}

fn summarize(m: &ScoredMask) -> Summary {
    Summary {
        area: m.area(),
        bbox: m.mask.bounding_box(),
    }
}

fn iou_with(a: &ScoredMask, sa: &Summary, b: &ScoredMask, sb: &Summary) -> f64 {
    let union_if_disjoint = sa.area + sb.area;
    if union_if_disjoint == 0 {
        return 1.0;
    }
    let inter = match (sa.bbox, sb.bbox) {
        (Some(ba), Some(bb)) => match ba.intersect(&bb) {
            Some(ov) => a.mask.intersection_count_rows(&b.mask, ov.y0..ov.y1),
            None => 0,
        },
        _ => 0,
    };
    inter as f64 / (union_if_disjoint - inter) as f64
}

/// Intersection over union; two empty masks count as identical.
pub fn mask_iou(a: &ScoredMask, b: &ScoredMask) -> f64 {
    iou_with(a, &summarize(a), b, &summarize(b))
}

/// Indices of the masks greedy hard NMS keeps, in ascending order.
pub fn nms_indices(masks: &[ScoredMask], iou_threshold: f64) -> Vec<usize> {
    let summaries: Vec<Summary> = masks.iter().map(summarize).collect();
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&i, &j| {
        masks[j]
            .score()
            .total_cmp(&masks[i].score())
            .then(summaries[j].area.cmp(&summaries[i].area))
            .then(i.cmp(&j))
    });
    let mut accepted: Vec<usize> = Vec::new();
    for i in order {
        let ok = accepted
            .iter()
            .all(|&k| iou_with(&masks[i], &summaries[i], &masks[k], &summaries[k]) <= iou_threshold);
        if ok {
            accepted.push(i);
        }
    }
    accepted.sort_unstable();
    accepted
}

/// Greedy hard NMS: visit by score (then larger area, then input order)
/// and keep a mask iff its IoU with every kept mask is at most
/// `iou_threshold`. Kept masks stay in input order.
pub fn nms(masks: Vec<ScoredMask>, iou_threshold: f64) -> Vec<ScoredMask> {
    let keep = nms_indices(&masks, iou_threshold);
    let mut keep = keep.into_iter().peekable();
    masks
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(m)
            } else {
                None
            }
        })
        .collect()
}

/// Paints `masks[i]` as label `i + 1`; contested pixels go to the higher
/// score, then the lower index.
pub fn label_masks(masks: &[ScoredMask], width: u32, height: u32) -> LabelMap {
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&i, &j| masks[j].score().total_cmp(&masks[i].score()).then(i.cmp(&j)));
    let mut lm = LabelMap::new(width, height);
    let labels = lm.labels_mut();
    for i in order {
        for p in masks[i].mask.iter_indices() {
            if labels[p] == 0 {
                labels[p] = i as u32 + 1;
            }
        }
    }
    lm
}

/// Cross-crop NMS over the per-crop survivors (flattened in crop order),
/// then labeling.
pub fn merge_and_label(per_crop: Vec<Vec<ScoredMask>>, width: u32, height: u32, nms_iou: f64) -> SegmentationResult {
    let all: Vec<ScoredMask> = per_crop.into_iter().flatten().collect();
    let masks = nms(all, nms_iou);
    let labelmap = label_masks(&masks, width, height);
    SegmentationResult {
        masks,
        labelmap,
        prompts: None,
        crops: Vec::new(),
        timing: StageTimings::default(),
    }
}

/// The whole pipeline: prompts, crops, per-crop prediction and NMS,
/// cross-crop NMS and labeling.
pub fn segment_micrograph<B: SegmentBackend>(
    img: &Micrograph,
    cfg: &PipelineConfig,
    backend: &B,
    clock: &dyn Clock,
) -> Result<SegmentationResult, PipelineError> {
    cfg.validate()?;
    let t0 = clock.now();
    let prompts = generate_prompts(img, &cfg.prompt);
    let t1 = clock.now();
    let crops = generate_crops(img.width(), img.height(), cfg.crop_layers, cfg.crop_overlap);
    let mut per_crop = Vec::with_capacity(crops.len());
    for (i, crop) in crops.iter().enumerate() {
        let masks = segment_crop(img, crop, i, backend, &prompts.points, cfg)?;
        per_crop.push(nms(masks, cfg.nms_iou));
    }
    let t2 = clock.now();
    let mut result = merge_and_label(per_crop, img.width(), img.height(), cfg.nms_iou);
    let t3 = clock.now();
    result.prompts = Some(prompts);
    result.crops = crops;
    result.timing = StageTimings {
        prompts: t1.saturating_sub(t0),
        crops: t2.saturating_sub(t1),
        merge: t3.saturating_sub(t2),
    };
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Capabilities, OracleBackend, PredictOutcome};
    use crate::prompt::{PromptOrigin, SegmentationMode};
    use crate::raster::BinaryMask;
    use alloc::vec;

    fn sm(mask: BinaryMask, score: f32) -> ScoredMask {
        ScoredMask::new(mask, score, MaskOrigin::default()).unwrap()
    }

    fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    #[test]
    fn layer_zero_is_full_frame() {
        let c = generate_crops(37, 21, 0, 0.34);
        assert_eq!(c, vec![CropBox::full(37, 21)]);
    }

    #[test]
    fn layer_one_worked_example() {
        let c = generate_crops(100, 100, 1, 0.34);
        assert_eq!(c.len(), 5);
        let xs: Vec<(u32, u32)> = c[1..].iter().map(|b| (b.x0, b.x1)).collect();
        assert_eq!(xs, vec![(0, 67), (33, 100), (0, 67), (33, 100)]);
        assert!(c[1..].iter().all(|b| b.layer == 1));
        assert_eq!((c[3].y0, c[3].y1), (33, 100));
    }

    #[test]
    fn crops_cover_every_layer() {
        for &(w, h) in &[(1u32, 1u32), (7, 300), (100, 100), (513, 257)] {
            for &ov in &[0.0, 0.2, 0.34, 0.9] {
                let crops = generate_crops(w, h, 3, ov);
                for layer in 0..=3 {
                    let mut cov = BinaryMask::new(w, h);
                    for c in crops.iter().filter(|c| c.layer == layer) {
                        assert!(c.x1 <= w && c.y1 <= h && c.x0 < c.x1 && c.y0 < c.y1);
                        cov.union_with(&rect(w, h, c.x0, c.y0, c.x1, c.y1));
                    }
                    assert_eq!(cov.area(), (w * h) as usize, "{w}x{h} ov {ov} layer {layer}");
                }
            }
        }
    }

    #[test]
    fn nms_identical_keeps_higher() {
        let m = rect(8, 8, 1, 1, 5, 5);
        let kept = nms(vec![sm(m.clone(), 0.8), sm(m, 0.9)], 0.7);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score(), 0.9);
    }

    #[test]
    fn nms_preserves_input_order() {
        let a = rect(10, 10, 0, 0, 3, 3);
        let b = rect(10, 10, 5, 5, 9, 9);
        let kept = nms(vec![sm(a.clone(), 0.5), sm(b.clone(), 0.9)], 0.7);
        assert_eq!(kept[0].mask, a);
        assert_eq!(kept[1].mask, b);
    }

    #[test]
    fn nms_threshold_is_inclusive() {
        // IoU exactly 0.5
        let a = rect(10, 1, 0, 0, 6, 1);
        let b = rect(10, 1, 2, 0, 8, 1);
        assert_eq!(mask_iou(&sm(a.clone(), 1.0), &sm(b.clone(), 1.0)), 0.5);
        assert_eq!(nms(vec![sm(a.clone(), 0.9), sm(b.clone(), 0.8)], 0.5).len(), 2);
        assert_eq!(nms(vec![sm(a, 0.9), sm(b, 0.8)], 0.49).len(), 1);
    }

    #[test]
    fn nms_ties_prefer_larger_area() {
        let small = rect(10, 10, 0, 0, 4, 4);
        let big = rect(10, 10, 0, 0, 5, 4);
        let kept = nms(vec![sm(small, 0.9), sm(big.clone(), 0.9)], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].mask, big);
    }

    #[test]
    fn contested_pixels_go_to_higher_score() {
        let a = rect(6, 1, 0, 0, 4, 1);
        let b = rect(6, 1, 2, 0, 6, 1);
        let lm = label_masks(&[sm(a, 0.8), sm(b, 0.9)], 6, 1);
        assert_eq!(lm.labels(), &[1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn contested_ties_go_to_lower_index() {
        let a = rect(6, 1, 0, 0, 4, 1);
        let b = rect(6, 1, 2, 0, 6, 1);
        let lm = label_masks(&[sm(a, 0.9), sm(b, 0.9)], 6, 1);
        assert_eq!(lm.labels(), &[1, 1, 1, 1, 2, 2]);
    }

    struct ThreeCandidates;

    impl SegmentBackend for ThreeCandidates {
        type Embedding = crate::backend::OracleEmbedding;

        fn capabilities(&self) -> Capabilities {
            Capabilities {
                max_input_side: None,
                embedding_dims: (1, 1, 1),
                reentrant: true,
            }
        }

        fn encode_crop(&self, img: &Micrograph, crop: &CropBox) -> Result<Self::Embedding, BackendError> {
            OracleBackend::new(LabelMap::new(img.width(), img.height())).encode_crop(img, crop)
        }

        fn predict(&self, emb: &Self::Embedding, _x: u32, _y: u32) -> Result<PredictOutcome, BackendError> {
            let (_, h, w) = emb.dims();
            let masks = [(0.7, 2), (0.9, 5), (0.4, 8)];
            PredictOutcome::new(
                masks
                    .iter()
                    .map(|&(s, side)| sm(rect(w, h, 0, 0, side, side), s))
                    .collect(),
            )
        }
    }

    #[test]
    fn only_top_candidate_survives() {
        let img = Micrograph::from_fn(16, 16, |_, _| 0).unwrap();
        let cfg = PipelineConfig {
            score_min: 0.5,
            min_mask_area: 1,
            ..PipelineConfig::default()
        };
        let prompts = [PromptPoint::new(3, 3, PromptOrigin::Grid)];
        let out = segment_crop(&img, &CropBox::full(16, 16), 0, &ThreeCandidates, &prompts, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score(), 0.9);
        assert_eq!(out[0].area(), 25);
        assert_eq!(out[0].origin.prompt, Some((3, 3)));
    }

    #[test]
    fn no_prompts_in_crop() {
        let img = Micrograph::from_fn(16, 16, |_, _| 0).unwrap();
        let crop = CropBox::new(8, 8, 16, 16, 1, 16, 16).unwrap();
        let prompts = [PromptPoint::new(3, 3, PromptOrigin::Grid)];
        let out = segment_crop(&img, &crop, 1, &ThreeCandidates, &prompts, &PipelineConfig::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn crop_masks_return_to_full_frame() {
        let truth = LabelMap::from_fn(20, 20, |x, _| if x < 10 { 1 } else { 2 });
        let backend = OracleBackend::new(truth.clone());
        let img = Micrograph::from_fn(20, 20, |_, _| 0).unwrap();
        let crop = CropBox::new(5, 0, 15, 20, 1, 20, 20).unwrap();
        let prompts = [PromptPoint::new(12, 4, PromptOrigin::Grid)];
        let out = segment_crop(&img, &crop, 3, &backend, &prompts, &PipelineConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].origin.crop, 3);
        assert_eq!(out[0].mask, rect(20, 20, 10, 0, 15, 20));
    }

    #[test]
    fn blank_multiphase_is_empty() {
        let img = Micrograph::from_fn(64, 64, |_, _| 90).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.prompt.mode = SegmentationMode::Multiphase;
        let backend = OracleBackend::new(LabelMap::new(64, 64));
        let r = segment_micrograph(&img, &cfg, &backend, &NoClock).unwrap();
        assert!(r.masks.is_empty());
        assert!(r.labelmap.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn backend_errors_carry_stage() {
        let img = Micrograph::from_fn(16, 16, |_, _| 0).unwrap();
        let backend = OracleBackend::new(LabelMap::new(8, 8));
        let prompts = [PromptPoint::new(3, 3, PromptOrigin::Grid)];
        let err = segment_crop(&img, &CropBox::full(16, 16), 0, &backend, &prompts, &PipelineConfig::default()).unwrap_err();
        assert_eq!(err.stage(), Stage::Encode);
        assert!(alloc::format!("{err}").starts_with("encode failed on crop 0"));
    }

    #[test]
    fn config_validation_names_key() {
        let cfg = PipelineConfig {
            nms_iou: 0.0,
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config { key: "nms_iou", .. })));
        let cfg = PipelineConfig {
            crop_overlap: 1.0,
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config { key: "crop_overlap", .. })));
    }
}
