//! Directory-level evaluation of predictions against ground truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use matseg_core::metrics::{evaluate_pair, Annotation, EvalKind, MetricRow};
use matseg_core::{BinaryMask, LabelMap};
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{self, image_stem, BitDepth, IoError};

/// An annotation read from disk.
#[derive(Debug, Clone)]
pub enum Loaded {
    Labels(LabelMap),
    Boundary(BinaryMask),
    Phase(BinaryMask),
}

impl Loaded {
    pub fn as_annotation(&self) -> Annotation<'_> {
        match self {
            Loaded::Labels(l) => Annotation::Labels(l),
            Loaded::Boundary(b) => Annotation::Boundary(b),
            Loaded::Phase(p) => Annotation::Phase(p),
        }
    }
}

fn stem_suffix(path: &Path) -> Option<&str> {
    let stem = path.file_stem()?.to_str()?;
    stem.rsplit_once('.').map(|(_, s)| s)
}

/// Reads a raster as the annotation its name or content implies.
///
/// `.labels`, `.boundary` and `.phase` files are taken at their word. Other
/// files: 16-bit rasters are label maps; 8-bit rasters holding at most two
/// values are boundary masks (grain) or phase masks (phase); anything else
/// is a label map.
pub fn load_annotation(path: &Path, kind: EvalKind) -> Result<Loaded, IoError> {
    let (lm, depth) = io::load_label_raster(path)?;
    match stem_suffix(path) {
        Some("labels") => return Ok(Loaded::Labels(lm)),
        Some("boundary") => return Ok(Loaded::Boundary(lm.foreground())),
        Some("phase") => return Ok(Loaded::Phase(lm.foreground())),
        _ => {}
    }
    let binary = depth == BitDepth::Eight && lm.distinct_labels().len() <= 1;
    Ok(match (binary, kind) {
        (true, EvalKind::Grain) => Loaded::Boundary(lm.foreground()),
        (true, EvalKind::Phase) => Loaded::Phase(lm.foreground()),
        (false, _) => Loaded::Labels(lm),
    })
}

const SKIPPED: [&str; 2] = ["overlay", "prompts"];

fn preference(path: &Path, kind: EvalKind) -> u8 {
    match (stem_suffix(path), kind) {
        (Some("labels"), EvalKind::Grain) | (Some("phase"), EvalKind::Phase) => 0,
        (Some("boundary"), EvalKind::Grain) | (Some("labels"), EvalKind::Phase) => 1,
        _ => 2,
    }
}

/// Prediction files keyed by image stem, one per stem, preferring the
/// output that matches `kind`. Overlays and prompt renders are ignored.
pub fn prediction_files(dir: &Path, kind: EvalKind) -> Result<BTreeMap<String, PathBuf>, IoError> {
    let mut out: BTreeMap<String, PathBuf> = BTreeMap::new();
    for p in io::list_rasters(dir)? {
        if stem_suffix(&p).is_some_and(|s| SKIPPED.contains(&s)) {
            continue;
        }
        let stem = image_stem(&p);
        match out.get(&stem) {
            Some(cur) if preference(cur, kind) <= preference(&p, kind) => {}
            _ => {
                out.insert(stem, p);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageMetrics {
    pub image: String,
    pub prediction: String,
    pub ground_truth: String,
    pub metrics: BTreeMap<&'static str, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub kind: &'static str,
    pub tolerance: u32,
    pub images: Vec<ImageMetrics>,
    pub mean: BTreeMap<&'static str, f64>,
    pub failures: Vec<(String, String)>,
    pub unmatched: Vec<String>,
}

impl EvaluationReport {
    /// `image,metric,value` rows, then the means under image `mean`.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image", "metric", "value"]).expect("in-memory write");
        let order = |m: &BTreeMap<&'static str, f64>| -> Vec<(&'static str, f64)> {
            MetricRow::NAMES.iter().filter_map(|n| m.get(n).map(|v| (*n, *v))).collect()
        };
        for im in &self.images {
            for (name, v) in order(&im.metrics) {
                w.write_record([im.image.as_str(), name, &v.to_string()]).expect("in-memory write");
            }
        }
        for (name, v) in order(&self.mean) {
            w.write_record(["mean", name, &v.to_string()]).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, kind: EvalKind, tolerance: u32) -> Result<EvaluationReport, IoError> {
    let preds = prediction_files(pred_dir, kind)?;
    let mut gts: BTreeMap<String, PathBuf> = BTreeMap::new();
    for p in io::list_rasters(gt_dir)? {
        gts.entry(image_stem(&p)).or_insert(p);
    }
    let mut unmatched: Vec<String> = Vec::new();
    for (stem, p) in &preds {
        if !gts.contains_key(stem) {
            unmatched.push(format!("{} (no ground truth named {stem}.*)", p.display()));
        }
    }
    for (stem, p) in &gts {
        if !preds.contains_key(stem) {
            unmatched.push(format!("{} (no prediction named {stem}.*)", p.display()));
        }
    }
    let pairs: Vec<(&String, &PathBuf, &PathBuf)> =
        preds.iter().filter_map(|(s, p)| gts.get(s).map(|g| (s, p, g))).collect();
    let results: Vec<Result<ImageMetrics, (String, String)>> = pairs
        .par_iter()
        .map(|(stem, p, g)| {
            let fail = |e: String| ((*stem).clone(), e);
            let pred = load_annotation(p, kind).map_err(|e| fail(e.to_string()))?;
            let gt = load_annotation(g, kind).map_err(|e| fail(e.to_string()))?;
            let row = evaluate_pair(pred.as_annotation(), gt.as_annotation(), kind, tolerance)
                .map_err(|e| fail(e.to_string()))?;
            Ok(ImageMetrics {
                image: (*stem).clone(),
                prediction: p.display().to_string(),
                ground_truth: g.display().to_string(),
                metrics: row.entries().collect(),
            })
        })
        .collect();
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(m) => images.push(m),
            Err(f) => failures.push(f),
        }
    }
    let mut mean = BTreeMap::new();
    if !images.is_empty() {
        for name in MetricRow::NAMES {
            let vals: Vec<f64> = images.iter().filter_map(|m| m.metrics.get(name).copied()).collect();
            if !vals.is_empty() {
                mean.insert(name, vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
    }
    Ok(EvaluationReport {
        kind: kind.as_str(),
        tolerance,
        images,
        mean,
        failures,
        unmatched,
    })
}
