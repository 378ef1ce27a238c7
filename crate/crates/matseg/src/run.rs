//! Batch processing behind `segment`, `baseline`, `prompts` and `stats`.
//!
//! Workers compute every output of an image in memory; a single collector
//! on the calling thread writes the files and assembles the manifest, so
//! the result does not depend on completion order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use matseg_core::classical::{
    adaptive_threshold, connected_components, otsu_threshold, watershed_baseline, Connectivity, Polarity,
};
use matseg_core::pipeline::{label_masks, Clock};
use matseg_core::postproc::{
    boundary_postprocess, classify, compose_phase_mask, compute_region_stats, label_to_boundary, summarize,
    PhaseSelection, RegionStats, StatsSummary,
};
use matseg_core::prompt::{generate_prompts, presegment};
use matseg_core::metrics::EvalKind;
use matseg_core::{
    segment_micrograph, BinaryMask, LabelMap, MaskOrigin, Micrograph, OracleBackend, PromptPoint, ScoredMask,
    SegmentationMode, SegmentBackend,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{BaselineMethod, RunConfig};
use crate::io::{self, image_stem, IoError, MaskDocument};
use crate::render;

pub const STATS_HEADER: [&str; 12] = [
    "label",
    "area_px",
    "area_um2",
    "cx",
    "cy",
    "perimeter_px",
    "circularity",
    "aspect_ratio",
    "mean_intensity",
    "ecd_px",
    "ecd_um",
    "group",
];

pub const MANIFEST_FILE: &str = "manifest.json";

/// Real time for stage timings.
pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub prompts_ms: f64,
    pub crops_ms: f64,
    pub merge_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRecord {
    pub regions: usize,
    pub ecd_mean_px: f64,
    pub ecd_median_px: f64,
    pub ecd_std_px: f64,
    pub area_fraction: BTreeMap<String, f64>,
    pub histogram: Vec<u64>,
    pub histogram_max_px: f64,
}

impl From<StatsSummary> for SummaryRecord {
    fn from(s: StatsSummary) -> Self {
        Self {
            regions: s.count,
            ecd_mean_px: s.ecd_mean,
            ecd_median_px: s.ecd_median,
            ecd_std_px: s.ecd_std,
            area_fraction: s.area_fraction,
            histogram: s.histogram.to_vec(),
            histogram_max_px: s.histogram_max,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageRecord {
    pub image: String,
    pub stem: String,
    pub outputs: Vec<String>,
    pub masks: usize,
    pub prompts: usize,
    pub timings: Timings,
    pub summary: SummaryRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub image: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub input: String,
    pub output: String,
    pub config: Value,
    pub images: Vec<ImageRecord>,
    pub failures: Vec<Failure>,
}

/// Files for one image, not yet written.
pub struct ImageOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub record: ImageRecord,
}

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Other(String),
}

fn other(e: impl std::fmt::Display) -> ImageError {
    ImageError::Other(e.to_string())
}

pub fn load_input(path: &Path, cfg: &RunConfig) -> Result<Micrograph, ImageError> {
    let img = io::load_micrograph(path)?;
    match cfg.scale {
        Some(s) => img.with_scale(s).map_err(other),
        None => Ok(img),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn stats_csv(stats: &[RegionStats]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STATS_HEADER).expect("in-memory write");
    for s in stats {
        w.write_record([
            s.label.to_string(),
            s.area_px.to_string(),
            fmt_opt(s.area_um2),
            s.centroid.0.to_string(),
            s.centroid.1.to_string(),
            s.perimeter_px.to_string(),
            s.circularity.to_string(),
            s.aspect_ratio.to_string(),
            s.mean_intensity.to_string(),
            s.ecd_px.to_string(),
            fmt_opt(s.ecd_um),
            s.group.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn prompts_csv(points: &[PromptPoint]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "origin"]).expect("in-memory write");
    for p in points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.origin.as_str().to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Everything written for a segmented image, shared by every backend so
/// the output layout is the same.
#[allow(clippy::too_many_arguments)]
pub fn render_outputs(
    path: &Path,
    img: &Micrograph,
    masks: &[ScoredMask],
    labels: &LabelMap,
    prompts: &[PromptPoint],
    cfg: &RunConfig,
    mut timings: Timings,
    started: Instant,
) -> Result<ImageOutput, ImageError> {
    let stem = image_stem(path);
    let mut files = Vec::new();
    files.push((format!("{stem}.labels.png"), io::encode_labels(labels)?));

    let mut stats = compute_region_stats(labels, img, img.scale()).map_err(other)?;
    if !cfg.screen.is_empty() {
        for s in &mut stats {
            s.group = Some(classify(s, &cfg.screen).to_string());
        }
    }
    match cfg.kind {
        EvalKind::Grain => {
            let mut boundary = label_to_boundary(labels);
            if cfg.postproc.enabled {
                boundary = boundary_postprocess(&boundary, cfg.postproc.close_radius, cfg.postproc.prune_len);
            }
            files.push((format!("{stem}.boundary.png"), io::encode_mask(&boundary)?));
        }
        EvalKind::Phase => {
            let phase = if cfg.phase_groups.is_empty() {
                compose_phase_mask(masks, PhaseSelection::All)
            } else {
                let groups = matseg_core::postproc::screen_regions(masks, img, &cfg.screen).map_err(other)?;
                let mut ix: Vec<usize> = cfg
                    .phase_groups
                    .iter()
                    .filter_map(|g| groups.get(g))
                    .flatten()
                    .copied()
                    .collect();
                ix.sort_unstable();
                compose_phase_mask(masks, PhaseSelection::Indices(&ix))
            }
            .unwrap_or_else(|| BinaryMask::new(img.width(), img.height()));
            files.push((format!("{stem}.phase.png"), io::encode_mask(&phase)?));
        }
    }
    files.push((
        format!("{stem}.masks.json"),
        MaskDocument::from_masks(img.width(), img.height(), masks).to_json(),
    ));
    files.push((
        format!("{stem}.overlay.png"),
        io::encode_rgb_png(img.width(), img.height(), render::label_overlay(img, labels))?,
    ));
    files.push((format!("{stem}.stats.csv"), stats_csv(&stats)));
    files.push((format!("{stem}.prompts.csv"), prompts_csv(prompts)));

    let summary = summarize(&stats, img.len()).into();
    timings.total_ms = ms(started.elapsed());
    let record = ImageRecord {
        image: path.display().to_string(),
        stem,
        outputs: files.iter().map(|(n, _)| n.clone()).collect(),
        masks: masks.len(),
        prompts: prompts.len(),
        timings,
        summary,
    };
    Ok(ImageOutput { files, record })
}

/// Runs the pipeline on one image with any backend.
pub fn segment_with<B: SegmentBackend>(path: &Path, img: &Micrograph, cfg: &RunConfig, backend: &B) -> Result<ImageOutput, ImageError> {
    let started = Instant::now();
    let clock = WallClock::new();
    let result = segment_micrograph(img, &cfg.pipeline, backend, &clock).map_err(other)?;
    let timings = Timings {
        prompts_ms: ms(result.timing.prompts),
        crops_ms: ms(result.timing.crops),
        merge_ms: ms(result.timing.merge),
        total_ms: 0.0,
    };
    render_outputs(path, img, &result.masks, &result.labelmap, result.prompts_used(), cfg, timings, started)
}

/// Renumbers nonzero labels to `1..=n` in ascending order of the old value.
pub fn compact_labels(lm: &LabelMap) -> LabelMap {
    let mut map = BTreeMap::new();
    for &l in lm.labels() {
        if l != 0 {
            map.insert(l, 0u32);
        }
    }
    for (i, v) in map.values_mut().enumerate() {
        *v = i as u32 + 1;
    }
    let labels = lm.labels().iter().map(|l| if *l == 0 { 0 } else { map[l] }).collect();
    LabelMap::from_vec(lm.width(), lm.height(), labels).expect("same frame")
}

/// One mask per label, label `i + 1` becoming mask `i`, score 1.
pub fn masks_from_labels(lm: &LabelMap) -> Vec<ScoredMask> {
    let n = lm.max_label() as usize;
    let mut masks = vec![BinaryMask::new(lm.width(), lm.height()); n];
    for (i, &l) in lm.labels().iter().enumerate() {
        if l != 0 {
            masks[l as usize - 1].insert_index(i);
        }
    }
    masks
        .into_iter()
        .map(|m| ScoredMask::new(m, 1.0, MaskOrigin::default()).expect("score in range"))
        .collect()
}

/// Label map produced by a conventional method.
pub fn baseline_labels(img: &Micrograph, method: BaselineMethod, cfg: &RunConfig) -> Result<LabelMap, ImageError> {
    let polarity = cfg.pipeline.prompt.presegment.polarity;
    let regions = |mask: &BinaryMask| connected_components(mask, Connectivity::Four).0;
    let lm = match method {
        BaselineMethod::Otsu => regions(&otsu_threshold(img, polarity).map_err(other)?.mask),
        BaselineMethod::Adaptive => {
            let bright = adaptive_threshold(img, cfg.baseline.window, cfg.baseline.offset).map_err(other)?;
            let mask = match polarity {
                Polarity::Bright => bright,
                Polarity::Dark => bright.complement(),
            };
            regions(&mask)
        }
        BaselineMethod::Canny => {
            presegment(img, SegmentationMode::Polycrystalline, &cfg.pipeline.prompt.presegment).labels
        }
        BaselineMethod::Watershed => watershed_baseline(img, polarity).map_err(other)?,
    };
    Ok(compact_labels(&lm))
}

pub fn baseline_image(path: &Path, img: &Micrograph, method: BaselineMethod, cfg: &RunConfig) -> Result<ImageOutput, ImageError> {
    let started = Instant::now();
    let labels = baseline_labels(img, method, cfg)?;
    let masks = masks_from_labels(&labels);
    debug_assert_eq!(label_masks(&masks, img.width(), img.height()), labels);
    render_outputs(path, img, &masks, &labels, &[], cfg, Timings::default(), started)
}

/// `<stem>.prompts.csv` and a `<stem>.prompts.png` overlay.
pub fn prompts_image(path: &Path, img: &Micrograph, cfg: &RunConfig) -> Result<ImageOutput, ImageError> {
    let started = Instant::now();
    let set = generate_prompts(img, &cfg.pipeline.prompt);
    let stem = image_stem(path);
    let files = vec![
        (format!("{stem}.prompts.csv"), prompts_csv(&set.points)),
        (
            format!("{stem}.prompts.png"),
            io::encode_rgb_png(img.width(), img.height(), render::prompt_overlay(img, &set.points))?,
        ),
    ];
    let record = ImageRecord {
        image: path.display().to_string(),
        stem,
        outputs: files.iter().map(|(n, _)| n.clone()).collect(),
        masks: 0,
        prompts: set.points.len(),
        timings: Timings { prompts_ms: ms(started.elapsed()), total_ms: ms(started.elapsed()), ..Timings::default() },
        summary: summarize(&[], img.len()).into(),
    };
    Ok(ImageOutput { files, record })
}

/// Rasters in `dir` keyed by stem. Duplicate stems keep the first path.
pub fn index_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>, IoError> {
    let mut out = BTreeMap::new();
    for p in io::list_rasters(dir)? {
        out.entry(image_stem(&p)).or_insert(p);
    }
    Ok(out)
}

/// Oracle answers for one image: the truth file with the same stem.
pub fn oracle_image(path: &Path, img: &Micrograph, cfg: &RunConfig, truth: &BTreeMap<String, PathBuf>) -> Result<ImageOutput, ImageError> {
    let stem = image_stem(path);
    let truth_path = truth
        .get(&stem)
        .ok_or_else(|| ImageError::Other(format!("no truth label map named {stem}.* in the truth directory")))?;
    let labels = io::load_labels(truth_path)?;
    segment_with(path, img, cfg, &OracleBackend::new(labels))
}

/// Processes `inputs` on `jobs` workers and writes everything into `out`.
/// Returns the manifest; failures are recorded, not fatal.
pub fn run_batch<F>(
    command: &str,
    input: &Path,
    inputs: &[PathBuf],
    out: &Path,
    jobs: usize,
    cfg: &RunConfig,
    work: F,
) -> Result<RunManifest, IoError>
where
    F: Fn(&Path) -> Result<ImageOutput, ImageError> + Sync,
{
    std::fs::create_dir_all(out).map_err(|source| IoError::Read { path: out.to_path_buf(), source })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    let (tx, rx) = mpsc::channel::<(usize, Result<ImageOutput, ImageError>)>();
    let mut done: Vec<Option<Result<ImageRecord, Failure>>> = (0..inputs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        s.spawn(|| {
            pool.install(|| {
                inputs
                    .par_iter()
                    .enumerate()
                    .for_each_with(tx, |tx, (i, p)| {
                        let _ = tx.send((i, work(p)));
                    })
            })
        });
        for (i, result) in rx {
            let image = inputs[i].display().to_string();
            done[i] = Some(match result {
                Ok(o) => {
                    let mut written = Ok(());
                    for (name, bytes) in &o.files {
                        written = io::write_file(&out.join(name), bytes);
                        if written.is_err() {
                            break;
                        }
                    }
                    match written {
                        Ok(()) => Ok(o.record),
                        Err(e) => Err(Failure { image, error: e.to_string() }),
                    }
                }
                Err(e) => Err(Failure { image, error: e.to_string() }),
            });
        }
    });
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for r in done.into_iter().flatten() {
        match r {
            Ok(rec) => images.push(rec),
            Err(f) => failures.push(f),
        }
    }
    let manifest = RunManifest {
        tool: "matseg",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        input: input.display().to_string(),
        output: out.display().to_string(),
        config: cfg.snapshot(),
        images,
        failures,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("plain data serializes");
    bytes.push(b'\n');
    io::write_file(&out.join(MANIFEST_FILE), &bytes)?;
    Ok(manifest)
}

/// Region statistics for existing label maps.
pub fn stats_for_labels(labels_path: &Path, image: Option<&Path>, cfg: &RunConfig) -> Result<ImageOutput, ImageError> {
    let started = Instant::now();
    let labels = io::load_labels(labels_path)?;
    let img = match image {
        Some(p) => {
            let img = load_input(p, cfg)?;
            if (img.width(), img.height()) != (labels.width(), labels.height()) {
                return Err(ImageError::Other(format!(
                    "{} is {}x{} but the label map is {}x{}",
                    p.display(),
                    img.width(),
                    img.height(),
                    labels.width(),
                    labels.height()
                )));
            }
            img
        }
        None => {
            let blank = Micrograph::gray(labels.width(), labels.height(), vec![0; labels.len()]).map_err(other)?;
            match cfg.scale {
                Some(s) => blank.with_scale(s).map_err(other)?,
                None => blank,
            }
        }
    };
    let mut stats = compute_region_stats(&labels, &img, img.scale()).map_err(other)?;
    if !cfg.screen.is_empty() {
        for s in &mut stats {
            s.group = Some(classify(s, &cfg.screen).to_string());
        }
    }
    let stem = image_stem(labels_path);
    let files = vec![(format!("{stem}.stats.csv"), stats_csv(&stats))];
    let record = ImageRecord {
        image: labels_path.display().to_string(),
        stem,
        outputs: files.iter().map(|(n, _)| n.clone()).collect(),
        masks: 0,
        prompts: 0,
        timings: Timings { total_ms: ms(started.elapsed()), ..Timings::default() },
        summary: summarize(&stats, labels.len()).into(),
    };
    Ok(ImageOutput { files, record })
}
