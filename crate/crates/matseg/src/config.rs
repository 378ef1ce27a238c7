//! Run configuration: one JSON document with flat dotted keys.
//!
//! Nested objects are accepted and flattened, so `{"prompt": {"grid": "native"}}`
//! and `{"prompt.grid": "native"}` mean the same thing. Unknown keys are
//! errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use matseg_core::classical::{EdgeParams, Polarity, SmallRegionCutoff};
use matseg_core::metrics::{EvalKind, DEFAULT_TOLERANCE};
use matseg_core::postproc::{Bounds, ScreenRule};
use matseg_core::prompt::GridMode;
use matseg_core::{PipelineConfig, PipelineError, SegmentationMode};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config key `{key}`: {reason}")]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    fn new(key: &str, reason: impl Into<String>) -> Self {
        Self { key: key.to_string(), reason: reason.into() }
    }
}

impl From<PipelineError> for ConfigError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config { key, reason } => ConfigError::new(key, reason),
            PipelineError::Prompt(p) => {
                use matseg_core::prompt::PromptConfigError as P;
                let key = match &p {
                    P::GridBounds => "prompt.grid_min_side",
                    P::Alpha => "prompt.grid_alpha",
                    P::SpacingFactor => "prompt.edge_spacing_factor",
                    P::Separation => "prompt.min_separation",
                    P::Presegment(matseg_core::classical::ClassicalError::Fraction(_)) => {
                        "presegment.small_region_fraction"
                    }
                    P::Presegment(_) => "presegment.canny",
                };
                ConfigError::new(key, p.to_string())
            }
            other => ConfigError::new("config", other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Otsu,
    Adaptive,
    Canny,
    Watershed,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 4] = [Self::Otsu, Self::Adaptive, Self::Canny, Self::Watershed];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Otsu => "otsu",
            Self::Adaptive => "adaptive",
            Self::Canny => "canny",
            Self::Watershed => "watershed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Neural { model_dir: Option<PathBuf> },
    /// Truth label maps named like the inputs.
    Oracle { truth_dir: Option<PathBuf> },
    Baseline(BaselineMethod),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    /// Adaptive threshold window (odd).
    pub window: u32,
    pub offset: i32,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self { window: 31, offset: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocConfig {
    /// Close, thin and prune the boundary raster.
    pub enabled: bool,
    pub close_radius: u32,
    pub prune_len: u32,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self { enabled: false, close_radius: 1, prune_len: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub backend: BackendChoice,
    pub baseline: BaselineParams,
    pub kind: EvalKind,
    /// Micrometres per pixel.
    pub scale: Option<f64>,
    pub tolerance: u32,
    pub postproc: PostprocConfig,
    pub screen: Vec<ScreenRule>,
    /// Screening groups forming the phase mask; empty means every mask.
    pub phase_groups: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            backend: BackendChoice::Neural { model_dir: None },
            baseline: BaselineParams::default(),
            kind: EvalKind::Grain,
            scale: None,
            tolerance: DEFAULT_TOLERANCE,
            postproc: PostprocConfig::default(),
            screen: Vec::new(),
            phase_groups: Vec::new(),
        }
    }
}

fn flatten(prefix: &str, value: Value, out: &mut BTreeMap<String, Value>) -> Result<(), ConfigError> {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten(&key, v, out)?;
            }
            Ok(())
        }
        v => {
            if out.insert(prefix.to_string(), v).is_some() {
                return Err(ConfigError::new(prefix, "given twice"));
            }
            Ok(())
        }
    }
}

struct Keys(BTreeMap<String, Value>);

impl Keys {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.0.remove(key).filter(|v| !v.is_null())
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.take(key)
            .map(|v| v.as_f64().ok_or_else(|| ConfigError::new(key, "expected a number")))
            .transpose()
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.take(key)
            .map(|v| v.as_u64().ok_or_else(|| ConfigError::new(key, "expected a non-negative integer")))
            .transpose()
    }

    fn u32(&mut self, key: &str) -> Result<Option<u32>, ConfigError> {
        self.u64(key)?
            .map(|v| u32::try_from(v).map_err(|_| ConfigError::new(key, "too large")))
            .transpose()
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.take(key)
            .map(|v| v.as_bool().ok_or_else(|| ConfigError::new(key, "expected true or false")))
            .transpose()
    }

    fn string(&mut self, key: &str) -> Result<Option<String>, ConfigError> {
        self.take(key)
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| ConfigError::new(key, "expected a string")))
            .transpose()
    }

    fn choice<T>(&mut self, key: &str, options: &[(&str, T)]) -> Result<Option<T>, ConfigError>
    where
        T: Copy,
    {
        let Some(s) = self.string(key)? else { return Ok(None) };
        options
            .iter()
            .find(|(name, _)| *name == s)
            .map(|(_, v)| Some(*v))
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                ConfigError::new(key, format!("`{s}` is not one of {}", names.join(", ")))
            })
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn parse_bounds(key: &str, v: Option<&Value>) -> Result<Bounds, ConfigError> {
    let Some(v) = v.filter(|v| !v.is_null()) else { return Ok(Bounds::default()) };
    let bad = || ConfigError::new(key, "expected [min, max] with numbers or nulls");
    let arr = v.as_array().filter(|a| a.len() == 2).ok_or_else(bad)?;
    let end = |e: &Value| if e.is_null() { Ok(None) } else { e.as_f64().map(Some).ok_or_else(bad) };
    Ok(Bounds { min: end(&arr[0])?, max: end(&arr[1])? })
}

fn parse_rules(v: Value) -> Result<Vec<ScreenRule>, ConfigError> {
    let key = "screen.rules";
    let arr = v.as_array().ok_or_else(|| ConfigError::new(key, "expected an array of rules"))?;
    let mut rules = Vec::with_capacity(arr.len());
    for (i, r) in arr.iter().enumerate() {
        let obj = r.as_object().ok_or_else(|| ConfigError::new(key, format!("rule {i} is not an object")))?;
        for k in obj.keys() {
            if !matches!(k.as_str(), "group" | "mean_intensity" | "area_px" | "circularity" | "aspect_ratio") {
                return Err(ConfigError::new(&format!("{key}[{i}].{k}"), "unknown key"));
            }
        }
        let group = obj
            .get("group")
            .and_then(Value::as_str)
            .ok_or_else(|| ConfigError::new(&format!("{key}[{i}].group"), "expected a string"))?;
        let mut rule = ScreenRule::new(group);
        let sub = |name: &str| format!("{key}[{i}].{name}");
        rule.mean_intensity = parse_bounds(&sub("mean_intensity"), obj.get("mean_intensity"))?;
        rule.area_px = parse_bounds(&sub("area_px"), obj.get("area_px"))?;
        rule.circularity = parse_bounds(&sub("circularity"), obj.get("circularity"))?;
        rule.aspect_ratio = parse_bounds(&sub("aspect_ratio"), obj.get("aspect_ratio"))?;
        rules.push(rule);
    }
    Ok(rules)
}

const MODES: [(&str, SegmentationMode); 2] =
    [("polycrystalline", SegmentationMode::Polycrystalline), ("multiphase", SegmentationMode::Multiphase)];
const GRIDS: [(&str, GridMode); 2] = [("adaptive", GridMode::Adaptive), ("native", GridMode::Native)];
const POLARITIES: [(&str, Polarity); 2] = [("bright", Polarity::Bright), ("dark", Polarity::Dark)];
const KINDS: [(&str, EvalKind); 2] = [("grain", EvalKind::Grain), ("phase", EvalKind::Phase)];

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::new("config", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        if !value.is_object() {
            return Err(ConfigError::new("config", "expected a JSON object"));
        }
        let mut flat = BTreeMap::new();
        flatten("", value, &mut flat)?;
        // screen.rules is an array of objects, not a subtree
        let rules = flat.remove("screen.rules");
        let mut k = Keys(flat);
        let mut cfg = RunConfig::default();

        set(&mut cfg.kind, k.choice("kind", &KINDS)?);
        cfg.scale = k.f64("scale")?;
        if let Some(s) = cfg.scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(ConfigError::new("scale", "must be positive"));
            }
        }
        set(&mut cfg.tolerance, k.u32("tolerance")?);

        let p = &mut cfg.pipeline;
        set(&mut p.crop_layers, k.u32("crop_layers")?);
        set(&mut p.crop_overlap, k.f64("crop_overlap")?);
        set(&mut p.score_min, k.f64("score_min")?.map(|v| v as f32));
        set(&mut p.nms_iou, k.f64("nms_iou")?);
        set(&mut p.min_mask_area, k.u64("min_mask_area")?.map(|v| v as usize));

        let pr = &mut p.prompt;
        pr.mode = k.choice("prompt.mode", &MODES)?.unwrap_or(match cfg.kind {
            EvalKind::Grain => SegmentationMode::Polycrystalline,
            EvalKind::Phase => SegmentationMode::Multiphase,
        });
        set(&mut pr.grid, k.choice("prompt.grid", &GRIDS)?);
        if pr.grid == GridMode::Native {
            // stock generator defaults unless overridden below
            let native = matseg_core::PromptConfig::native();
            pr.edge_margin = native.edge_margin;
            pr.centroids = native.centroids;
            pr.min_separation = native.min_separation;
        }
        set(&mut pr.grid_alpha, k.f64("prompt.grid_alpha")?);
        set(&mut pr.grid_min_side, k.u32("prompt.grid_min_side")?);
        set(&mut pr.grid_max_side, k.u32("prompt.grid_max_side")?);
        set(&mut pr.edge_margin, k.u32("prompt.edge_margin")?);
        set(&mut pr.edge_spacing_factor, k.f64("prompt.edge_spacing_factor")?);
        set(&mut pr.min_separation, k.f64("prompt.min_separation")?);
        set(&mut pr.centroids, k.bool("prompt.centroids")?);

        let ps = &mut pr.presegment;
        let mut edges = EdgeParams::default();
        set(&mut edges.sigma, k.f64("presegment.canny.sigma")?);
        set(&mut edges.low, k.f64("presegment.canny.low")?.map(|v| v as f32));
        set(&mut edges.high, k.f64("presegment.canny.high")?.map(|v| v as f32));
        ps.edges = edges;
        set(&mut ps.edge_dilation, k.u32("presegment.edge_dilation")?);
        set(&mut ps.polarity, k.choice("presegment.polarity", &POLARITIES)?);
        let fraction = k.f64("presegment.small_region_fraction")?;
        let min_area = k.u64("presegment.small_region_min_area")?;
        ps.small_regions = match (fraction, min_area) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::new(
                    "presegment.small_region_min_area",
                    "conflicts with presegment.small_region_fraction",
                ))
            }
            (Some(f), None) => SmallRegionCutoff::Relative(f),
            (None, Some(a)) => SmallRegionCutoff::Absolute(a as usize),
            (None, None) => SmallRegionCutoff::default(),
        };

        let model_dir = k.string("backend.model_dir")?.map(PathBuf::from);
        let truth_dir = k.string("backend.truth_dir")?.map(PathBuf::from);
        let device = k.string("backend.device")?;
        if let Some(d) = &device {
            if d != "cpu" && d != "auto" {
                return Err(ConfigError::new("backend.device", format!("`{d}` is not available; use cpu or auto")));
            }
        }
        let method = k.string("backend.method")?;
        let backend = k.string("backend")?.unwrap_or_else(|| "neural".into());
        cfg.backend = match backend.as_str() {
            "neural" => BackendChoice::Neural { model_dir },
            "oracle" => BackendChoice::Oracle { truth_dir },
            "baseline" => {
                let m = method.ok_or_else(|| ConfigError::new("backend.method", "required for the baseline backend"))?;
                BackendChoice::Baseline(
                    BaselineMethod::parse(&m)
                        .ok_or_else(|| ConfigError::new("backend.method", format!("unknown method `{m}`")))?,
                )
            }
            other => return Err(ConfigError::new("backend", format!("`{other}` is not one of neural, oracle, baseline"))),
        };

        set(&mut cfg.baseline.window, k.u32("baseline.window")?);
        set(&mut cfg.baseline.offset, k.take("baseline.offset").map(|v| {
            v.as_i64()
                .and_then(|v| i32::try_from(v).ok())
                .ok_or_else(|| ConfigError::new("baseline.offset", "expected an integer"))
        }).transpose()?);
        if cfg.baseline.window < 3 || cfg.baseline.window % 2 == 0 {
            return Err(ConfigError::new("baseline.window", "must be odd and at least 3"));
        }

        set(&mut cfg.postproc.enabled, k.bool("postproc.enabled")?);
        set(&mut cfg.postproc.close_radius, k.u32("postproc.close_radius")?);
        set(&mut cfg.postproc.prune_len, k.u32("postproc.prune_len")?);

        if let Some(r) = rules.filter(|v| !v.is_null()) {
            cfg.screen = parse_rules(r)?;
        }
        if let Some(g) = k.take("phase.groups") {
            let arr = g.as_array().ok_or_else(|| ConfigError::new("phase.groups", "expected an array of strings"))?;
            cfg.phase_groups = arr
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or_else(|| ConfigError::new("phase.groups", "expected strings")))
                .collect::<Result<_, _>>()?;
        }

        if let Some(key) = k.0.keys().next() {
            return Err(ConfigError::new(key, "unknown key"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline.validate()?;
        Ok(())
    }

    /// Every effective setting as flat dotted keys; feeding it back to
    /// [`RunConfig::from_value`] reproduces this configuration.
    pub fn snapshot(&self) -> Value {
        fn name<T: PartialEq>(opts: &[(&'static str, T)], v: T) -> Option<&'static str> {
            opts.iter().find(|(_, o)| *o == v).map(|(n, _)| *n)
        }
        let p = &self.pipeline;
        let pr = &p.prompt;
        let ps = &pr.presegment;
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("kind", json!(self.kind.as_str()));
        put("scale", json!(self.scale));
        put("tolerance", json!(self.tolerance));
        put("crop_layers", json!(p.crop_layers));
        put("crop_overlap", json!(p.crop_overlap));
        put("score_min", json!(p.score_min as f64));
        put("nms_iou", json!(p.nms_iou));
        put("min_mask_area", json!(p.min_mask_area));
        put("prompt.mode", json!(name(&MODES, pr.mode)));
        put("prompt.grid", json!(name(&GRIDS, pr.grid)));
        put("prompt.grid_alpha", json!(pr.grid_alpha));
        put("prompt.grid_min_side", json!(pr.grid_min_side));
        put("prompt.grid_max_side", json!(pr.grid_max_side));
        put("prompt.edge_margin", json!(pr.edge_margin));
        put("prompt.edge_spacing_factor", json!(pr.edge_spacing_factor));
        put("prompt.min_separation", json!(pr.min_separation));
        put("prompt.centroids", json!(pr.centroids));
        put("presegment.canny.sigma", json!(ps.edges.sigma));
        put("presegment.canny.low", json!(ps.edges.low as f64));
        put("presegment.canny.high", json!(ps.edges.high as f64));
        put("presegment.edge_dilation", json!(ps.edge_dilation));
        put("presegment.polarity", json!(name(&POLARITIES, ps.polarity)));
        match ps.small_regions {
            SmallRegionCutoff::Relative(f) => put("presegment.small_region_fraction", json!(f)),
            SmallRegionCutoff::Absolute(a) => put("presegment.small_region_min_area", json!(a)),
        }
        match &self.backend {
            BackendChoice::Neural { model_dir } => {
                put("backend", json!("neural"));
                put("backend.model_dir", json!(model_dir.as_ref().map(|p| p.display().to_string())));
            }
            BackendChoice::Oracle { truth_dir } => {
                put("backend", json!("oracle"));
                put("backend.truth_dir", json!(truth_dir.as_ref().map(|p| p.display().to_string())));
            }
            BackendChoice::Baseline(method) => {
                put("backend", json!("baseline"));
                put("backend.method", json!(method.as_str()));
            }
        }
        put("baseline.window", json!(self.baseline.window));
        put("baseline.offset", json!(self.baseline.offset));
        put("postproc.enabled", json!(self.postproc.enabled));
        put("postproc.close_radius", json!(self.postproc.close_radius));
        put("postproc.prune_len", json!(self.postproc.prune_len));
        let bounds = |b: &Bounds| json!([b.min, b.max]);
        let rules: Vec<Value> = self
            .screen
            .iter()
            .map(|r| {
                json!({
                    "group": r.group,
                    "mean_intensity": bounds(&r.mean_intensity),
                    "area_px": bounds(&r.area_px),
                    "circularity": bounds(&r.circularity),
                    "aspect_ratio": bounds(&r.aspect_ratio),
                })
            })
            .collect();
        put("screen.rules", Value::Array(rules));
        put("phase.groups", json!(self.phase_groups));
        Value::Object(m)
    }
}
