//! Promptable segmentation backed by exported ONNX encoder/decoder graphs.
//!
//! A model directory holds `encoder.onnx`, `decoder.onnx` and optionally
//! `metadata.json`. The encoder maps a `1x3xSxS` normalized image to a
//! `1xCxHxW` embedding. The decoder takes, in order, the embedding, point
//! coordinates `1xNx2`, point labels `1xN`, a mask hint `1x1x4Hx4W`, a
//! has-mask flag `1` and the original size `2`, and returns mask logits
//! `1xKxhxw` plus scores `1xK`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use matseg_core::backend::preprocess::{logits_to_mask, prepare_input, Normalization, ResizeGeometry};
use matseg_core::backend::ImageEmbedding;
use matseg_core::{
    BackendError, BinaryMask, Capabilities, CropBox, Embedding, MaskOrigin, Micrograph, PredictOutcome, ScoredMask,
    SegmentBackend,
};
use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;
use tract_onnx::tract_hir::infer::Factoid;

pub const ENCODER_FILE: &str = "encoder.onnx";
pub const DECODER_FILE: &str = "decoder.onnx";
pub const METADATA_FILE: &str = "metadata.json";
pub const MODEL_DIR_ENV: &str = "MATSEG_MODEL_DIR";

const DECODER_INPUTS: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("model file not found: {}", .0.display())]
    Missing(PathBuf),
    #[error("{}: signature mismatch: {reason}", path.display())]
    Signature { path: PathBuf, reason: String },
    #[error("{}: {reason}", path.display())]
    Metadata { path: PathBuf, reason: String },
    #[error("{}: runtime initialization failed: {reason}", path.display())]
    Runtime { path: PathBuf, reason: String },
}

impl From<LoadError> for BackendError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Signature { .. } => BackendError::Signature(e.to_string()),
            _ => BackendError::Model(e.to_string()),
        }
    }
}

/// Contents of `metadata.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default)]
    pub variant: Option<String>,
    pub input_side: u32,
    /// `[C, H, W]`.
    pub embedding_dims: [u32; 3],
    pub pixel_mean: [f32; 3],
    pub pixel_std: [f32; 3],
}

/// `--model-dir`, then the config value, then `MATSEG_MODEL_DIR`.
pub fn resolve_model_dir(flag: Option<&Path>, config: Option<&Path>) -> Option<PathBuf> {
    flag.or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(MODEL_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

type Plan = Arc<TypedRunnableModel>;

pub struct NeuralBackend {
    encoder: Plan,
    decoder: Plan,
    input_side: u32,
    dims: (u32, u32, u32),
    norm: Normalization,
    variant: Option<String>,
}

impl std::fmt::Debug for NeuralBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeuralBackend")
            .field("input_side", &self.input_side)
            .field("dims", &self.dims)
            .field("variant", &self.variant)
            .finish()
    }
}

fn runtime(path: &Path) -> impl Fn(anyhow::Error) -> LoadError + '_ {
    move |e| LoadError::Runtime { path: path.to_path_buf(), reason: format!("{e:#}") }
}

fn signature(path: &Path, reason: impl Into<String>) -> LoadError {
    LoadError::Signature { path: path.to_path_buf(), reason: reason.into() }
}

fn concrete_dims(fact: &InferenceFact) -> Option<Vec<Option<i64>>> {
    let rank = fact.shape.rank().concretize()?;
    let dims: Vec<Option<i64>> = fact.shape.dims().map(|d| d.concretize().and_then(|d| d.to_i64().ok())).collect();
    (dims.len() as i64 == rank).then_some(dims)
}

fn flat_f32(t: &Tensor) -> Result<Vec<f32>, BackendError> {
    Ok(t.to_plain_array_view::<f32>().map_err(model_err)?.iter().copied().collect())
}

fn input_rank(model: &InferenceModel, ix: usize) -> Option<usize> {
    model.input_fact(ix).ok().and_then(|f| f.shape.rank().concretize()).map(|r| r as usize)
}

fn load_graph(path: &Path) -> Result<InferenceModel, LoadError> {
    if !path.is_file() {
        return Err(LoadError::Missing(path.to_path_buf()));
    }
    onnx().model_for_path(path).map_err(runtime(path))
}

fn optimize(model: InferenceModel, path: &Path) -> Result<Plan, LoadError> {
    let typed = model.into_typed().map_err(runtime(path))?;
    // Decoders whose output size depends on input values cannot always be
    // fully optimized; the decluttered graph runs the same numerics.
    let typed = match typed.clone().into_optimized() {
        Ok(opt) => opt,
        Err(_) => typed.into_decluttered().map_err(runtime(path))?,
    };
    typed.into_runnable().map_err(runtime(path))
}

impl NeuralBackend {
    /// Loads the graphs from `dir`.
    pub fn load(dir: &Path) -> Result<Self, LoadError> {
        Self::load_files(&dir.join(ENCODER_FILE), &dir.join(DECODER_FILE), Some(&dir.join(METADATA_FILE)))
    }

    /// Loads explicit files. A missing metadata file is allowed; the
    /// geometry is then read from the encoder graph and normalization falls
    /// back to the standard constants.
    pub fn load_files(encoder: &Path, decoder: &Path, metadata: Option<&Path>) -> Result<Self, LoadError> {
        let meta = match metadata {
            Some(p) if p.is_file() => {
                let bytes = std::fs::read(p).map_err(|e| LoadError::Metadata { path: p.to_path_buf(), reason: e.to_string() })?;
                Some(
                    serde_json::from_slice::<ModelMetadata>(&bytes)
                        .map_err(|e| LoadError::Metadata { path: p.to_path_buf(), reason: e.to_string() })?,
                )
            }
            _ => None,
        };
        if !decoder.is_file() {
            return Err(LoadError::Missing(decoder.to_path_buf()));
        }
        let enc = load_graph(encoder)?;
        let dec = load_graph(decoder)?;

        let enc_inputs = enc.input_outlets().map_err(runtime(encoder))?.len();
        if enc_inputs != 1 {
            return Err(signature(encoder, format!("encoder must take 1 input, graph has {enc_inputs}")));
        }
        if enc.output_outlets().map_err(runtime(encoder))?.len() != 1 {
            return Err(signature(encoder, "encoder must produce exactly 1 output"));
        }
        let dec_inputs = dec.input_outlets().map_err(runtime(decoder))?.len();
        if dec_inputs != DECODER_INPUTS {
            return Err(signature(decoder, format!("decoder must take {DECODER_INPUTS} inputs, graph has {dec_inputs}")));
        }
        if dec.output_outlets().map_err(runtime(decoder))?.len() < 2 {
            return Err(signature(decoder, "decoder must produce mask logits and scores"));
        }

        let declared = enc.input_fact(0).ok().and_then(concrete_dims);
        if let Some(d) = &declared {
            if d.len() != 4 || d[1].is_some_and(|c| c != 3) {
                return Err(signature(encoder, format!("encoder input must be 1x3xSxS, graph declares {d:?}")));
            }
        }
        let graph_side = declared.as_ref().and_then(|d| match (d[2], d[3]) {
            (Some(h), Some(w)) if h == w => Some(h as u32),
            _ => None,
        });
        let side = match (&meta, graph_side) {
            (Some(m), Some(g)) if m.input_side != g => {
                return Err(LoadError::Metadata {
                    path: metadata.unwrap().to_path_buf(),
                    reason: format!("input_side {} but the encoder expects {g}", m.input_side),
                })
            }
            (Some(m), _) => m.input_side,
            (None, Some(g)) => g,
            (None, None) => return Err(signature(encoder, "input side is symbolic and no metadata.json gives it")),
        };
        if side == 0 {
            return Err(signature(encoder, "input side is 0"));
        }

        let s = side as usize;
        let enc = enc
            .with_input_fact(0, f32::fact([1, 3, s, s]).into())
            .map_err(runtime(encoder))?;
        let enc_typed = enc.into_typed().map_err(runtime(encoder))?;
        let out_shape = enc_typed
            .output_fact(0)
            .ok()
            .and_then(|f| f.shape.as_concrete().map(|s| s.to_vec()))
            .ok_or_else(|| signature(encoder, "embedding shape is not concrete for the declared input side"))?;
        if out_shape.len() != 4 || out_shape[0] != 1 {
            return Err(signature(encoder, format!("embedding must be 1xCxHxW, got {out_shape:?}")));
        }
        let dims = (out_shape[1] as u32, out_shape[2] as u32, out_shape[3] as u32);
        if let Some(m) = &meta {
            let [c, h, w] = m.embedding_dims;
            if (c, h, w) != dims {
                return Err(LoadError::Metadata {
                    path: metadata.unwrap().to_path_buf(),
                    reason: format!("embedding_dims {:?} but the encoder produces {dims:?}", m.embedding_dims),
                });
            }
        }
        let encoder_plan = {
            let opt = enc_typed.into_optimized().map_err(runtime(encoder))?;
            opt.into_runnable().map_err(runtime(encoder))?
        };

        for (ix, rank) in [(0, 4), (1, 3), (2, 2), (3, 4), (4, 1), (5, 1)] {
            if let Some(r) = input_rank(&dec, ix) {
                if r != rank {
                    return Err(signature(decoder, format!("decoder input {ix} has rank {r}, expected {rank}")));
                }
            }
        }
        let (c, h, w) = (dims.0 as usize, dims.1 as usize, dims.2 as usize);
        let facts: [InferenceFact; DECODER_INPUTS] = [
            f32::fact([1, c, h, w]).into(),
            f32::fact([1, 2, 2]).into(),
            f32::fact([1, 2]).into(),
            f32::fact([1, 1, 4 * h, 4 * w]).into(),
            f32::fact([1]).into(),
            f32::fact([2]).into(),
        ];
        let mut dec = dec;
        for (ix, fact) in facts.into_iter().enumerate() {
            dec.set_input_fact(ix, fact).map_err(|e| signature(decoder, format!("input {ix}: {e}")))?;
        }
        let decoder_plan = optimize(dec, decoder)?;

        let norm = meta
            .as_ref()
            .map(|m| Normalization { mean: m.pixel_mean, std: m.pixel_std })
            .unwrap_or_default();
        Ok(Self {
            encoder: encoder_plan,
            decoder: decoder_plan,
            input_side: side,
            dims,
            norm,
            variant: meta.and_then(|m| m.variant),
        })
    }

    pub fn input_side(&self) -> u32 {
        self.input_side
    }

    pub fn variant(&self) -> Option<&str> {
        self.variant.as_deref()
    }
}

fn model_err(e: anyhow::Error) -> BackendError {
    BackendError::Model(format!("{e:#}"))
}

fn tensor(shape: &[usize], data: Vec<f32>) -> Result<TValue, BackendError> {
    Ok(Tensor::from_shape(shape, &data).map_err(model_err)?.into())
}

impl SegmentBackend for NeuralBackend {
    type Embedding = ImageEmbedding;

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_input_side: None,
            embedding_dims: self.dims,
            reentrant: true,
        }
    }

    fn encode_crop(&self, img: &Micrograph, crop: &CropBox) -> Result<ImageEmbedding, BackendError> {
        if crop.x1 > img.width() || crop.y1 > img.height() || crop.x0 >= crop.x1 || crop.y0 >= crop.y1 {
            return Err(BackendError::Crop(format!("{crop:?}")));
        }
        let part = img.crop(crop);
        let geom = ResizeGeometry::new(part.width(), part.height(), self.input_side);
        let s = self.input_side as usize;
        let input = tensor(&[1, 3, s, s], prepare_input(&part, &geom, &self.norm))?;
        let out = self.encoder.run(tvec!(input)).map_err(model_err)?;
        let values = flat_f32(&out[0])?;
        ImageEmbedding::new(self.dims, values, *crop, geom.scale(), self.input_side)
    }

    fn predict(&self, emb: &ImageEmbedding, x: u32, y: u32) -> Result<PredictOutcome, BackendError> {
        let frame = emb.frame();
        if x >= frame.width() || y >= frame.height() {
            return Err(BackendError::OutOfBounds { x, y, width: frame.width(), height: frame.height() });
        }
        let geom = ResizeGeometry::new(frame.width(), frame.height(), emb.input_side);
        let (mx, my) = geom.to_model_coords(x, y);
        let (c, h, w) = emb.dims();
        let (c, h, w) = (c as usize, h as usize, w as usize);
        let inputs = tvec!(
            tensor(&[1, c, h, w], emb.values().to_vec())?,
            // one foreground point plus the padding point the decoder expects
            tensor(&[1, 2, 2], vec![mx, my, 0.0, 0.0])?,
            tensor(&[1, 2], vec![1.0, -1.0])?,
            tensor(&[1, 1, 4 * h, 4 * w], vec![0.0; 16 * h * w])?,
            tensor(&[1], vec![0.0])?,
            tensor(&[2], vec![frame.height() as f32, frame.width() as f32])?,
        );
        let out = self.decoder.run(inputs).map_err(model_err)?;
        let logits = out
            .iter()
            .find(|t| t.rank() == 4)
            .ok_or_else(|| BackendError::Signature("decoder produced no 4-d mask logits".into()))?;
        let scores = out
            .iter()
            .find(|t| t.rank() == 2)
            .ok_or_else(|| BackendError::Signature("decoder produced no 2-d scores".into()))?;
        let shape = logits.shape();
        let (k, lh, lw) = (shape[1], shape[2], shape[3]);
        let logits = flat_f32(logits)?;
        let scores = flat_f32(scores)?;
        if k == 0 || scores.len() < k {
            return Err(BackendError::InvalidOutcome(format!("{k} masks but {} scores", scores.len())));
        }
        let plane = lh * lw;
        let origin = MaskOrigin { crop: 0, prompt: Some((x + frame.x0, y + frame.y0)) };
        let mut candidates = Vec::with_capacity(k.min(PredictOutcome::MAX_CANDIDATES));
        for i in 0..k.min(PredictOutcome::MAX_CANDIDATES) {
            let l = &logits[i * plane..(i + 1) * plane];
            let mask = if lw as u32 == frame.width() && lh as u32 == frame.height() {
                // already in the source frame
                let bits: Vec<bool> = l.iter().map(|&v| v > 0.0).collect();
                BinaryMask::from_bools(frame.width(), frame.height(), &bits).map_err(|e| BackendError::InvalidOutcome(e.to_string()))?
            } else {
                logits_to_mask(l, lw as u32, lh as u32, &geom)
            };
            let score = if scores[i].is_nan() { 0.0 } else { scores[i].clamp(0.0, 1.0) };
            candidates.push(ScoredMask::new(mask, score, origin).map_err(|e| BackendError::InvalidOutcome(e.to_string()))?);
        }
        PredictOutcome::new(candidates)
    }
}
