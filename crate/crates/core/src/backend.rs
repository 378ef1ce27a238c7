//! The promptable-segmentation seam.
//!
//! A backend encodes an image (or a crop of it) once and then answers any
//! number of single-point prompts with up to three scored candidate masks.
//! [`OracleBackend`] answers from a known label map, which lets the whole
//! pipeline run without model weights.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::raster::{BinaryMask, CropBox, LabelMap, MaskOrigin, Micrograph, ScoredMask};

pub mod preprocess;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("prompt ({x}, {y}) lies outside the {width}x{height} embedded frame")]
    OutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("image side {side} exceeds the backend limit {max}")]
    ImageTooLarge { side: u32, max: u32 },
    #[error("crop does not fit the image: {0}")]
    Crop(String),
    #[error("model signature mismatch: {0}")]
    Signature(String),
    #[error("model failure: {0}")]
    Model(String),
    #[error("backend returned an invalid prediction: {0}")]
    InvalidOutcome(String),
}

/// What a backend can accept and what it produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    /// Largest accepted source side, if the backend has a limit.
    pub max_input_side: Option<u32>,
    /// Embedding channels, height and width.
    pub embedding_dims: (u32, u32, u32),
    /// Whether one handle may serve several workers at once.
    pub reentrant: bool,
}

/// Anything a backend hands back from `encode`.
pub trait Embedding {
    /// `(C, H, W)`.
    fn dims(&self) -> (u32, u32, u32);
    /// The crop of the source image this embedding covers; prompts and
    /// masks are expressed relative to its origin.
    fn frame(&self) -> CropBox;
}

/// Dense `C x H x W` image embedding plus the geometry needed to map
/// prompts into the model frame and masks back out.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    channels: u32,
    height: u32,
    width: u32,
    values: Vec<f32>,
    pub frame: CropBox,
    /// Model-frame pixels per source pixel, per axis.
    pub scale: (f64, f64),
    /// Side of the square model input.
    pub input_side: u32,
}

impl ImageEmbedding {
    pub fn new(
        dims: (u32, u32, u32),
        values: Vec<f32>,
        frame: CropBox,
        scale: (f64, f64),
        input_side: u32,
    ) -> Result<Self, BackendError> {
        let (c, h, w) = dims;
        let expected = c as usize * h as usize * w as usize;
        if values.len() != expected {
            return Err(BackendError::Model(alloc::format!(
                "embedding holds {} values, expected {c}x{h}x{w}",
                values.len()
            )));
        }
        Ok(Self {
            channels: c,
            height: h,
            width: w,
            values,
            frame,
            scale,
            input_side,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

impl Embedding for ImageEmbedding {
    fn dims(&self) -> (u32, u32, u32) {
        (self.channels, self.height, self.width)
    }

    fn frame(&self) -> CropBox {
        self.frame
    }
}

/// Up to three candidates for one prompt, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutcome {
    candidates: Vec<ScoredMask>,
}

impl PredictOutcome {
    pub const MAX_CANDIDATES: usize = 3;

    /// Sorts by descending score (stable) and checks the 1..=3 bound and
    /// that all candidates share one frame.
    pub fn new(mut candidates: Vec<ScoredMask>) -> Result<Self, BackendError> {
        if candidates.is_empty() || candidates.len() > Self::MAX_CANDIDATES {
            return Err(BackendError::InvalidOutcome(alloc::format!(
                "{} candidates (expected 1..=3)",
                candidates.len()
            )));
        }
        if candidates.windows(2).any(|p| !p[0].mask.same_frame(&p[1].mask)) {
            return Err(BackendError::InvalidOutcome("candidate frames differ".into()));
        }
        candidates.sort_by(|a, b| b.score().total_cmp(&a.score()));
        Ok(Self { candidates })
    }

    pub fn candidates(&self) -> &[ScoredMask] {
        &self.candidates
    }

    pub fn into_best(self) -> ScoredMask {
        self.candidates.into_iter().next().expect("outcome is never empty")
    }

    pub fn best(&self) -> &ScoredMask {
        &self.candidates[0]
    }
}

pub trait SegmentBackend {
    type Embedding: Embedding;

    fn capabilities(&self) -> Capabilities;

    /// Encodes the part of `img` inside `crop`.
    fn encode_crop(&self, img: &Micrograph, crop: &CropBox) -> Result<Self::Embedding, BackendError>;

    fn encode(&self, img: &Micrograph) -> Result<Self::Embedding, BackendError> {
        self.encode_crop(img, &img.full_frame())
    }

    /// Candidate masks for a prompt at `(x, y)` relative to the embedding
    /// frame. Masks are in the embedding frame's pixel grid.
    fn predict(&self, emb: &Self::Embedding, x: u32, y: u32) -> Result<PredictOutcome, BackendError>;
}

pub(crate) fn check_point(frame: &CropBox, x: u32, y: u32) -> Result<(), BackendError> {
    if x >= frame.width() || y >= frame.height() {
        return Err(BackendError::OutOfBounds {
            x,
            y,
            width: frame.width(),
            height: frame.height(),
        });
    }
    Ok(())
}

/// Answers every prompt with the ground-truth region under it.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    truth: LabelMap,
}

impl OracleBackend {
    pub fn new(truth: LabelMap) -> Self {
        Self { truth }
    }

    pub fn truth(&self) -> &LabelMap {
        &self.truth
    }
}

/// The truth labels cropped to the encoded frame, with member pixels
/// grouped by label.
#[derive(Debug, Clone)]
pub struct OracleEmbedding {
    labels: LabelMap,
    frame: CropBox,
    members: BTreeMap<u32, Vec<usize>>,
}

impl OracleEmbedding {
    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }
}

impl Embedding for OracleEmbedding {
    fn dims(&self) -> (u32, u32, u32) {
        (1, self.labels.height(), self.labels.width())
    }

    fn frame(&self) -> CropBox {
        self.frame
    }
}

impl SegmentBackend for OracleBackend {
    type Embedding = OracleEmbedding;

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_input_side: None,
            embedding_dims: (1, self.truth.height(), self.truth.width()),
            reentrant: true,
        }
    }

    fn encode_crop(&self, img: &Micrograph, crop: &CropBox) -> Result<OracleEmbedding, BackendError> {
        if img.width() != self.truth.width() || img.height() != self.truth.height() {
            return Err(BackendError::Crop(alloc::format!(
                "image is {}x{} but the truth map is {}x{}",
                img.width(),
                img.height(),
                self.truth.width(),
                self.truth.height()
            )));
        }
        if crop.x1 > img.width() || crop.y1 > img.height() || crop.x0 >= crop.x1 || crop.y0 >= crop.y1 {
            return Err(BackendError::Crop(alloc::format!("{crop:?}")));
        }
        let labels = self.truth.crop(crop);
        let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.labels().iter().enumerate() {
            if l != 0 {
                members.entry(l).or_default().push(i);
            }
        }
        Ok(OracleEmbedding {
            labels,
            frame: *crop,
            members,
        })
    }

    fn predict(&self, emb: &OracleEmbedding, x: u32, y: u32) -> Result<PredictOutcome, BackendError> {
        check_point(&emb.frame, x, y)?;
        let (w, h) = (emb.labels.width(), emb.labels.height());
        let label = emb.labels.get(x, y);
        let mut mask = BinaryMask::new(w, h);
        let score = if label == 0 {
            0.0
        } else {
            for &i in &emb.members[&label] {
                mask.insert_index(i);
            }
            1.0
        };
        let origin = MaskOrigin {
            crop: 0,
            prompt: Some((x + emb.frame.x0, y + emb.frame.y0)),
        };
        let candidate = ScoredMask::new(mask, score, origin).map_err(|e| BackendError::InvalidOutcome(alloc::format!("{e}")))?;
        PredictOutcome::new(alloc::vec![candidate])
    }
}
