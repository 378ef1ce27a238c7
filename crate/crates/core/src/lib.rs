//! matseg-core: training-free microstructure segmentation, minus the IO.
//!
//! Everything in this crate is a pure function over in-memory rasters:
//!
//! - [`raster`]: micrographs, binary masks, label maps and crop boxes
//! - [`classical`]: Otsu, adaptive threshold, Canny, watershed, connected
//!   components, morphology and distance transforms
//! - [`prompt`]: structure-aware prompt points (region centroids fused with
//!   an adaptive grid and a denser border band)
//! - [`backend`]: the promptable-segmentation seam plus an oracle backend
//!   that answers from a known label map
//! - [`pipeline`]: crop pyramid, per-crop prediction, two-stage mask NMS
//!   and label-map merging
//! - [`postproc`]: grain boundaries, phase masks, region screening and
//!   per-region statistics
//! - [`metrics`]: RI/ARI, IoU and tolerance-based boundary F1
//!
//! File formats, the ONNX backend and the command line live in the `matseg`
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backend;
pub mod classical;
pub mod metrics;
pub mod pipeline;
pub mod postproc;
pub mod prompt;
pub mod raster;

mod math;

pub use backend::{BackendError, Capabilities, Embedding, OracleBackend, PredictOutcome, SegmentBackend};
pub use pipeline::{segment_micrograph, PipelineConfig, PipelineError, SegmentationResult};
pub use prompt::{PromptConfig, PromptOrigin, PromptPoint, SegmentationMode};
pub use raster::{BinaryMask, CropBox, LabelMap, MaskOrigin, Micrograph, RasterError, ScoredMask};
