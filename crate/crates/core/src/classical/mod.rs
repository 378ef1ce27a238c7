//! Rule-based segmentation: the pre-segmentation stage in front of the
//! promptable model and the conventional baselines it is compared against.

mod canny;
mod components;
mod distance;
mod filter;
mod morphology;
mod otsu;
mod threshold;
mod watershed;

pub use canny::{canny, EdgeParams};
pub use components::{connected_components, remove_small_regions, Connectivity, Region, SmallRegionCutoff};
pub use distance::{squared_distance_transform, UNREACHABLE};
pub use filter::{gaussian_blur, gradient_magnitude, sobel, SOBEL_RAMP_GAIN, SOBEL_STEP_GAIN};
pub use morphology::{dilate, erode, morphology, skeletonize, MorphOp};
pub use otsu::{histogram, otsu_from_histogram, otsu_threshold, Otsu, Polarity};
pub use threshold::adaptive_threshold;
pub use watershed::{distance_peak_markers, watershed, watershed_baseline, watershed_on_levels};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassicalError {
    #[error("image has fewer than two distinct intensities; no threshold separates it")]
    NoSeparation,
    #[error("adaptive window must be odd and at least 3 (got {0})")]
    Window(u32),
    #[error("invalid edge parameters: {0}")]
    EdgeParams(&'static str),
    #[error("watershed needs at least one marker")]
    EmptyMarkers,
    #[error("markers are {0}x{1} but the image is {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("relative cutoff fraction must lie in (0, 1), got {0}")]
    Fraction(f64),
}
