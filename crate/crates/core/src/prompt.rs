//! Structure-aware prompt points.
//!
//! A coarse rule-based pre-segmentation supplies one centroid per region;
//! a regular grid whose density follows the region count fills in whatever
//! the pre-segmentation missed, and a denser lattice along the image border
//! catches objects cut by the frame. The three sets are fused with a
//! minimum-separation rule that never drops centroids.

use alloc::vec::Vec;

use crate::classical::{
    canny, connected_components, dilate, otsu_threshold, remove_small_regions, ClassicalError, Connectivity,
    EdgeParams, Polarity, SmallRegionCutoff,
};
use crate::math;
use crate::raster::{LabelMap, Micrograph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptOrigin {
    Centroid,
    Grid,
    Edge,
}

impl PromptOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptOrigin::Centroid => "centroid",
            PromptOrigin::Grid => "grid",
            PromptOrigin::Edge => "edge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PromptPoint {
    pub x: u32,
    pub y: u32,
    pub origin: PromptOrigin,
}

impl PromptPoint {
    pub fn new(x: u32, y: u32, origin: PromptOrigin) -> Self {
        Self { x, y, origin }
    }
}

/// Which rule-based method pre-segments the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegmentationMode {
    /// Canny edges; regions are the grain interiors between them.
    #[default]
    Polycrystalline,
    /// Otsu threshold; regions are connected foreground blobs.
    Multiphase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridMode {
    /// Side length follows the pre-segmentation region count.
    #[default]
    Adaptive,
    /// The fixed 32 x 32 grid of the stock automatic mask generator.
    Native,
}

pub const NATIVE_GRID_SIDE: u32 = 32;

/// Pre-segmentation knobs shared with the classical baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresegmentParams {
    pub edges: EdgeParams,
    /// Radius used to close small gaps in the Canny edge map before the
    /// interiors are labelled.
    pub edge_dilation: u32,
    pub polarity: Polarity,
    pub small_regions: SmallRegionCutoff,
}

impl Default for PresegmentParams {
    fn default() -> Self {
        Self {
            edges: EdgeParams::default(),
            edge_dilation: 1,
            polarity: Polarity::Bright,
            small_regions: SmallRegionCutoff::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptConfig {
    pub mode: SegmentationMode,
    pub grid: GridMode,
    /// Grid points per pre-segmented region.
    pub grid_alpha: f64,
    pub grid_min_side: u32,
    pub grid_max_side: u32,
    /// Width of the densified border band in pixels; 0 disables it.
    pub edge_margin: u32,
    /// Border lattice spacing is the grid spacing divided by this.
    pub edge_spacing_factor: f64,
    pub min_separation: f64,
    /// Include pre-segmentation centroids (off reproduces grid-only
    /// prompting).
    pub centroids: bool,
    pub presegment: PresegmentParams,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            mode: SegmentationMode::Polycrystalline,
            grid: GridMode::Adaptive,
            grid_alpha: 4.0,
            grid_min_side: 8,
            grid_max_side: 64,
            edge_margin: 16,
            edge_spacing_factor: 2.0,
            min_separation: 6.0,
            centroids: true,
            presegment: PresegmentParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptConfigError {
    #[error("grid_min_side must be >= 1 and <= grid_max_side")]
    GridBounds,
    #[error("grid_alpha must be positive and finite")]
    Alpha,
    #[error("edge_spacing_factor must be >= 1")]
    SpacingFactor,
    #[error("min_separation must be >= 0")]
    Separation,
    #[error(transparent)]
    Presegment(#[from] ClassicalError),
}

impl PromptConfig {
    /// Grid-only configuration matching the stock automatic generator.
    pub fn native() -> Self {
        Self {
            grid: GridMode::Native,
            edge_margin: 0,
            centroids: false,
            min_separation: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PromptConfigError> {
        if self.grid_min_side == 0 || self.grid_min_side > self.grid_max_side {
            return Err(PromptConfigError::GridBounds);
        }
        if !(self.grid_alpha.is_finite() && self.grid_alpha > 0.0) {
            return Err(PromptConfigError::Alpha);
        }
        if !(self.edge_spacing_factor >= 1.0 && self.edge_spacing_factor.is_finite()) {
            return Err(PromptConfigError::SpacingFactor);
        }
        if !(self.min_separation >= 0.0 && self.min_separation.is_finite()) {
            return Err(PromptConfigError::Separation);
        }
        self.presegment.edges.validate()?;
        if let SmallRegionCutoff::Relative(f) = self.presegment.small_regions {
            if !(f > 0.0 && f < 1.0) {
                return Err(ClassicalError::Fraction(f).into());
            }
        }
        Ok(())
    }
}

/// Coarse regions plus the reason they may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Presegmentation {
    pub labels: LabelMap,
    /// Set when Otsu found no separation and the map was left empty.
    pub warning: Option<ClassicalError>,
}

pub fn presegment(img: &Micrograph, mode: SegmentationMode, params: &PresegmentParams) -> Presegmentation {
    let (w, h) = (img.width(), img.height());
    let interiors = match mode {
        SegmentationMode::Multiphase => match otsu_threshold(img, params.polarity) {
            Ok(otsu) => otsu.mask,
            Err(e) => {
                return Presegmentation {
                    labels: LabelMap::new(w, h),
                    warning: Some(e),
                }
            }
        },
        SegmentationMode::Polycrystalline => match canny(img, &params.edges) {
            Ok(edges) => dilate(&edges, params.edge_dilation).complement(),
            Err(e) => {
                return Presegmentation {
                    labels: LabelMap::new(w, h),
                    warning: Some(e),
                }
            }
        },
    };
    let (labels, _) = connected_components(&interiors, Connectivity::Four);
    match remove_small_regions(&labels, params.small_regions) {
        Ok(labels) => Presegmentation { labels, warning: None },
        Err(e) => Presegmentation { labels, warning: Some(e) },
    }
}

/// One prompt per labelled region at the round-half-down centroid, snapped
/// to the nearest member pixel when the centroid falls outside the region.
/// Points come out in ascending label order.
pub fn centroid_prompts(lm: &LabelMap) -> Vec<PromptPoint> {
    let labels = lm.distinct_labels();
    if labels.is_empty() {
        return Vec::new();
    }
    let max = *labels.last().unwrap() as usize;
    // dense accumulators indexed by label
    let mut sums = alloc::vec![(0u64, 0u64, 0u64); max + 1];
    let w = lm.width() as usize;
    for (i, &l) in lm.labels().iter().enumerate() {
        if l != 0 {
            let s = &mut sums[l as usize];
            s.0 += (i % w) as u64;
            s.1 += (i / w) as u64;
            s.2 += 1;
        }
    }
    let mut out = Vec::with_capacity(labels.len());
    for &l in &labels {
        let (sx, sy, n) = sums[l as usize];
        let x = math::round_half_down_ratio(sx, n) as u32;
        let y = math::round_half_down_ratio(sy, n) as u32;
        let (x, y) = if lm.get(x, y) == l { (x, y) } else { nearest_member(lm, l, x, y) };
        out.push(PromptPoint::new(x, y, PromptOrigin::Centroid));
    }
    out
}

fn nearest_member(lm: &LabelMap, label: u32, x: u32, y: u32) -> (u32, u32) {
    let w = lm.width() as usize;
    let mut best = (u64::MAX, 0usize);
    for (i, &l) in lm.labels().iter().enumerate() {
        if l == label {
            let dx = ((i % w) as i64 - x as i64).unsigned_abs();
            let dy = ((i / w) as i64 - y as i64).unsigned_abs();
            let d = dx * dx + dy * dy;
            // strict: first in raster order wins ties
            if d < best.0 {
                best = (d, i);
            }
        }
    }
    ((best.1 % w) as u32, (best.1 / w) as u32)
}

/// Grid side for `k_regions` pre-segmented regions:
/// `clamp(ceil(sqrt(alpha * max(k, 1))), min, max)`, or 32 in native mode.
pub fn grid_side(k_regions: usize, cfg: &PromptConfig) -> u32 {
    if cfg.grid == GridMode::Native {
        return NATIVE_GRID_SIDE;
    }
    let raw = math::ceil(math::sqrt(cfg.grid_alpha * k_regions.max(1) as f64));
    (raw as u32).clamp(cfg.grid_min_side, cfg.grid_max_side)
}

/// Cell-centred `s x s` grid, row by row.
pub fn grid_points(width: u32, height: u32, side: u32) -> Vec<PromptPoint> {
    let side = side.max(1) as u64;
    let coord = |i: u64, extent: u32| {
        // round_half_down((i + 0.5) * extent / side)
        let v = math::round_half_down_ratio((2 * i + 1) * extent as u64, 2 * side);
        (v as u32).min(extent - 1)
    };
    let mut out = Vec::with_capacity((side * side) as usize);
    for j in 0..side {
        for i in 0..side {
            out.push(PromptPoint::new(coord(i, width), coord(j, height), PromptOrigin::Grid));
        }
    }
    out
}

pub fn adaptive_grid(width: u32, height: u32, k_regions: usize, cfg: &PromptConfig) -> Vec<PromptPoint> {
    grid_points(width, height, grid_side(k_regions, cfg))
}

/// Lattice spacing of the border band for a grid of the given side.
pub fn edge_spacing(width: u32, height: u32, side: u32, cfg: &PromptConfig) -> f64 {
    let grid_spacing = width.min(height) as f64 / side.max(1) as f64;
    (grid_spacing / cfg.edge_spacing_factor).max(1.0)
}

/// Points of a square lattice (cell-centred, `spacing` apart) that lie
/// within `edge_margin` pixels of the frame, in raster order.
pub fn edge_band_points(width: u32, height: u32, spacing: f64, margin: u32) -> Vec<PromptPoint> {
    if margin == 0 {
        return Vec::new();
    }
    let axis = |extent: u32| -> Vec<u32> {
        let mut v = Vec::new();
        let mut k = 0u32;
        loop {
            let c = math::round_half_down((k as f64 + 0.5) * spacing);
            if c >= extent as f64 {
                break;
            }
            v.push(c as u32);
            k += 1;
        }
        v.dedup();
        v
    };
    let xs = axis(width);
    let ys = axis(height);
    let mut out = Vec::new();
    for &y in &ys {
        for &x in &xs {
            let to_border = x.min(y).min(width - 1 - x).min(height - 1 - y);
            if to_border < margin {
                out.push(PromptPoint::new(x, y, PromptOrigin::Edge));
            }
        }
    }
    out
}

pub fn edge_densify(width: u32, height: u32, side: u32, cfg: &PromptConfig) -> Vec<PromptPoint> {
    edge_band_points(width, height, edge_spacing(width, height, side, cfg), cfg.edge_margin)
}

/// Fuses the three prompt sets.
///
/// Centroids are all kept. Grid then edge points are visited in raster
/// order and dropped when closer than `min_separation` to any point kept so
/// far.
pub fn fuse_prompts(
    centroids: &[PromptPoint],
    grid: &[PromptPoint],
    edge: &[PromptPoint],
    min_separation: f64,
) -> Vec<PromptPoint> {
    let raster = |v: &[PromptPoint]| {
        let mut v = v.to_vec();
        v.sort_by_key(|p| (p.y, p.x));
        v
    };
    let mut kept = raster(centroids);
    if min_separation <= 0.0 {
        kept.extend(raster(grid));
        kept.extend(raster(edge));
        return kept;
    }
    let mut buckets = SpatialBuckets::new(min_separation);
    for p in &kept {
        buckets.insert(*p);
    }
    let limit = min_separation * min_separation;
    for p in raster(grid).into_iter().chain(raster(edge)) {
        if !buckets.any_within(p, limit) {
            buckets.insert(p);
            kept.push(p);
        }
    }
    kept
}

/// Uniform hash grid for radius queries.
struct SpatialBuckets {
    cell: f64,
    cells: alloc::collections::BTreeMap<(i64, i64), Vec<PromptPoint>>,
}

impl SpatialBuckets {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            cells: alloc::collections::BTreeMap::new(),
        }
    }

    fn key(&self, p: PromptPoint) -> (i64, i64) {
        (
            math::floor(p.x as f64 / self.cell) as i64,
            math::floor(p.y as f64 / self.cell) as i64,
        )
    }

    fn insert(&mut self, p: PromptPoint) {
        let k = self.key(p);
        self.cells.entry(k).or_default().push(p);
    }

    fn any_within(&self, p: PromptPoint, limit_sq: f64) -> bool {
        let (kx, ky) = self.key(p);
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(points) = self.cells.get(&(kx + dx, ky + dy)) {
                    for q in points {
                        let ddx = p.x as f64 - q.x as f64;
                        let ddy = p.y as f64 - q.y as f64;
                        if ddx * ddx + ddy * ddy < limit_sq {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Everything prompt generation produced for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub points: Vec<PromptPoint>,
    pub presegmentation: Presegmentation,
    pub grid_side: u32,
}

impl PromptSet {
    pub fn count(&self, origin: PromptOrigin) -> usize {
        self.points.iter().filter(|p| p.origin == origin).count()
    }
}

/// Full prompt generation: pre-segment, centroids, grid, border band, fuse.
pub fn generate_prompts(img: &Micrograph, cfg: &PromptConfig) -> PromptSet {
    let (w, h) = (img.width(), img.height());
    let presegmentation = presegment(img, cfg.mode, &cfg.presegment);
    let centroids = if cfg.centroids {
        centroid_prompts(&presegmentation.labels)
    } else {
        Vec::new()
    };
    let k = presegmentation.labels.distinct_labels().len();
    let side = grid_side(k, cfg);
    let grid = grid_points(w, h, side);
    let edge = edge_densify(w, h, side, cfg);
    let points = fuse_prompts(&centroids, &grid, &edge, cfg.min_separation);
    PromptSet {
        points,
        presegmentation,
        grid_side: side,
    }
}
