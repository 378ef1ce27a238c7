//! Grain boundaries, phase masks, region screening and statistics.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::classical::{connected_components, dilate, morphology, skeletonize, Connectivity, MorphOp};
use crate::math::{floor, sqrt};
use crate::raster::{BinaryMask, LabelMap, Micrograph, RasterError, ScoredMask};

/// Group name for regions no screening rule matched.
pub const UNCLASSIFIED: &str = "unclassified";

/// Pixels with a 4-neighbour of a different label. Background counts as a
/// label; the frame edge does not.
pub fn label_to_boundary(lm: &LabelMap) -> BinaryMask {
    let (w, h) = (lm.width() as usize, lm.height() as usize);
    let l = lm.labels();
    let mut out = BinaryMask::new(lm.width(), lm.height());
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let v = l[i];
            let differs = (x > 0 && l[i - 1] != v)
                || (x + 1 < w && l[i + 1] != v)
                || (y > 0 && l[i - w] != v)
                || (y + 1 < h && l[i + w] != v);
            if differs {
                out.insert_index(i);
            }
        }
    }
    out
}

const RING: [(isize, isize); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

fn ring(mask: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let mut out = [false; 8];
    for (k, &(dx, dy)) in RING.iter().enumerate() {
        let (nx, ny) = (x as isize + dx, y as isize + dy);
        out[k] = nx >= 0 && ny >= 0 && nx < w && ny < h && mask.contains_index((ny * w + nx) as usize);
    }
    out
}

/// A skeleton pixel whose neighbours form at most one contiguous run
/// around it (this covers line ends and isolated dots).
fn is_endpoint(mask: &BinaryMask, x: usize, y: usize) -> bool {
    let r = ring(mask, x, y);
    let runs = (0..8).filter(|&k| r[k] && !r[(k + 7) % 8]).count();
    let n = r.iter().filter(|&&b| b).count();
    n == 0 || (runs == 1 && n <= 3)
}

fn endpoints(mask: &BinaryMask) -> BinaryMask {
    let w = mask.width() as usize;
    let mut out = BinaryMask::new(mask.width(), mask.height());
    for i in mask.iter_indices() {
        if is_endpoint(mask, i % w, i / w) {
            out.insert_index(i);
        }
    }
    out
}

/// Removes skeleton branches shorter than `prune_len` that end in an
/// endpoint. Closed loops have no endpoints and are never touched.
pub fn prune_spurs(skeleton: &BinaryMask, prune_len: u32) -> BinaryMask {
    if prune_len <= 1 || skeleton.is_empty() {
        return skeleton.clone();
    }
    let k = prune_len - 1;
    let mut thinned = skeleton.clone();
    for _ in 0..k {
        let ends = endpoints(&thinned);
        if ends.is_empty() {
            break;
        }
        for i in ends.iter_indices() {
            thinned.remove_index(i);
        }
    }
    // Grow the surviving line ends back over what the erosion took from them.
    let mut regrown = endpoints(&thinned);
    for _ in 0..k {
        let mut next = dilate(&regrown, 1);
        next.intersect_with(skeleton);
        regrown = next;
    }
    let mut out = thinned;
    out.union_with(&regrown);
    // Isolated segments lose pixels from both ends; restore the long ones.
    let (lm, regions) = connected_components(skeleton, Connectivity::Eight);
    for r in regions {
        if r.area < prune_len as usize {
            continue;
        }
        let member = lm.region_mask(r.label);
        if member.intersection_count(&out) == 0 {
            out.union_with(&member);
        }
    }
    out
}

/// Close small gaps, thin to one pixel and drop short spurs.
pub fn boundary_postprocess(mask: &BinaryMask, close_radius: u32, prune_len: u32) -> BinaryMask {
    let closed = morphology(mask, MorphOp::Close, close_radius);
    prune_spurs(&skeletonize(&closed), prune_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSelection<'a> {
    All,
    Indices(&'a [usize]),
}

/// Union of the selected masks, or `None` when there is nothing to infer
/// the frame from. Indices past the end are ignored.
pub fn compose_phase_mask(masks: &[ScoredMask], selection: PhaseSelection<'_>) -> Option<BinaryMask> {
    let first = masks.first()?;
    let mut out = BinaryMask::new(first.mask.width(), first.mask.height());
    match selection {
        PhaseSelection::All => masks.iter().for_each(|m| out.union_with(&m.mask)),
        PhaseSelection::Indices(ix) => ix.iter().filter_map(|&i| masks.get(i)).for_each(|m| out.union_with(&m.mask)),
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub label: u32,
    pub area_px: usize,
    pub area_um2: Option<f64>,
    pub centroid: (f64, f64),
    pub perimeter_px: usize,
    pub circularity: f64,
    pub aspect_ratio: f64,
    pub mean_intensity: f64,
    pub ecd_px: f64,
    pub ecd_um: Option<f64>,
    pub group: Option<String>,
}

#[derive(Default, Clone)]
struct Acc {
    area: usize,
    sx: u64,
    sy: u64,
    intensity: u64,
    perimeter: usize,
    contour: f64,
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

const HALF_DIAG: f64 = core::f64::consts::FRAC_1_SQRT_2;

/// Length of the marching-squares contour through a 2x2 cell whose
/// corners are `tl, tr, br, bl`.
fn cell_contour(tl: bool, tr: bool, br: bool, bl: bool) -> f64 {
    match (tl as u8) | (tr as u8) << 1 | (br as u8) << 2 | (bl as u8) << 3 {
        0 | 15 => 0.0,
        3 | 6 | 9 | 12 => 1.0,
        5 | 10 => 2.0 * HALF_DIAG,
        _ => HALF_DIAG,
    }
}

fn accumulate(lm: &LabelMap, gray: Option<&Micrograph>) -> BTreeMap<u32, Acc> {
    let (w, h) = (lm.width() as usize, lm.height() as usize);
    let l = lm.labels();
    let mut acc: BTreeMap<u32, Acc> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let v = l[i];
            if v == 0 {
                continue;
            }
            let a = acc.entry(v).or_insert_with(|| Acc {
                x0: x as u32,
                y0: y as u32,
                ..Acc::default()
            });
            a.area += 1;
            a.sx += x as u64;
            a.sy += y as u64;
            a.intensity += gray.map_or(0, |g| g.pixels()[i] as u64);
            a.x0 = a.x0.min(x as u32);
            a.x1 = a.x1.max(x as u32 + 1);
            a.y1 = a.y1.max(y as u32 + 1);
            let same = |ok: bool, j: usize| ok && l[j] == v;
            a.perimeter += [
                same(x > 0, i.wrapping_sub(1)),
                same(x + 1 < w, i + 1),
                same(y > 0, i.wrapping_sub(w)),
                same(y + 1 < h, i + w),
            ]
            .iter()
            .filter(|&&s| !s)
            .count();
        }
    }
    // Contours run through every 2x2 cell of the frame padded by one pixel.
    let at = |x: isize, y: isize| -> u32 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0
        } else {
            l[y as usize * w + x as usize]
        }
    };
    for cy in -1..h as isize {
        for cx in -1..w as isize {
            let c = [at(cx, cy), at(cx + 1, cy), at(cx + 1, cy + 1), at(cx, cy + 1)];
            for (k, &v) in c.iter().enumerate() {
                if v == 0 || c[..k].contains(&v) {
                    continue;
                }
                let len = cell_contour(c[0] == v, c[1] == v, c[2] == v, c[3] == v);
                if let Some(a) = acc.get_mut(&v) {
                    a.contour += len;
                }
            }
        }
    }
    acc
}

fn finish(label: u32, a: &Acc, scale: Option<f64>) -> RegionStats {
    let area = a.area as f64;
    let circularity = if a.contour > 0.0 {
        (4.0 * core::f64::consts::PI * area / (a.contour * a.contour)).min(1.0)
    } else {
        1.0
    };
    let (bw, bh) = ((a.x1 - a.x0) as f64, (a.y1 - a.y0) as f64);
    let ecd_px = 2.0 * sqrt(area / core::f64::consts::PI);
    RegionStats {
        label,
        area_px: a.area,
        area_um2: scale.map(|s| area * s * s),
        centroid: (a.sx as f64 / area, a.sy as f64 / area),
        perimeter_px: a.perimeter,
        circularity,
        aspect_ratio: bw.max(bh) / bw.min(bh),
        mean_intensity: a.intensity as f64 / area,
        ecd_px,
        ecd_um: scale.map(|s| ecd_px * s),
        group: None,
    }
}

fn gray_matching(lm_w: u32, lm_h: u32, img: &Micrograph) -> Result<Micrograph, RasterError> {
    if img.width() != lm_w || img.height() != lm_h {
        return Err(RasterError::DimensionMismatch(lm_w, lm_h, img.width(), img.height()));
    }
    Ok(img.to_grayscale())
}

/// One record per nonzero label, ascending. `perimeter_px` counts pixel
/// edges facing another label, the background or the frame; circularity
/// uses the marching-squares contour length and is capped at 1.
pub fn compute_region_stats(lm: &LabelMap, img: &Micrograph, scale: Option<f64>) -> Result<Vec<RegionStats>, RasterError> {
    let gray = gray_matching(lm.width(), lm.height(), img)?;
    Ok(accumulate(lm, Some(&gray))
        .iter()
        .map(|(&label, a)| finish(label, a, scale))
        .collect())
}

/// Inclusive bounds; a missing side is open.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bounds {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Bounds {
    pub fn contains(&self, v: f64) -> bool {
        self.min.map_or(true, |m| v >= m) && self.max.map_or(true, |m| v <= m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenRule {
    pub group: String,
    pub mean_intensity: Bounds,
    pub area_px: Bounds,
    pub circularity: Bounds,
    pub aspect_ratio: Bounds,
}

impl ScreenRule {
    pub fn new(group: impl Into<String>) -> Self {
        Self {
            group: group.into(),
            mean_intensity: Bounds::default(),
            area_px: Bounds::default(),
            circularity: Bounds::default(),
            aspect_ratio: Bounds::default(),
        }
    }

    pub fn matches(&self, s: &RegionStats) -> bool {
        self.mean_intensity.contains(s.mean_intensity)
            && self.area_px.contains(s.area_px as f64)
            && self.circularity.contains(s.circularity)
            && self.aspect_ratio.contains(s.aspect_ratio)
    }
}

/// The first matching rule's group, else [`UNCLASSIFIED`].
pub fn classify<'a>(s: &RegionStats, rules: &'a [ScreenRule]) -> &'a str {
    rules.iter().find(|r| r.matches(s)).map_or(UNCLASSIFIED, |r| r.group.as_str())
}

/// Statistics of a single mask, labelled `label`.
pub fn mask_stats(mask: &BinaryMask, img: &Micrograph, label: u32, scale: Option<f64>) -> Result<RegionStats, RasterError> {
    let gray = gray_matching(mask.width(), mask.height(), img)?;
    let bbox = mask.bounding_box();
    // Work inside the bounding box so large frames with small masks stay cheap.
    let Some(b) = bbox else {
        return Ok(finish(label, &Acc { area: 0, x1: 1, y1: 1, ..Acc::default() }, scale));
    };
    let lm = LabelMap::from_fn(b.width(), b.height(), |x, y| mask.get(x + b.x0, y + b.y0) as u32);
    let crop_gray = gray.crop(&b);
    let acc = accumulate(&lm, Some(&crop_gray));
    let mut a = acc[&1].clone();
    a.sx += a.area as u64 * b.x0 as u64;
    a.sy += a.area as u64 * b.y0 as u64;
    a.x0 += b.x0;
    a.x1 += b.x0;
    a.y0 += b.y0;
    a.y1 += b.y0;
    Ok(finish(label, &a, scale))
}

/// Groups mask indices by the first rule each mask satisfies; every index
/// lands in exactly one group.
pub fn screen_regions(masks: &[ScoredMask], img: &Micrograph, rules: &[ScreenRule]) -> Result<BTreeMap<String, Vec<usize>>, RasterError> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, m) in masks.iter().enumerate() {
        let s = mask_stats(&m.mask, img, i as u32 + 1, None)?;
        out.entry(classify(&s, rules).to_string()).or_default().push(i);
    }
    Ok(out)
}

pub const HISTOGRAM_BINS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct StatsSummary {
    pub count: usize,
    pub ecd_mean: f64,
    pub ecd_median: f64,
    /// Population standard deviation.
    pub ecd_std: f64,
    /// Share of `total_px` covered by each group; ungrouped regions fall
    /// under [`UNCLASSIFIED`].
    pub area_fraction: BTreeMap<String, f64>,
    /// Equivalent-diameter counts over `[0, histogram_max]`.
    pub histogram: [u64; HISTOGRAM_BINS],
    pub histogram_max: f64,
}

pub fn summarize(stats: &[RegionStats], total_px: usize) -> StatsSummary {
    let n = stats.len();
    let mut summary = StatsSummary {
        count: n,
        ecd_mean: 0.0,
        ecd_median: 0.0,
        ecd_std: 0.0,
        area_fraction: BTreeMap::new(),
        histogram: [0; HISTOGRAM_BINS],
        histogram_max: 0.0,
    };
    if n == 0 {
        return summary;
    }
    let mut d: Vec<f64> = stats.iter().map(|s| s.ecd_px).collect();
    d.sort_by(f64::total_cmp);
    let mean = d.iter().sum::<f64>() / n as f64;
    summary.ecd_mean = mean;
    summary.ecd_median = if n % 2 == 1 { d[n / 2] } else { (d[n / 2 - 1] + d[n / 2]) / 2.0 };
    summary.ecd_std = sqrt(d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64);
    let max = d[n - 1];
    summary.histogram_max = max;
    for &v in &d {
        let bin = if max > 0.0 {
            (floor(v / max * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        summary.histogram[bin] += 1;
    }
    if total_px > 0 {
        let mut px: BTreeMap<String, usize> = BTreeMap::new();
        for s in stats {
            let g = s.group.clone().unwrap_or_else(|| UNCLASSIFIED.to_string());
            *px.entry(g).or_default() += s.area_px;
        }
        summary.area_fraction = px.into_iter().map(|(g, a)| (g, a as f64 / total_px as f64)).collect();
    }
    summary
}

/// Pixel count per label, for callers that only need areas.
pub fn label_areas(lm: &LabelMap) -> BTreeMap<u32, usize> {
    let mut out = BTreeMap::new();
    for &l in lm.labels() {
        if l != 0 {
            *out.entry(l).or_insert(0) += 1;
        }
    }
    out
}
