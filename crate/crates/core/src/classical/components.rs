use alloc::vec::Vec;

use super::ClassicalError;
use crate::raster::{BinaryMask, CropBox, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(0, -1), (-1, 0), (1, 0), (0, 1)],
            Connectivity::Eight => &[(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
        }
    }
}

/// A labelled connected region.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub label: u32,
    pub area: usize,
    /// Mean of member pixel coordinates.
    pub centroid: (f64, f64),
    pub bbox: CropBox,
}

/// Labels the connected components of `mask` as `1..=k` in the raster order
/// of each component's first pixel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> (LabelMap, Vec<Region>) {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut labels = LabelMap::new(mask.width(), mask.height());
    let mut regions = Vec::new();
    let mut stack = Vec::new();
    let offsets = connectivity.offsets();
    for start in mask.iter_indices() {
        if labels.labels()[start] != 0 {
            continue;
        }
        let label = regions.len() as u32 + 1;
        labels.labels_mut()[start] = label;
        stack.push(start);
        let (mut area, mut sx, mut sy) = (0usize, 0u64, 0u64);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(p) = stack.pop() {
            let (px, py) = (p % w, p / w);
            area += 1;
            sx += px as u64;
            sy += py as u64;
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px + 1);
            y1 = y1.max(py + 1);
            for &(dx, dy) in offsets {
                let (nx, ny) = (px as isize + dx, py as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if mask.contains_index(q) && labels.labels()[q] == 0 {
                    labels.labels_mut()[q] = label;
                    stack.push(q);
                }
            }
        }
        regions.push(Region {
            label,
            area,
            centroid: (sx as f64 / area as f64, sy as f64 / area as f64),
            bbox: CropBox {
                x0: x0 as u32,
                y0: y0 as u32,
                x1: x1 as u32,
                y1: y1 as u32,
                layer: 0,
            },
        });
    }
    (labels, regions)
}

/// Size cutoff for [`remove_small_regions`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmallRegionCutoff {
    /// Regions with fewer pixels are removed.
    Absolute(usize),
    /// Regions smaller than this fraction of the median region area are
    /// removed.
    Relative(f64),
}

impl Default for SmallRegionCutoff {
    fn default() -> Self {
        SmallRegionCutoff::Relative(0.1)
    }
}

fn label_areas(lm: &LabelMap) -> Vec<(u32, usize)> {
    let mut sorted: Vec<u32> = lm.labels().iter().copied().filter(|&l| l != 0).collect();
    sorted.sort_unstable();
    let mut areas: Vec<(u32, usize)> = Vec::new();
    for l in sorted {
        match areas.last_mut() {
            Some((last, n)) if *last == l => *n += 1,
            _ => areas.push((l, 1)),
        }
    }
    areas
}

fn median(values: &mut [usize]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

/// Zeroes regions under the cutoff; surviving labels keep their values.
///
/// In relative mode removing outliers raises the median, so the cutoff is
/// re-evaluated until nothing more is removed.
pub fn remove_small_regions(lm: &LabelMap, cutoff: SmallRegionCutoff) -> Result<LabelMap, ClassicalError> {
    if let SmallRegionCutoff::Relative(f) = cutoff {
        if !(f > 0.0 && f < 1.0) {
            return Err(ClassicalError::Fraction(f));
        }
    }
    let mut areas = label_areas(lm);
    let mut removed: Vec<u32> = Vec::new();
    loop {
        let min_area = match cutoff {
            SmallRegionCutoff::Absolute(n) => n as f64,
            SmallRegionCutoff::Relative(f) => {
                if areas.is_empty() {
                    break;
                }
                let mut a: Vec<usize> = areas.iter().map(|&(_, n)| n).collect();
                f * median(&mut a)
            }
        };
        let before = removed.len();
        areas.retain(|&(l, n)| {
            let keep = n as f64 >= min_area;
            if !keep {
                removed.push(l);
            }
            keep
        });
        if removed.len() == before || matches!(cutoff, SmallRegionCutoff::Absolute(_)) {
            break;
        }
    }
    if removed.is_empty() {
        return Ok(lm.clone());
    }
    removed.sort_unstable();
    let mut out = lm.clone();
    for l in out.labels_mut() {
        if *l != 0 && removed.binary_search(l).is_ok() {
            *l = 0;
        }
    }
    Ok(out)
}
