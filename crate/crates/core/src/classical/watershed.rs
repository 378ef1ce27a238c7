use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Reverse;

use super::components::{connected_components, Connectivity};
use super::distance::squared_distance_transform;
use super::filter::{gradient_magnitude, sobel};
use super::otsu::{otsu_threshold, Polarity};
use super::ClassicalError;
use crate::math;
use crate::raster::{BinaryMask, LabelMap, Micrograph};

/// Integer flooding levels: the rounded normalised Sobel magnitude.
fn gradient_levels(img: &Micrograph) -> Vec<u32> {
    let gray = img.to_grayscale();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let src: Vec<f32> = gray.pixels().iter().map(|&p| p as f32).collect();
    let (gx, gy) = sobel(&src, w, h);
    gradient_magnitude(&gx, &gy)
        .into_iter()
        .map(|m| math::round_half_down(m as f64) as u32)
        .collect()
}

/// Marker-driven priority flood on the gradient-magnitude landscape of
/// `img`.
pub fn watershed(img: &Micrograph, markers: &LabelMap) -> Result<LabelMap, ClassicalError> {
    if img.width() != markers.width() || img.height() != markers.height() {
        return Err(ClassicalError::DimensionMismatch(
            markers.width(),
            markers.height(),
            img.width(),
            img.height(),
        ));
    }
    watershed_on_levels(&gradient_levels(img), markers)
}

/// Priority flood over an arbitrary landscape.
///
/// Pixels are claimed by the first flood front to reach them. The queue is
/// ordered by flooding level, then by arrival order, so fronts advance
/// breadth-first across plateaus; seeds enter in raster order.
pub fn watershed_on_levels(levels: &[u32], markers: &LabelMap) -> Result<LabelMap, ClassicalError> {
    let (w, h) = (markers.width() as usize, markers.height() as usize);
    debug_assert_eq!(levels.len(), w * h);
    let mut out = markers.clone();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (i, &l) in markers.labels().iter().enumerate() {
        if l != 0 {
            heap.push(Reverse((levels[i], seq, i)));
            seq += 1;
        }
    }
    if heap.is_empty() {
        return Err(ClassicalError::EmptyMarkers);
    }
    while let Some(Reverse((level, _, p))) = heap.pop() {
        let label = out.labels()[p];
        let (px, py) = (p % w, p / w);
        let neighbours = [
            (py > 0).then(|| p - w),
            (px > 0).then(|| p - 1),
            (px + 1 < w).then(|| p + 1),
            (py + 1 < h).then(|| p + w),
        ];
        for q in neighbours.into_iter().flatten() {
            if out.labels()[q] == 0 {
                out.labels_mut()[q] = label;
                heap.push(Reverse((levels[q].max(level), seq, q)));
                seq += 1;
            }
        }
    }
    Ok(out)
}

/// Markers at the plateaus of local maxima of the Euclidean distance
/// transform of `foreground`, labelled in raster order.
pub fn distance_peak_markers(foreground: &BinaryMask) -> LabelMap {
    let (w, h) = (foreground.width() as usize, foreground.height() as usize);
    let dist = squared_distance_transform(&foreground.complement());
    let mut peaks = BinaryMask::new(foreground.width(), foreground.height());
    for i in foreground.iter_indices() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        let d = dist[i];
        let mut is_peak = true;
        'scan: for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (nx, ny) = (x + dx, y + dy);
                if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if foreground.contains_index(j) && dist[j] > d {
                    is_peak = false;
                    break 'scan;
                }
            }
        }
        if is_peak {
            peaks.insert_index(i);
        }
    }
    connected_components(&peaks, Connectivity::Eight).0
}

/// Conventional watershed baseline: Otsu foreground, distance-peak
/// markers, gradient flood, and the Otsu background reset to 0.
pub fn watershed_baseline(img: &Micrograph, polarity: Polarity) -> Result<LabelMap, ClassicalError> {
    let fg = otsu_threshold(img, polarity)?.mask;
    let markers = distance_peak_markers(&fg);
    let mut flooded = watershed(img, &markers)?;
    for (i, l) in flooded.labels_mut().iter_mut().enumerate() {
        if !fg.contains_index(i) {
            *l = 0;
        }
    }
    Ok(flooded)
}
