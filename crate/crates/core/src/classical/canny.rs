use alloc::vec;
use alloc::vec::Vec;

use super::filter::{gaussian_blur, gradient_magnitude, sobel};
use super::ClassicalError;
use crate::raster::{BinaryMask, Micrograph};

/// Canny parameters. Thresholds apply to the gradient magnitude rescaled so
/// that the strongest gradient in the image is 255; they are therefore
/// relative to the image's own contrast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeParams {
    pub sigma: f64,
    pub low: f32,
    pub high: f32,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 50.0,
            high: 100.0,
        }
    }
}

impl EdgeParams {
    pub const MAX_MAGNITUDE: f32 = 255.0;

    pub fn validate(&self) -> Result<(), ClassicalError> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(ClassicalError::EdgeParams("sigma must be finite and >= 0"));
        }
        if !(self.low >= 0.0 && self.low <= self.high) {
            return Err(ClassicalError::EdgeParams("thresholds must satisfy 0 <= low <= high"));
        }
        // negated so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.high <= Self::MAX_MAGNITUDE) {
            return Err(ClassicalError::EdgeParams("high threshold exceeds 255"));
        }
        Ok(())
    }
}

// tan(22.5 deg) and tan(67.5 deg)
const TAN_22_5: f32 = 0.414_213_57;
const TAN_67_5: f32 = 2.414_213_6;

pub fn canny(img: &Micrograph, params: &EdgeParams) -> Result<BinaryMask, ClassicalError> {
    params.validate()?;
    let gray = img.to_grayscale();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let src: Vec<f32> = gray.pixels().iter().map(|&p| p as f32).collect();
    let blurred = gaussian_blur(&src, w, h, params.sigma);
    let (gx, gy) = sobel(&blurred, w, h);
    let mut mag = gradient_magnitude(&gx, &gy);
    let peak = mag.iter().copied().fold(0f32, f32::max);
    if peak <= 1e-3 {
        return Ok(BinaryMask::new(gray.width(), gray.height()));
    }
    let gain = EdgeParams::MAX_MAGNITUDE / peak;
    mag.iter_mut().for_each(|m| *m *= gain);

    // Non-maximum suppression along the quantised gradient direction. The
    // one-pixel frame is never an edge.
    let mut thin = vec![0f32; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let m = mag[i];
            if m < params.low || m == 0.0 {
                continue;
            }
            let (ax, ay) = (gx[i].abs(), gy[i].abs());
            let (before, after) = if ay <= TAN_22_5 * ax {
                (i - 1, i + 1)
            } else if ay >= TAN_67_5 * ax {
                (i - w, i + w)
            } else if (gx[i] > 0.0) == (gy[i] > 0.0) {
                (i - w - 1, i + w + 1)
            } else {
                (i - w + 1, i + w - 1)
            };
            if m > mag[before] && m >= mag[after] {
                thin[i] = m;
            }
        }
    }

    // Hysteresis: grow 8-connected weak pixels out of strong seeds.
    let mut edges = BinaryMask::new(gray.width(), gray.height());
    let mut stack: Vec<usize> = Vec::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= params.high && !edges.contains_index(i) {
            edges.insert_index(i);
            stack.push(i);
            while let Some(p) = stack.pop() {
                let (px, py) = ((p % w) as isize, (p / w) as isize);
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (nx, ny) = (px + dx, py + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if thin[q] >= params.low && thin[q] > 0.0 && !edges.contains_index(q) {
                            edges.insert_index(q);
                            stack.push(q);
                        }
                    }
                }
            }
        }
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_edges() {
        let img = Micrograph::from_fn(16, 16, |_, _| 90).unwrap();
        assert!(canny(&img, &EdgeParams::default()).unwrap().is_empty());
    }

    #[test]
    fn vertical_step_gives_thin_band() {
        let img = Micrograph::from_fn(32, 24, |x, _| if x < 16 { 0 } else { 255 }).unwrap();
        let params = EdgeParams {
            sigma: 1.0,
            ..EdgeParams::default()
        };
        let edges = canny(&img, &params).unwrap();
        assert!(!edges.is_empty());
        for (x, _) in edges.iter_points() {
            assert!((15..=16).contains(&x), "edge at column {x}");
        }
        // every interior row carries the edge, one pixel thick
        for y in 1..23 {
            let row: Vec<u32> = edges.iter_points().filter(|p| p.1 == y).map(|p| p.0).collect();
            assert_eq!(row.len(), 1, "row {y}: {row:?}");
        }
    }

    #[test]
    fn rejects_inverted_thresholds() {
        let p = EdgeParams {
            sigma: 1.0,
            low: 80.0,
            high: 40.0,
        };
        assert!(p.validate().is_err());
        let neg = EdgeParams {
            sigma: -1.0,
            ..EdgeParams::default()
        };
        assert!(neg.validate().is_err());
    }
}
