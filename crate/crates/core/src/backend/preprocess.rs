//! Geometry and pixel transforms shared by neural backends: resize the
//! longest side to the model input, normalize, pad, and map low-resolution
//! logits back onto the source grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::floor;
use crate::raster::{BinaryMask, Micrograph};

/// Per-channel normalization applied after resizing, in 0..255 units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [123.675, 116.28, 103.53],
            std: [58.395, 57.12, 57.375],
        }
    }
}

/// How a `src_w x src_h` frame sits inside the square model input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResizeGeometry {
    pub input_side: u32,
    pub src_w: u32,
    pub src_h: u32,
    pub new_w: u32,
    pub new_h: u32,
}

impl ResizeGeometry {
    pub fn new(src_w: u32, src_h: u32, input_side: u32) -> Self {
        let long = src_w.max(src_h).max(1) as f64;
        let s = input_side as f64 / long;
        let fit = |d: u32| (floor(d as f64 * s + 0.5) as u32).clamp(1, input_side);
        Self {
            input_side,
            src_w,
            src_h,
            new_w: fit(src_w),
            new_h: fit(src_h),
        }
    }

    /// Model pixels per source pixel along x and y.
    pub fn scale(&self) -> (f64, f64) {
        (
            self.new_w as f64 / self.src_w as f64,
            self.new_h as f64 / self.src_h as f64,
        )
    }

    pub fn to_model_coords(&self, x: u32, y: u32) -> (f32, f32) {
        let (sx, sy) = self.scale();
        ((x as f64 * sx) as f32, (y as f64 * sy) as f32)
    }
}

/// Bilinear sample with half-pixel centres and clamped borders.
fn sample(plane: &[f32], w: usize, h: usize, u: f64, v: f64) -> f32 {
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let x0 = floor(u) as usize;
    let y0 = floor(v) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (u - x0 as f64) as f32;
    let fy = (v - y0 as f64) as f32;
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resized, normalized and zero-padded `[3, S, S]` input tensor.
/// Grayscale input is replicated across the three channels.
pub fn prepare_input(img: &Micrograph, geom: &ResizeGeometry, norm: &Normalization) -> Vec<f32> {
    let side = geom.input_side as usize;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let ch = img.channels() as usize;
    let mut out = vec![0.0f32; 3 * side * side];
    let (sx, sy) = geom.scale();
    for c in 0..3 {
        let src_c = if ch == 1 { 0 } else { c };
        let plane: Vec<f32> = img.pixels().iter().skip(src_c).step_by(ch).map(|&p| p as f32).collect();
        let dst = &mut out[c * side * side..(c + 1) * side * side];
        for y in 0..geom.new_h as usize {
            let v = (y as f64 + 0.5) / sy - 0.5;
            for x in 0..geom.new_w as usize {
                let u = (x as f64 + 0.5) / sx - 0.5;
                let p = sample(&plane, w, h, u, v);
                dst[y * side + x] = (p - norm.mean[c]) / norm.std[c];
            }
        }
    }
    out
}

/// Thresholds `lw x lh` logits covering the padded model input at zero and
/// resamples them onto the `src_w x src_h` grid.
pub fn logits_to_mask(logits: &[f32], lw: u32, lh: u32, geom: &ResizeGeometry) -> BinaryMask {
    let (lw_us, lh_us) = (lw as usize, lh as usize);
    let (sx, sy) = geom.scale();
    let kx = lw as f64 / geom.input_side as f64;
    let ky = lh as f64 / geom.input_side as f64;
    BinaryMask::from_fn(geom.src_w, geom.src_h, |x, y| {
        let u = (x as f64 + 0.5) * sx * kx - 0.5;
        let v = (y as f64 + 0.5) * sy * ky - 0.5;
        sample(logits, lw_us, lh_us, u, v) > 0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longest_side_fills_input() {
        let g = ResizeGeometry::new(200, 100, 64);
        assert_eq!((g.new_w, g.new_h), (64, 32));
        let g = ResizeGeometry::new(3, 1000, 1024);
        assert_eq!((g.new_w, g.new_h), (3, 1024));
        assert_eq!(g.to_model_coords(0, 500), (0.0, 512.0));
    }

    #[test]
    fn constant_image_normalizes_and_pads() {
        let img = Micrograph::from_fn(10, 5, |_, _| 124).unwrap();
        let g = ResizeGeometry::new(10, 5, 8);
        let norm = Normalization::default();
        let t = prepare_input(&img, &g, &norm);
        assert_eq!(t.len(), 3 * 64);
        for c in 0..3 {
            let expected = (124.0 - norm.mean[c]) / norm.std[c];
            for y in 0..8 {
                for x in 0..8 {
                    let v = t[c * 64 + y * 8 + x];
                    if y < 4 {
                        assert!((v - expected).abs() < 1e-6);
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn logits_map_back_to_source_grid() {
        // left half positive over the resized area of a 2:1 source
        let g = ResizeGeometry::new(40, 20, 16);
        let (lw, lh) = (4u32, 4u32);
        let logits: Vec<f32> = (0..16).map(|i| if i % 4 < 1 { 1.0 } else { -1.0 }).collect();
        let m = logits_to_mask(&logits, lw, lh, &g);
        assert_eq!((m.width(), m.height()), (40, 20));
        // low-res column 0 covers model x 0..4, i.e. source x 0..10
        for y in 0..20 {
            assert!(m.get(0, y));
            assert!(m.get(8, y));
            assert!(!m.get(14, y));
            assert!(!m.get(39, y));
        }
    }
}
