use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Raw Sobel response to a unit-slope intensity ramp.
pub const SOBEL_RAMP_GAIN: f32 = 8.0;
/// Raw Sobel response to a unit step; dividing by it maps a sharp
/// 0 -> 255 step to magnitude 255.
pub const SOBEL_STEP_GAIN: f32 = 4.0;

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = math::ceil(3.0 * sigma) as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|i| math::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / total) as f32).collect()
}

/// Separable Gaussian blur with replicated borders. `sigma <= 0` copies.
pub fn gaussian_blur(src: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![0f32; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0f32;
            for (k, w) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - radius).clamp(0, width as isize - 1) as usize;
                acc += w * row[sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0f32; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0f32;
            for (k, w) in kernel.iter().enumerate() {
                let sy = (y as isize + k as isize - radius).clamp(0, height as isize - 1) as usize;
                acc += w * tmp[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Raw 3x3 Sobel derivatives `(gx, gy)` with replicated borders.
pub fn sobel(src: &[f32], width: usize, height: usize) -> (Vec<f32>, Vec<f32>) {
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, width as isize - 1) as usize;
        let y = y.clamp(0, height as isize - 1) as usize;
        src[y * width + x]
    };
    let mut gx = vec![0f32; src.len()];
    let mut gy = vec![0f32; src.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let i = y as usize * width + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Euclidean Sobel magnitude normalised by [`SOBEL_STEP_GAIN`].
pub fn gradient_magnitude(gx: &[f32], gy: &[f32]) -> Vec<f32> {
    gx.iter()
        .zip(gy)
        .map(|(&a, &b)| math::sqrt((a * a + b * b) as f64) as f32 / SOBEL_STEP_GAIN)
        .collect()
}
