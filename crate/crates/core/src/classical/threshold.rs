use alloc::vec;
use alloc::vec::Vec;

use super::ClassicalError;
use crate::raster::{BinaryMask, Micrograph};

/// Box sums over a `window x window` neighbourhood with replicated borders.
fn clamped_box_sums(gray: &[u8], width: usize, height: usize, radius: usize) -> Vec<i64> {
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut horizontal = vec![0i64; width * height];
    for y in 0..height {
        let row = &gray[y * width..(y + 1) * width];
        let mut sum: i64 = (-(radius as isize)..=radius as isize)
            .map(|dx| row[clamp(dx, width)] as i64)
            .sum();
        for x in 0..width {
            horizontal[y * width + x] = sum;
            let leaving = row[clamp(x as isize - radius as isize, width)] as i64;
            let entering = row[clamp(x as isize + radius as isize + 1, width)] as i64;
            sum += entering - leaving;
        }
    }
    let mut out = vec![0i64; width * height];
    for x in 0..width {
        let mut sum: i64 = (-(radius as isize)..=radius as isize)
            .map(|dy| horizontal[clamp(dy, height) * width + x])
            .sum();
        for y in 0..height {
            out[y * width + x] = sum;
            let leaving = horizontal[clamp(y as isize - radius as isize, height) * width + x];
            let entering = horizontal[clamp(y as isize + radius as isize + 1, height) * width + x];
            sum += entering - leaving;
        }
    }
    out
}

/// Sets a pixel when it exceeds its local window mean minus `offset`.
/// The window is clamped at the image border (edge pixels replicated).
pub fn adaptive_threshold(img: &Micrograph, window: u32, offset: i32) -> Result<BinaryMask, ClassicalError> {
    if window < 3 || window % 2 == 0 {
        return Err(ClassicalError::Window(window));
    }
    let gray = img.to_grayscale();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let sums = clamped_box_sums(gray.pixels(), w, h, (window / 2) as usize);
    let area = (window as i64) * (window as i64);
    let mut mask = BinaryMask::new(gray.width(), gray.height());
    for (i, (&p, &sum)) in gray.pixels().iter().zip(&sums).enumerate() {
        // p > sum/area - offset, kept in integers
        if p as i64 * area > sum - offset as i64 * area {
            mask.insert_index(i);
        }
    }
    Ok(mask)
}
