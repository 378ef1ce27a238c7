use super::ClassicalError;
use crate::raster::{BinaryMask, Micrograph};

/// Which side of the threshold becomes the foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    /// Pixels `>= threshold` (bright phases, grain interiors).
    #[default]
    Bright,
    /// Pixels `< threshold` (dark boundaries, dark phases).
    Dark,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Otsu {
    /// First intensity of the upper class, in `1..=255`.
    pub threshold: u8,
    pub mask: BinaryMask,
}

/// 256-bin intensity histogram of the luminance channel.
pub fn histogram(img: &Micrograph) -> [u64; 256] {
    let gray = img.to_grayscale();
    let mut hist = [0u64; 256];
    for &p in gray.pixels() {
        hist[p as usize] += 1;
    }
    hist
}

/// Threshold `t` maximising the between-class variance of `{< t}` versus
/// `{>= t}`. The first maximiser wins. Returns `None` when fewer than two
/// bins are populated.
pub fn otsu_from_histogram(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();
    let mut n0 = 0u64;
    let mut s0 = 0u64;
    let mut best: Option<(u8, f64)> = None;
    for t in 1..256usize {
        n0 += hist[t - 1];
        s0 += (t as u64 - 1) * hist[t - 1];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_sum - s0;
        // w0 w1 (mu0 - mu1)^2 scaled by N^2: (n1 s0 - n0 s1)^2 / (n0 n1)
        let diff = (n1 as i128 * s0 as i128 - n0 as i128 * s1 as i128) as f64;
        let score = diff * diff / (n0 as f64 * n1 as f64);
        if best.map_or(true, |(_, b)| score > b) {
            best = Some((t as u8, score));
        }
    }
    best.map(|(t, _)| t)
}

pub fn otsu_threshold(img: &Micrograph, polarity: Polarity) -> Result<Otsu, ClassicalError> {
    let gray = img.to_grayscale();
    let threshold = otsu_from_histogram(&histogram(&gray)).ok_or(ClassicalError::NoSeparation)?;
    let mut mask = BinaryMask::new(gray.width(), gray.height());
    for (i, &p) in gray.pixels().iter().enumerate() {
        let bright = p >= threshold;
        if bright == (polarity == Polarity::Bright) {
            mask.insert_index(i);
        }
    }
    Ok(Otsu { threshold, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn bimodal_split() {
        let img = Micrograph::from_fn(8, 8, |x, _| if x < 4 { 10 } else { 200 }).unwrap();
        let o = otsu_threshold(&img, Polarity::Bright).unwrap();
        assert!(o.threshold > 10 && o.threshold <= 200);
        assert_eq!(o.mask, BinaryMask::from_fn(8, 8, |x, _| x >= 4));
        let dark = otsu_threshold(&img, Polarity::Dark).unwrap();
        assert_eq!(dark.mask, o.mask.complement());
    }

    #[test]
    fn constant_image_has_no_separation() {
        let img = Micrograph::from_fn(5, 5, |_, _| 77).unwrap();
        assert_eq!(otsu_threshold(&img, Polarity::Bright), Err(ClassicalError::NoSeparation));
    }

    #[test]
    fn shift_moves_threshold_by_same_amount() {
        let px: Vec<u8> = (0..400u32).map(|i| ((i * 7919) % 150) as u8).collect();
        let img = Micrograph::gray(20, 20, px.clone()).unwrap();
        let shifted = Micrograph::gray(20, 20, px.iter().map(|p| p + 60).collect()).unwrap();
        let a = otsu_threshold(&img, Polarity::Bright).unwrap().threshold;
        let b = otsu_threshold(&shifted, Polarity::Bright).unwrap().threshold;
        assert_eq!(a as u32 + 60, b as u32);
    }
}
