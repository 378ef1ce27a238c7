use alloc::vec;
use alloc::vec::Vec;

use crate::raster::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Dilate,
    Erode,
    /// Dilate then erode.
    Close,
    /// Erode then dilate.
    Open,
    Skeletonize,
}

/// Applies `op` with a `(2r+1)`-square structuring element; `radius` is
/// ignored by [`MorphOp::Skeletonize`].
pub fn morphology(mask: &BinaryMask, op: MorphOp, radius: u32) -> BinaryMask {
    match op {
        MorphOp::Dilate => dilate(mask, radius),
        MorphOp::Erode => erode(mask, radius),
        MorphOp::Close => erode(&dilate(mask, radius), radius),
        MorphOp::Open => dilate(&erode(mask, radius), radius),
        MorphOp::Skeletonize => skeletonize(mask),
    }
}

/// Separable square max filter; with `want_all` it computes the min filter
/// instead, through the complement.
fn square_filter(mask: &BinaryMask, radius: u32, want_all: bool) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let r = radius as isize;
    // For erosion work on the complement: erode(m) = !dilate(!m) with the
    // outside of the frame counted as set.
    let source = if want_all { mask.complement() } else { mask.clone() };
    let mut rows = vec![false; w * h];
    let mut prefix = vec![0u32; w.max(h) + 1];
    for y in 0..h {
        for x in 0..w {
            prefix[x + 1] = prefix[x] + source.contains_index(y * w + x) as u32;
        }
        for x in 0..w {
            let lo = (x as isize - r).max(0) as usize;
            let hi = (x as isize + r + 1).min(w as isize) as usize;
            rows[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = BinaryMask::new(mask.width(), mask.height());
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + rows[y * w + x] as u32;
        }
        for y in 0..h {
            let lo = (y as isize - r).max(0) as usize;
            let hi = (y as isize + r + 1).min(h as isize) as usize;
            if (prefix[hi] > prefix[lo]) != want_all {
                out.insert_index(y * w + x);
            }
        }
    }
    out
}

/// Pixels within Chebyshev distance `radius` of a set pixel.
pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    square_filter(mask, radius, false)
}

/// Pixels whose whole `(2r+1)`-square is set; the frame's outside counts as
/// set, so closing never eats into the border.
pub fn erode(mask: &BinaryMask, radius: u32) -> BinaryMask {
    square_filter(mask, radius, true)
}

/// Guo-Hall parallel thinning to a one-pixel-wide, 8-connected skeleton.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut img: Vec<u8> = (0..w * h).map(|i| mask.contains_index(i) as u8).collect();
    let at = |img: &[u8], x: isize, y: isize| -> u8 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0
        } else {
            img[y as usize * w + x as usize]
        }
    };
    let mut marker: Vec<usize> = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            marker.clear();
            for y in 0..h as isize {
                for x in 0..w as isize {
                    if at(&img, x, y) == 0 {
                        continue;
                    }
                    let p2 = at(&img, x, y - 1);
                    let p3 = at(&img, x + 1, y - 1);
                    let p4 = at(&img, x + 1, y);
                    let p5 = at(&img, x + 1, y + 1);
                    let p6 = at(&img, x, y + 1);
                    let p7 = at(&img, x - 1, y + 1);
                    let p8 = at(&img, x - 1, y);
                    let p9 = at(&img, x - 1, y - 1);
                    let c = ((p2 ^ 1) & (p3 | p4))
                        + ((p4 ^ 1) & (p5 | p6))
                        + ((p6 ^ 1) & (p7 | p8))
                        + ((p8 ^ 1) & (p9 | p2));
                    let n1 = (p9 | p2) + (p3 | p4) + (p5 | p6) + (p7 | p8);
                    let n2 = (p2 | p3) + (p4 | p5) + (p6 | p7) + (p8 | p9);
                    let n = n1.min(n2);
                    let m = if pass == 0 {
                        (p6 | p7 | (p9 ^ 1)) & p8
                    } else {
                        (p2 | p3 | (p5 ^ 1)) & p4
                    };
                    if c == 1 && (2..=3).contains(&n) && m == 0 {
                        marker.push(y as usize * w + x as usize);
                    }
                }
            }
            for &i in &marker {
                img[i] = 0;
            }
            changed |= !marker.is_empty();
        }
        if !changed {
            break;
        }
    }
    let mut out = BinaryMask::new(mask.width(), mask.height());
    for (i, &v) in img.iter().enumerate() {
        if v == 1 {
            out.insert_index(i);
        }
    }
    out
}
