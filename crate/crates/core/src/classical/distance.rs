//! Exact squared Euclidean distance transform (lower envelope of parabolas,
//! one pass per axis).

use alloc::vec;
use alloc::vec::Vec;

use crate::raster::BinaryMask;

/// Distance value for pixels with no feature pixel in the frame.
pub const UNREACHABLE: u64 = u64::MAX / 4;

fn transform_line(f: &[u64], out: &mut [u64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    for q in 0..n {
        if f[q] >= UNREACHABLE {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] as f64 + (q * q) as f64) - (f[p] as f64 + (p * p) as f64)) / (2.0 * (q - p) as f64);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = UNREACHABLE);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        // The float breakpoints only pick the candidate; re-check the
        // neighbour in integers so ties resolve exactly.
        let cost = |p: usize| f[p] + (q.abs_diff(p) * q.abs_diff(p)) as u64;
        let mut best = cost(v[k]);
        if k + 1 < v.len() {
            best = best.min(cost(v[k + 1]));
        }
        if k > 0 {
            best = best.min(cost(v[k - 1]));
        }
        *o = best;
    }
}

/// Squared Euclidean distance from every pixel to the nearest set pixel of
/// `features` ([`UNREACHABLE`] when `features` is empty).
pub fn squared_distance_transform(features: &BinaryMask) -> Vec<u64> {
    let (w, h) = (features.width() as usize, features.height() as usize);
    let mut grid: Vec<u64> = (0..w * h)
        .map(|i| if features.contains_index(i) { 0 } else { UNREACHABLE })
        .collect();
    let mut v = Vec::new();
    let mut z = Vec::new();
    let mut col = vec![0u64; h];
    let mut col_out = vec![0u64; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        transform_line(&col, &mut col_out, &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0u64; w];
    for y in 0..h {
        transform_line(&grid[y * w..(y + 1) * w], &mut row_out, &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid
}
