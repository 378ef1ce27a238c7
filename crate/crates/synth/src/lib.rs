//! Seeded generators for test inputs: Voronoi "grain" micrographs with
//! their true label maps, random partitions and random masks.

use matseg_core::{BinaryMask, LabelMap, Micrograph};
use rand::Rng;

/// A rendered micrograph and the partition it was drawn from. Boundary
/// pixels are 0 in `truth`.
pub struct Voronoi {
    pub image: Micrograph,
    pub truth: LabelMap,
    pub seeds: Vec<(f64, f64)>,
}

pub struct VoronoiSpec {
    pub width: u32,
    pub height: u32,
    pub seeds: usize,
    pub min_seed_distance: f64,
    pub boundary_level: u8,
    /// Grain intensities are drawn uniformly from this range.
    pub grain_levels: (u8, u8),
    /// Uniform per-pixel noise amplitude.
    pub noise: u8,
}

impl Default for VoronoiSpec {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            seeds: 50,
            min_seed_distance: 24.0,
            boundary_level: 30,
            grain_levels: (110, 230),
            noise: 4,
        }
    }
}

fn place_seeds<R: Rng>(rng: &mut R, spec: &VoronoiSpec) -> Vec<(f64, f64)> {
    let mut seeds: Vec<(f64, f64)> = Vec::with_capacity(spec.seeds);
    let d2 = spec.min_seed_distance * spec.min_seed_distance;
    let mut attempts = 0;
    while seeds.len() < spec.seeds {
        attempts += 1;
        assert!(attempts < 1_000_000, "cannot fit {} seeds", spec.seeds);
        let p = (
            rng.gen_range(0.0..spec.width as f64),
            rng.gen_range(0.0..spec.height as f64),
        );
        if seeds.iter().all(|s| (s.0 - p.0).powi(2) + (s.1 - p.1).powi(2) >= d2) {
            seeds.push(p);
        }
    }
    seeds
}

/// Nearest-seed partition drawn with one-pixel dark boundaries (a pixel is
/// boundary when its right or lower neighbour belongs to another seed).
pub fn voronoi<R: Rng>(rng: &mut R, spec: &VoronoiSpec) -> Voronoi {
    let seeds = place_seeds(rng, spec);
    let (w, h) = (spec.width, spec.height);
    let nearest = LabelMap::from_fn(w, h, |x, y| {
        let mut best = (f64::INFINITY, 0u32);
        for (i, s) in seeds.iter().enumerate() {
            let d = (s.0 - x as f64).powi(2) + (s.1 - y as f64).powi(2);
            if d < best.0 {
                best = (d, i as u32 + 1);
            }
        }
        best.1
    });
    let levels: Vec<u8> = (0..seeds.len())
        .map(|_| rng.gen_range(spec.grain_levels.0..=spec.grain_levels.1))
        .collect();
    let truth = LabelMap::from_fn(w, h, |x, y| {
        let l = nearest.get(x, y);
        let edge = (x + 1 < w && nearest.get(x + 1, y) != l) || (y + 1 < h && nearest.get(x, y + 1) != l);
        if edge {
            0
        } else {
            l
        }
    });
    let noise = spec.noise as i32;
    let pixels: Vec<u8> = truth
        .labels()
        .iter()
        .map(|&l| {
            let base = if l == 0 { spec.boundary_level } else { levels[l as usize - 1] } as i32;
            let n = if noise > 0 { rng.gen_range(-noise..=noise) } else { 0 };
            (base + n).clamp(0, 255) as u8
        })
        .collect();
    Voronoi {
        image: Micrograph::gray(w, h, pixels).expect("non-empty frame"),
        truth,
        seeds,
    }
}

/// `n` labels drawn from `1..=k`.
pub fn random_partition<R: Rng>(rng: &mut R, n: usize, k: u32) -> Vec<u32> {
    (0..n).map(|_| rng.gen_range(1..=k)).collect()
}

/// Independent pixels set with probability `density`.
pub fn noise_mask<R: Rng>(rng: &mut R, w: u32, h: u32, density: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(density))
}

/// A filled axis-aligned rectangle or disk at a random place.
pub fn blob_mask<R: Rng>(rng: &mut R, w: u32, h: u32) -> BinaryMask {
    let cx = rng.gen_range(0..w) as f64;
    let cy = rng.gen_range(0..h) as f64;
    let a = rng.gen_range(2.0..=(w as f64 / 3.0).max(2.0));
    let b = rng.gen_range(2.0..=(h as f64 / 3.0).max(2.0));
    if rng.gen_bool(0.5) {
        BinaryMask::from_fn(w, h, |x, y| (x as f64 - cx).abs() <= a && (y as f64 - cy).abs() <= b)
    } else {
        BinaryMask::from_fn(w, h, |x, y| ((x as f64 - cx) / a).powi(2) + ((y as f64 - cy) / b).powi(2) <= 1.0)
    }
}

/// Random axis-aligned tiles: the frame is cut into a grid of jittered
/// rows and columns and each tile gets its own label and intensity.
pub fn tiled_micrograph<R: Rng>(rng: &mut R, w: u32, h: u32, max_cuts: u32) -> (Micrograph, LabelMap) {
    let cuts = |rng: &mut R, len: u32| {
        let n = rng.gen_range(1..=max_cuts);
        let mut c: Vec<u32> = (0..n).map(|_| rng.gen_range(8..len.saturating_sub(8).max(9))).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let xs = cuts(rng, w);
    let ys = cuts(rng, h);
    let cols = xs.len() as u32 + 1;
    let lm = LabelMap::from_fn(w, h, |x, y| {
        let cx = xs.iter().filter(|&&c| x >= c).count() as u32;
        let cy = ys.iter().filter(|&&c| y >= c).count() as u32;
        1 + cx + cy * cols
    });
    let tiles = (ys.len() + 1) * (xs.len() + 1);
    let levels: Vec<u8> = (0..tiles).map(|i| if i % 2 == 0 { rng.gen_range(20..90) } else { rng.gen_range(160..240) }).collect();
    let img = Micrograph::from_fn(w, h, |x, y| levels[lm.get(x, y) as usize - 1]).expect("non-empty frame");
    (img, lm)
}
