use matseg_core::prompt::{
    adaptive_grid, centroid_prompts, generate_prompts, grid_side, presegment, PromptConfig, PromptOrigin, SegmentationMode,
};
use matseg_core::{LabelMap, Micrograph};
use matseg_synth::{tiled_micrograph, voronoi, VoronoiSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic(seed: u64) -> (Micrograph, SegmentationMode) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if seed % 2 == 0 {
        let spec = VoronoiSpec {
            width: rng.gen_range(96..200),
            height: rng.gen_range(96..200),
            seeds: rng.gen_range(4..20),
            min_seed_distance: 14.0,
            ..VoronoiSpec::default()
        };
        (voronoi(&mut rng, &spec).image, SegmentationMode::Polycrystalline)
    } else {
        let (w, h) = (rng.gen_range(64..160), rng.gen_range(64..160));
        let (img, _) = tiled_micrograph(&mut rng, w, h, 4);
        (img, SegmentationMode::Multiphase)
    }
}

fn check_coverage(lm: &LabelMap) {
    let points = centroid_prompts(lm);
    let labels = lm.distinct_labels();
    assert_eq!(points.len(), labels.len());
    for &l in &labels {
        let inside = points.iter().filter(|p| lm.get(p.x, p.y) == l).count();
        assert_eq!(inside, 1, "label {l}");
    }
}

#[test]
fn every_region_gets_one_centroid() {
    for seed in 0..50 {
        let (img, mode) = synthetic(seed);
        let cfg = PromptConfig { mode, ..PromptConfig::default() };
        let pre = presegment(&img, mode, &cfg.presegment);
        assert!(pre.labels.max_label() > 0, "seed {seed} found no regions");
        check_coverage(&pre.labels);

        let set = generate_prompts(&img, &cfg);
        assert_eq!(set.count(PromptOrigin::Centroid), pre.labels.distinct_labels().len());
        let limit = cfg.min_separation * cfg.min_separation;
        for (i, p) in set.points.iter().enumerate() {
            for q in &set.points[i + 1..] {
                if p.origin == PromptOrigin::Centroid && q.origin == PromptOrigin::Centroid {
                    continue;
                }
                let d = (p.x as f64 - q.x as f64).powi(2) + (p.y as f64 - q.y as f64).powi(2);
                assert!(d >= limit, "seed {seed}: {p:?} {q:?}");
            }
        }
        assert_eq!(generate_prompts(&img, &cfg), set);
    }
}

#[test]
fn native_grid_has_1024_points() {
    for &(w, h) in &[(512u32, 512u32), (640, 480), (37, 1000)] {
        let img = Micrograph::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 256) as u8).unwrap();
        let set = generate_prompts(&img, &PromptConfig::native());
        assert_eq!(set.points.len(), 1024, "{w}x{h}");
        assert!(set.points.iter().all(|p| p.origin == PromptOrigin::Grid));
    }
}

#[test]
fn blank_multiphase_has_no_centroids() {
    let img = Micrograph::from_fn(128, 96, |_, _| 77).unwrap();
    let cfg = PromptConfig { mode: SegmentationMode::Multiphase, ..PromptConfig::default() };
    let set = generate_prompts(&img, &cfg);
    assert_eq!(set.count(PromptOrigin::Centroid), 0);
    assert!(set.count(PromptOrigin::Grid) > 0);
    assert!(set.presegmentation.warning.is_some());
}

proptest! {
    #[test]
    fn grid_count_and_monotonicity(k in 0usize..5000, w in 1u32..600, h in 1u32..600) {
        let cfg = PromptConfig::default();
        let s = grid_side(k, &cfg);
        prop_assert!((cfg.grid_min_side..=cfg.grid_max_side).contains(&s));
        prop_assert_eq!(adaptive_grid(w, h, k, &cfg).len(), (s * s) as usize);
        prop_assert!(grid_side(k + 1, &cfg) >= s);
        for p in adaptive_grid(w, h, k, &cfg) {
            prop_assert!(p.x < w && p.y < h);
        }
    }
}
