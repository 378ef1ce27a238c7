use matseg_core::classical::{connected_components, Connectivity};
use matseg_core::postproc::{
    compose_phase_mask, compute_region_stats, label_to_boundary, prune_spurs, screen_regions, summarize, Bounds, PhaseSelection,
    ScreenRule,
};
use matseg_core::{BinaryMask, LabelMap, MaskOrigin, Micrograph, ScoredMask};
use matseg_synth::blob_mask;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stats_partition_areas(seed in any::<u64>(), w in 1u32..50, h in 1u32..50, k in 1u32..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lm = LabelMap::from_fn(w, h, |_, _| rng.gen_range(0..=k));
        let img = Micrograph::from_fn(w, h, |_, _| rng.gen()).unwrap();
        let stats = compute_region_stats(&lm, &img, Some(0.5)).unwrap();
        let labelled = lm.labels().iter().filter(|&&l| l != 0).count();
        prop_assert_eq!(stats.iter().map(|s| s.area_px).sum::<usize>(), labelled);
        for s in &stats {
            prop_assert!(s.area_px >= 1);
            prop_assert!(s.circularity > 0.0 && s.circularity <= 1.1);
            prop_assert!(s.aspect_ratio >= 1.0);
            prop_assert_eq!(s.area_um2, Some(s.area_px as f64 * 0.25));
        }
        let summary = summarize(&stats, labelled);
        if labelled > 0 {
            let total: f64 = summary.area_fraction.values().sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert_eq!(summary.histogram.iter().sum::<u64>() as usize, stats.len());
        }
    }

    #[test]
    fn boundary_empty_iff_uniform(seed in any::<u64>(), w in 1u32..30, h in 1u32..30, k in 0u32..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lm = LabelMap::from_fn(w, h, |_, _| rng.gen_range(0..=k));
        let uniform = lm.labels().iter().all(|&l| l == lm.labels()[0]);
        prop_assert_eq!(label_to_boundary(&lm).is_empty(), uniform);
    }

    #[test]
    fn phase_union_and_screen_partition(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masks: Vec<ScoredMask> = (0..n)
            .map(|_| ScoredMask::new(blob_mask(&mut rng, 40, 30), 0.9, MaskOrigin::default()).unwrap())
            .collect();
        let img = Micrograph::from_fn(40, 30, |_, _| rng.gen()).unwrap();
        let all = compose_phase_mask(&masks, PhaseSelection::All).unwrap();
        let mut brute = BinaryMask::new(40, 30);
        for m in &masks {
            prop_assert!(all.area() >= m.area());
            for i in m.mask.iter_indices() {
                brute.insert_index(i);
            }
        }
        prop_assert_eq!(all, brute);
        let rules = vec![
            ScreenRule { area_px: Bounds { min: Some(200.0), max: None }, ..ScreenRule::new("large") },
            ScreenRule { aspect_ratio: Bounds { min: Some(2.0), max: None }, ..ScreenRule::new("elongated") },
        ];
        let groups = screen_regions(&masks, &img, &rules).unwrap();
        let mut seen: Vec<usize> = groups.values().flatten().copied().collect();
        seen.sort();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn pruning_never_adds_loops(seed in any::<u64>(), len in 2u32..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // random rectangles' outlines plus random spurs
        let mut sk = BinaryMask::new(48, 48);
        for _ in 0..3 {
            let (x0, y0) = (rng.gen_range(1..30), rng.gen_range(1..30));
            let (x1, y1) = (x0 + rng.gen_range(4..16), y0 + rng.gen_range(4..16));
            for x in x0..=x1 { sk.set(x, y0, true); sk.set(x, y1, true); }
            for y in y0..=y1 { sk.set(x0, y, true); sk.set(x1, y, true); }
            let sx = rng.gen_range(x0..=x1);
            for d in 1..rng.gen_range(1..10) {
                if y1 + d < 48 { sk.set(sx, y1 + d, true); }
            }
        }
        let pruned = prune_spurs(&sk, len);
        prop_assert!(pruned.is_subset_of(&sk));
        let holes = |m: &BinaryMask| connected_components(&m.complement(), Connectivity::Four).1.len();
        prop_assert!(holes(&pruned) <= holes(&sk));
        prop_assert_eq!(holes(&pruned), holes(&sk), "loops survive pruning");
    }
}
