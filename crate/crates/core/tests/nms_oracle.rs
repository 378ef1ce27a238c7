use matseg_core::pipeline::{mask_iou, nms, nms_indices};
use matseg_core::{BinaryMask, MaskOrigin, ScoredMask};
use matseg_synth::{blob_mask, noise_mask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn full_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let inter = a.iter_indices().filter(|&i| b.contains_index(i)).count();
    let uni = a.area() + b.area() - inter;
    if uni == 0 {
        1.0
    } else {
        inter as f64 / uni as f64
    }
}

/// O(n^2) greedy hard NMS written from the definition.
fn greedy_oracle(masks: &[ScoredMask], thr: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&i, &j| {
        masks[j]
            .score()
            .partial_cmp(&masks[i].score())
            .unwrap()
            .then(masks[j].area().cmp(&masks[i].area()))
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| full_iou(&masks[i].mask, &masks[k].mask) <= thr) {
            kept.push(i);
        }
    }
    kept.sort();
    kept
}

fn random_set(seed: u64) -> (Vec<ScoredMask>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.gen_range(8..48), rng.gen_range(8..48));
    let n = rng.gen_range(1..40);
    let mut out: Vec<ScoredMask> = Vec::new();
    for i in 0..n {
        let mask = match rng.gen_range(0..4) {
            0 => noise_mask(&mut rng, w, h, 0.3),
            // duplicates and near-duplicates of earlier masks
            1 if !out.is_empty() => {
                let k: usize = rng.gen_range(0..out.len());
                let mut m: BinaryMask = out[k].mask.clone();
                if rng.gen_bool(0.5) {
                    m.set(rng.gen_range(0..w), rng.gen_range(0..h), true);
                }
                m
            }
            _ => blob_mask(&mut rng, w, h),
        };
        // coarse scores so ties happen
        let score = rng.gen_range(0..6) as f32 / 5.0;
        out.push(ScoredMask::new(mask, score, MaskOrigin { crop: i, prompt: None }).unwrap());
    }
    let thr = [0.3, 0.5, 0.7, 1.0][rng.gen_range(0..4)];
    (out, thr)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nms_matches_greedy_oracle(seed in any::<u64>()) {
        let (masks, thr) = random_set(seed);
        let kept = nms_indices(&masks, thr);
        prop_assert_eq!(&kept, &greedy_oracle(&masks, thr));
        for (a, &i) in kept.iter().enumerate() {
            for &j in &kept[a + 1..] {
                prop_assert!(full_iou(&masks[i].mask, &masks[j].mask) <= thr);
            }
        }
        let once = nms(masks.clone(), thr);
        let expected: Vec<ScoredMask> = kept.iter().map(|&i| masks[i].clone()).collect();
        prop_assert_eq!(&once, &expected);
        prop_assert_eq!(nms(once.clone(), thr), once);
    }

    #[test]
    fn bbox_iou_equals_full_iou(seed in any::<u64>()) {
        let (masks, _) = random_set(seed);
        for a in &masks {
            for b in masks.iter().take(6) {
                prop_assert_eq!(mask_iou(a, b), full_iou(&a.mask, &b.mask));
            }
        }
    }
}
