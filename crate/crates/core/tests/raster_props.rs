use matseg_core::{BinaryMask, CropBox, LabelMap, Micrograph};
use proptest::prelude::*;

fn mask() -> impl Strategy<Value = BinaryMask> {
    (1u32..70, 1u32..20).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<bool>(), (w * h) as usize).prop_map(move |b| BinaryMask::from_bools(w, h, &b).unwrap())
    })
}

proptest! {
    #[test]
    fn rle_round_trip(m in mask()) {
        let runs = m.to_rle();
        prop_assert_eq!(runs.iter().map(|&r| r as usize).sum::<usize>(), m.len());
        prop_assert_eq!(BinaryMask::from_rle(m.width(), m.height(), &runs).unwrap(), m.clone());
        prop_assert!(m.area() <= m.len());
    }

    #[test]
    fn complement_and_set_ops(m in mask()) {
        let c = m.complement();
        prop_assert_eq!(c.area() + m.area(), m.len());
        prop_assert_eq!(c.intersection_count(&m), 0);
        let mut u = m.clone();
        u.union_with(&c);
        prop_assert_eq!(u.area(), m.len());
        prop_assert_eq!(c.complement(), m);
    }

    #[test]
    fn grayscale_idempotent(w in 1u32..16, h in 1u32..16, pix in proptest::collection::vec(any::<u8>(), 768)) {
        let n = (w * h * 3) as usize;
        let img = Micrograph::new(w, h, 3, pix[..n].to_vec()).unwrap();
        let g = img.to_grayscale();
        prop_assert_eq!(g.channels(), 1);
        prop_assert_eq!(g.to_grayscale(), g);
    }

    #[test]
    fn crop_then_place(m in mask(), a in 0u32..70, b in 0u32..20, c in 1u32..70, d in 1u32..20) {
        let (w, h) = (m.width(), m.height());
        let (x0, y0) = (a % w, b % h);
        let (x1, y1) = ((x0 + c).min(w), (y0 + d).min(h));
        let crop = CropBox::new(x0, y0, x1, y1, 0, w, h).unwrap();
        let lm = LabelMap::from_fn(w, h, |x, y| m.get(x, y) as u32);
        let inner = lm.crop(&crop).foreground();
        let back = inner.place_into(&crop, w, h);
        prop_assert!(back.is_subset_of(&m));
        let mut expect = BinaryMask::new(w, h);
        for (x, y) in m.iter_points() {
            if crop.contains(x, y) {
                expect.set(x, y, true);
            }
        }
        prop_assert_eq!(back, expect);
    }
}
