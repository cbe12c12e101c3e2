use proptest::prelude::*;
use synthcolon::image::Mask;
use synthcolon::metrics::{confusion_counts, dice, iou};

fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
    (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        (prop::collection::vec(any::<bool>(), w * h), prop::collection::vec(any::<bool>(), w * h))
            .prop_map(move |(a, b)| (Mask { width: w, height: h, data: a }, Mask { width: w, height: h, data: b }))
    })
}

proptest! {
    #[test]
    fn metrics_are_symmetric((a, b) in mask_pair()) {
        let ab = confusion_counts(&a, &b).unwrap();
        let ba = confusion_counts(&b, &a).unwrap();
        prop_assert_eq!(dice(&ab), dice(&ba));
        prop_assert_eq!(iou(&ab), iou(&ba));
        prop_assert_eq!(ab.total(), (a.width * a.height) as u64);
    }

    #[test]
    fn dice_dominates_iou((a, b) in mask_pair()) {
        let c = confusion_counts(&a, &b).unwrap();
        let (d, j) = (dice(&c), iou(&c));
        prop_assert!(d >= j);
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
        if d == j {
            prop_assert!(d == 0.0 || d == 1.0);
        }
    }
}
