use ess::evalkit::ConfusionMatrix;
use ess::image::LabelMap;
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn ratio(a: u64, b: u64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

/// IoU per class straight from the pixel sets.
fn brute_force_miou(gt: &[u8], pred: &[u8], classes: u8) -> Option<BigRational> {
    let ious: Vec<BigRational> = (0..classes)
        .filter_map(|k| {
            let inter = gt.iter().zip(pred).filter(|(g, p)| **g == k && **p == k).count() as u64;
            let union = gt.iter().zip(pred).filter(|(g, p)| **g == k || **p == k).count() as u64;
            (union > 0).then(|| ratio(inter, union))
        })
        .collect();
    if ious.is_empty() {
        return None;
    }
    let n = ious.len() as u64;
    Some(ious.into_iter().fold(ratio(0, 1), |a, b| a + b) / ratio(n, 1))
}

fn map(h: usize, w: usize, data: Vec<u8>) -> LabelMap {
    LabelMap { height: h, width: w, data }
}

fn label_pair() -> impl Strategy<Value = (usize, usize, u8, Vec<u8>, Vec<u8>)> {
    (1usize..12, 1usize..12, 2u8..8).prop_flat_map(|(h, w, c)| {
        (
            Just(h),
            Just(w),
            Just(c),
            prop::collection::vec(0..c, h * w),
            prop::collection::vec(0..c, h * w),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn miou_equals_brute_force((h, w, c, gt, pred) in label_pair()) {
        let mut cm = ConfusionMatrix::new(c as usize);
        cm.accumulate(&map(h, w, gt.clone()), &map(h, w, pred.clone())).unwrap();
        prop_assert_eq!(cm.miou_exact(), brute_force_miou(&gt, &pred, c));
        let correct = gt.iter().zip(&pred).filter(|(g, p)| g == p).count();
        prop_assert_eq!(cm.metrics().accuracy, correct as f64 / (h * w) as f64);
    }

    #[test]
    fn accumulation_is_additive_across_shards((h, w, c, gt, pred) in label_pair(), split in 0usize..144) {
        let split = split % (h * w + 1);
        let mut whole = ConfusionMatrix::new(c as usize);
        whole.accumulate(&map(1, h * w, gt.clone()), &map(1, h * w, pred.clone())).unwrap();
        let mut a = ConfusionMatrix::new(c as usize);
        let mut b = ConfusionMatrix::new(c as usize);
        a.accumulate(&map(1, split, gt[..split].to_vec()), &map(1, split, pred[..split].to_vec())).unwrap();
        b.accumulate(&map(1, h * w - split, gt[split..].to_vec()), &map(1, h * w - split, pred[split..].to_vec())).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        a.merge(&b).unwrap();
        prop_assert_eq!(&a, &whole);
        prop_assert_eq!(&ba, &whole);
    }

    #[test]
    fn metrics_survive_consistent_relabeling((h, w, c, gt, pred) in label_pair(), rot in 1u8..7) {
        let perm = |l: &u8| (l + rot) % c;
        let mut cm = ConfusionMatrix::new(c as usize);
        cm.accumulate(&map(h, w, gt.clone()), &map(h, w, pred.clone())).unwrap();
        let mut relabeled = ConfusionMatrix::new(c as usize);
        relabeled
            .accumulate(&map(h, w, gt.iter().map(perm).collect()), &map(h, w, pred.iter().map(perm).collect()))
            .unwrap();
        prop_assert_eq!(cm.miou_exact(), relabeled.miou_exact());
        prop_assert_eq!(cm.metrics().accuracy, relabeled.metrics().accuracy);
    }
}

#[test]
fn two_class_example_is_seven_twelfths() {
    let cm = ConfusionMatrix::from_rows(&[vec![2, 1], vec![0, 1]]).unwrap();
    assert_eq!(cm.miou_exact(), Some(ratio(7, 12)));
    assert_eq!(cm.metrics().miou, 7.0 / 12.0);
}

#[test]
fn absent_classes_are_excluded() {
    let mut cm = ConfusionMatrix::new(4);
    cm.accumulate(&map(1, 3, vec![0, 0, 1]), &map(1, 3, vec![0, 1, 1])).unwrap();
    let m = cm.metrics();
    assert_eq!(m.per_class_iou[2], None);
    assert_eq!(m.per_class_iou[3], None);
    assert_eq!(cm.miou_exact(), Some(ratio(1, 2)));
}

#[test]
fn out_of_range_labels_are_rejected() {
    let mut cm = ConfusionMatrix::new(2);
    assert!(cm.accumulate(&map(1, 1, vec![2]), &map(1, 1, vec![0])).is_err());
    assert!(cm.accumulate(&map(1, 1, vec![0]), &map(1, 2, vec![0, 0])).is_err());
}
