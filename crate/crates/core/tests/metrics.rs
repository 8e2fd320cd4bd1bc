mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{recount, rng};
use lrgcn_core::eval::{compute_metrics, MetricsReport};

fn binary(len: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..2, len)
}

fn pairs() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (0usize..200).prop_flat_map(|n| (binary(n), binary(n)))
}

fn fields(r: &MetricsReport) -> (usize, usize, usize, usize, [f64; 5]) {
    (r.tp, r.fp, r.fn_, r.tn, [r.precision, r.recall, r.f1_pos, r.f1_neg, r.macro_f1])
}

proptest! {
    #[test]
    fn matches_an_independent_recount((predicted, labels) in pairs()) {
        let report = compute_metrics(&predicted, &labels).unwrap();
        prop_assert_eq!(fields(&report), recount(&predicted, &labels));
        prop_assert_eq!(report.total(), labels.len());
    }

    #[test]
    fn metrics_lie_in_the_unit_interval((predicted, labels) in pairs()) {
        let r = compute_metrics(&predicted, &labels).unwrap();
        for v in [r.precision, r.recall, r.f1_pos, r.f1_neg, r.macro_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn swapping_classes_swaps_the_per_class_scores((predicted, labels) in pairs()) {
        let flip = |v: &[usize]| v.iter().map(|&x| 1 - x).collect::<Vec<_>>();
        let a = compute_metrics(&predicted, &labels).unwrap();
        let b = compute_metrics(&flip(&predicted), &flip(&labels)).unwrap();
        prop_assert_eq!((a.f1_pos, a.f1_neg), (b.f1_neg, b.f1_pos));
        prop_assert_eq!(a.macro_f1, b.macro_f1);
    }

    #[test]
    fn mismatched_lengths_are_rejected(a in binary(5), b in binary(6)) {
        prop_assert!(compute_metrics(&a, &b).is_err());
    }
}

#[test]
fn hand_derived_confusion() {
    let r = compute_metrics(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
    assert_eq!((r.tp, r.fp, r.fn_, r.tn), (1, 1, 1, 1));
    assert_eq!([r.precision, r.recall, r.f1_pos, r.f1_neg, r.macro_f1], [0.5; 5]);
}

#[test]
fn coin_flips_score_near_one_half() {
    let mut r = rng(2024);
    let n = 40_000;
    let labels: Vec<usize> = (0..n).map(|_| usize::from(r.random_bool(0.5))).collect();
    let guesses: Vec<usize> = (0..n).map(|_| usize::from(r.random_bool(0.5))).collect();
    let m = compute_metrics(&guesses, &labels).unwrap();
    assert!((m.macro_f1 - 0.5).abs() < 0.02, "{m:?}");
}
