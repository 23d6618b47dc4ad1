use std::collections::BTreeSet;

use proptest::prelude::*;

use sabr_core::bias::{mean_curve, select_best};
use sabr_core::checkpoint::Checkpoint;
use sabr_core::data::{subsample_unlabeled, synth_dataset, LabelId, Role, SynthConfig};
use sabr_core::eval::{harmonic_mean, mca, ClassAccuracy, EvalReport, Setting};
use sabr_core::gan::{transfer_penalty, GanConfig, Generator, TransferNorm};
use sabr_core::{Matrix, SeededRng};

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1e6..1e6f64, r * c)
            .prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

proptest! {
    #[test]
    fn harmonic_mean_is_bounded_by_min_and_arithmetic_mean(a in unit(), b in unit()) {
        let h = harmonic_mean(a, b).unwrap();
        prop_assert!(h <= 2.0 * a.min(b) + 1e-15);
        prop_assert!(h <= (a + b) / 2.0 + 1e-15);
        prop_assert!(h >= a.min(b) - 1e-15);
        prop_assert_eq!(h, harmonic_mean(b, a).unwrap());
    }

    #[test]
    fn harmonic_mean_of_equal_inputs_is_that_input(a in unit()) {
        prop_assert_eq!(harmonic_mean(a, a).unwrap(), a);
    }

    #[test]
    fn harmonic_mean_equals_arithmetic_mean_only_when_inputs_agree(a in unit(), b in unit()) {
        prop_assume!((a - b).abs() > 1e-6);
        prop_assert!(harmonic_mean(a, b).unwrap() < (a + b) / 2.0);
    }

    /// Repeating every instance of one class the same number of times leaves
    /// that class's accuracy, and hence MCA, unchanged.
    #[test]
    fn mca_ignores_uniform_duplication_within_a_class(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        class in 0usize..4,
        times in 1usize..5,
    ) {
        let classes: Vec<LabelId> = (0..4).map(LabelId).collect();
        let mut truths: Vec<LabelId> = pairs.iter().map(|&(t, _)| LabelId(t)).collect();
        let mut preds: Vec<LabelId> = pairs.iter().map(|&(_, p)| LabelId(p)).collect();
        // every class needs a test instance
        for &c in &classes {
            truths.push(c);
            preds.push(c);
        }
        let before = mca(&preds, &truths, &classes).unwrap();
        let (mut p2, mut t2) = (preds.clone(), truths.clone());
        for (p, t) in preds.iter().zip(&truths) {
            if t.0 == class {
                for _ in 0..times {
                    p2.push(*p);
                    t2.push(*t);
                }
            }
        }
        let after = mca(&p2, &t2, &classes).unwrap();
        prop_assert!((before - after).abs() < 1e-12, "{before} vs {after}");
    }

    #[test]
    fn select_best_returns_the_earliest_maximum(curve in prop::collection::vec(prop::sample::select(vec![0.1, 0.5, 0.5, 0.9]), 1..20)) {
        let best = select_best(&curve).unwrap();
        let max = curve.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(curve[best], max);
        prop_assert!(curve[..best].iter().all(|&v| v < max));
        prop_assert_eq!(best, select_best(&curve).unwrap());
    }

    #[test]
    fn mean_curve_is_the_columnwise_mean(table in prop::collection::vec(prop::collection::vec(unit(), 5), 1..6)) {
        let curve = mean_curve(&table).unwrap();
        prop_assert_eq!(curve.len(), 5);
        for (c, v) in curve.iter().enumerate() {
            let lo = table.iter().map(|r| r[c]).fold(f64::MAX, f64::min);
            let hi = table.iter().map(|r| r[c]).fold(f64::MIN, f64::max);
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(
        blobs in prop::collection::vec(matrix(5, 5), 0..4),
        meta in prop::collection::btree_map("[a-z_]{1,8}", "[ -~]{0,12}", 0..4),
    ) {
        let mut ck = Checkpoint::new();
        for (k, v) in &meta {
            ck.set_meta(k.clone(), v);
        }
        for (i, m) in blobs.iter().enumerate() {
            ck.push(format!("b{i}"), m.clone());
        }
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        for (i, m) in blobs.iter().enumerate() {
            let got = back.require(&format!("b{i}")).unwrap();
            prop_assert_eq!(got.shape(), m.shape());
            prop_assert!(got.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        for (k, v) in &meta {
            prop_assert_eq!(back.meta(k), Some(v.as_str()));
        }
    }

    #[test]
    fn reports_round_trip_through_json(accs in prop::collection::vec((unit(), 1usize..50), 1..6), mca_s in unit()) {
        let per_class: Vec<ClassAccuracy> = accs
            .iter()
            .enumerate()
            .map(|(i, &(acc, count))| ClassAccuracy {
                label: format!("class_{i}"),
                id: LabelId(i),
                seen: i % 2 == 0,
                count,
                correct: (acc * count as f64).round() as usize,
                accuracy: acc,
            })
            .collect();
        let mca_u = accs.iter().map(|a| a.0).sum::<f64>() / accs.len() as f64;
        let report = EvalReport {
            setting: Setting::Gzsl,
            per_class,
            mca_s: Some(mca_s),
            mca_u,
            h: Some(harmonic_mean(mca_s, mca_u).unwrap()),
        };
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, report);
    }
}

fn generator(seed: u64) -> Generator {
    let cfg = GanConfig {
        generator_hidden: 6,
        ..GanConfig::desk()
    };
    Generator::new(3, 3, 4, &cfg, &mut SeededRng::new(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn transfer_penalty_is_symmetric_and_zero_on_itself(a in 0u64..1000, b in 0u64..1000) {
        let (ga, gb) = (generator(a), generator(b));
        for norm in [TransferNorm::L2, TransferNorm::SquaredL2] {
            let ab = transfer_penalty(&ga, &gb, norm).unwrap();
            let ba = transfer_penalty(&gb, &ga, norm).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(transfer_penalty(&ga, &ga, norm).unwrap(), 0.0);
        }
    }

    /// With one seed, a larger fraction keeps a superset of unlabeled rows and
    /// never touches any other row.
    #[test]
    fn subsampling_is_monotone_in_the_fraction(f1 in 0.01..=1.0f64, f2 in 0.01..=1.0f64, seed in 0u64..100) {
        let ds = synth_dataset(&SynthConfig {
            n_classes: 5,
            n_seen: 3,
            per_class: 12,
            test_per_class: 2,
            d_feat: 4,
            d_attr: 3,
            ..Default::default()
        })
        .unwrap();
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let kept = |f: f64| -> (BTreeSet<usize>, BTreeSet<usize>) {
            let sub = subsample_unlabeled(&ds, f, seed).unwrap();
            let mut unl = BTreeSet::new();
            let mut other = BTreeSet::new();
            for (i, &o) in sub.origin().iter().enumerate() {
                if sub.roles()[i] == Role::UnseenUnlabeled { unl.insert(o) } else { other.insert(o) };
            }
            (unl, other)
        };
        let (small, other_lo) = kept(lo);
        let (large, other_hi) = kept(hi);
        prop_assert!(small.is_subset(&large));
        let n_u = ds.count(Role::UnseenUnlabeled) as f64;
        prop_assert_eq!(large.len(), ((hi * n_u) - 1e-9).ceil() as usize);
        prop_assert_eq!(other_lo.len(), ds.len() - ds.count(Role::UnseenUnlabeled));
        prop_assert_eq!(other_lo, other_hi);
    }
}
