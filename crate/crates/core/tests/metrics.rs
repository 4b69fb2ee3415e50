mod common;

use common::oracles::brute_force_auc;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trilemma::metrics::*;

proptest! {
    #[test]
    fn auc_matches_pair_counting(
        members in prop::collection::vec(0u8..6, 1..40),
        nonmembers in prop::collection::vec(0u8..6, 1..40),
    ) {
        // Few distinct values so ties are common.
        let m: Vec<f64> = members.iter().map(|&v| v as f64 / 5.0).collect();
        let n: Vec<f64> = nonmembers.iter().map(|&v| v as f64 / 5.0).collect();
        let fast = auc(&m, &n).unwrap();
        prop_assert!((fast - brute_force_auc(&m, &n)).abs() <= 1e-12);
    }

    #[test]
    fn roc_endpoints_and_monotone(
        m in prop::collection::vec(0.0f64..1.0, 1..30),
        n in prop::collection::vec(0.0f64..1.0, 1..30),
    ) {
        let roc = roc_curve(&m, &n);
        prop_assert_eq!(roc.first().copied(), Some((0.0, 0.0)));
        prop_assert_eq!(roc.last().copied(), Some((1.0, 1.0)));
        prop_assert!(roc.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    }

    #[test]
    fn harmonic_score_is_bounded(acc in 0.0f64..=1.0, a in 0.0f64..=1.0, bias in 0.0f64..=0.5) {
        let hs = harmonic_score(acc, a, bias).unwrap();
        prop_assert!((0.0..=1.0).contains(&hs.value));
    }
}

#[test]
fn negation_flips_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let nm = rng.gen_range(1..50);
        let nn = rng.gen_range(1..50);
        let m: Vec<f64> = (0..nm).map(|_| (rng.gen_range(0..20) as f64) * 0.05).collect();
        let n: Vec<f64> = (0..nn).map(|_| (rng.gen_range(0..20) as f64) * 0.05).collect();
        let a = auc(&m, &n).unwrap();
        let neg_m: Vec<f64> = m.iter().map(|v| -v).collect();
        let neg_n: Vec<f64> = n.iter().map(|v| -v).collect();
        let b = auc(&neg_m, &neg_n).unwrap();
        assert!((a + b - 1.0).abs() <= 1e-12, "{a} + {b}");
    }
}

#[test]
fn auc_rejects_empty_and_nan() {
    assert!(auc(&[], &[0.5]).is_err());
    assert!(auc(&[0.5], &[]).is_err());
    assert!(auc(&[f64::NAN], &[0.5]).is_err());
}

#[test]
fn report_csv_has_fixed_columns() {
    let mut buf = Vec::new();
    EvaluationReport::write_csv(&[], &mut buf).unwrap();
    let header = String::from_utf8(buf).unwrap();
    for col in ["acc_color", "acc_gray", "auc_max", "auc_threshold", "auc_entropy", "auc_shadow_mlp", "auc_shadow_rf", "bias", "hs", "ggap"] {
        assert!(header.trim_end().split(',').any(|c| c == col), "missing {col}");
    }
}
