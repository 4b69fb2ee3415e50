use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use trilemma::data::*;
use trilemma::rng;

fn blobs(classes: usize, per_class: usize, seed: u64) -> Dataset {
    DatasetSpec {
        num_classes: classes,
        samples_per_class: per_class,
        val_per_class: 1,
        test_per_class: 1,
        feature_dim: 5,
        domain_channels: 2,
        seed,
        ..DatasetSpec::default()
    }
    .generate()
    .unwrap()
    .train
}

fn fractions() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..5).prop_filter_map("all zero", |w| {
        let total: f64 = w.iter().sum();
        (total > 1e-3).then(|| w.iter().map(|x| x / total).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_stratified_partition(
        classes in 2usize..5,
        per_class in 1usize..40,
        fr in fractions(),
        seed in any::<u64>(),
    ) {
        let ds = blobs(classes, per_class, seed % 1000);
        let parts = split(&ds, &fr, &mut rng::stream(seed, "split")).unwrap();
        prop_assert_eq!(parts.len(), fr.len());

        let mut seen = HashSet::new();
        for p in &parts {
            for s in &p.samples {
                prop_assert!(seen.insert(s.id), "id {} in two parts", s.id);
            }
            // Original order is kept within each part.
            let pos: Vec<usize> = p.samples.iter()
                .map(|s| ds.samples.iter().position(|o| o.id == s.id).unwrap())
                .collect();
            prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        }
        prop_assert_eq!(seen.len(), ds.len());

        for (p, f) in parts.iter().zip(&fr) {
            let mut per: BTreeMap<usize, usize> = BTreeMap::new();
            for s in &p.samples {
                *per.entry(s.label).or_default() += 1;
            }
            for c in 0..classes {
                let got = per.get(&c).copied().unwrap_or(0) as f64;
                prop_assert!((got - f * per_class as f64).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn split_replays(seed in any::<u64>()) {
        let ds = blobs(3, 20, 1);
        let a = split(&ds, &[0.5, 0.2, 0.3], &mut rng::stream(seed, "split")).unwrap();
        let b = split(&ds, &[0.5, 0.2, 0.3], &mut rng::stream(seed, "split")).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn skew_sets_the_majority_share(skew in 0.5f64..=1.0, per_class in 1usize..60) {
        let spec = DatasetSpec {
            num_classes: 4,
            samples_per_class: per_class,
            val_per_class: 2,
            test_per_class: 2,
            feature_dim: 6,
            domain_channels: 2,
            skew,
            ..DatasetSpec::default()
        };
        let splits = spec.generate().unwrap();
        let majority = (skew * per_class as f64).round() as usize;
        for c in 0..4 {
            let color = splits.train.samples.iter().filter(|s| s.label == c && s.domain == Domain::Color).count();
            let expected = if c < 2 { majority } else { per_class - majority };
            prop_assert_eq!(color, expected);
        }
        prop_assert_eq!(splits.test_color.len(), splits.test_gray.len());
    }

    #[test]
    fn csv_round_trips(seed in 0u64..500, attrs in any::<bool>()) {
        let ds = if attrs {
            AttributeSpec { num_samples: 40, num_attributes: 3, seed, ..AttributeSpec::default() }.generate().unwrap()
        } else {
            blobs(3, 7, seed)
        };
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.samples, ds.samples);
    }
}

#[test]
fn bad_fractions_are_config_errors() {
    let ds = blobs(2, 10, 0);
    let mut r = rng::stream(0, "split");
    assert!(matches!(split(&ds, &[0.5, 0.4], &mut r), Err(trilemma::Error::Config(_))));
    assert!(matches!(split(&ds, &[1.5, -0.5], &mut r), Err(trilemma::Error::Config(_))));
    assert!(split(&ds, &[], &mut r).is_err());
}
