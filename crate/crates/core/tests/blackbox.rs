mod common;

use common::random_dataset;
use hybrid_icd::blackbox::{agreement, train_forest, BlackBox, Fingerprint, Forest, ForestConfig};
use hybrid_icd::search::incons;
use hybrid_icd::Bitset;
use proptest::prelude::*;

fn small_forest(seed: u64) -> ForestConfig {
    ForestConfig {
        n_trees: 7,
        seed,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn training_is_a_pure_function(seed in 0u64..500, forest_seed in any::<u64>(), dup in 0usize..20) {
        let ds = random_dataset(seed, 60, 5);
        let mut train: Vec<usize> = (0..48).collect();
        train.extend(0..dup);
        let cfg = small_forest(forest_seed);
        let a = train_forest(&ds, &train, &cfg).unwrap();
        let b = train_forest(&ds, &train, &cfg).unwrap();
        prop_assert_eq!(a.fingerprint(&ds, &train), b.fingerprint(&ds, &train));
        prop_assert_eq!(&a, &b);
        if let BlackBox::Forest(f) = &a {
            let back = Forest::from_json(&f.to_json()).unwrap();
            prop_assert_eq!(&back, f);
        }
    }

    /// No predictor beats the equivalent-points floor on its training rows.
    #[test]
    fn training_error_respects_incons(seed in 0u64..500, forest_seed in any::<u64>()) {
        let ds = random_dataset(seed, 80, 3);
        let train: Vec<usize> = (0..ds.n()).collect();
        let bb = train_forest(&ds, &train, &small_forest(forest_seed)).unwrap();
        let wrong = bb.predict_all(&ds).count_ones() + ds.labels().count_ones()
            - 2 * bb.predict_all(&ds).count_and(ds.labels());
        prop_assert!(wrong >= incons(&ds, &Bitset::ones(ds.n())));
    }

    #[test]
    fn agreement_is_symmetric(a in prop::collection::vec(any::<bool>(), 0..200), flips in prop::collection::vec(any::<bool>(), 200)) {
        let b: Vec<bool> = a.iter().zip(&flips).map(|(x, f)| x ^ f).collect();
        let (fa, fb) = (Fingerprint(Bitset::from_bools(&a)), Fingerprint(Bitset::from_bools(&b)));
        let ab = agreement(&fa, &fb).unwrap();
        prop_assert_eq!(ab, agreement(&fb, &fa).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab == 1.0, a == b);
        if !a.is_empty() {
            let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
            prop_assert_eq!(ab, same as f64 / a.len() as f64);
        }
    }
}

#[test]
fn agreement_rejects_length_mismatch() {
    let a = Fingerprint(Bitset::zeros(3));
    let b = Fingerprint(Bitset::zeros(4));
    assert!(agreement(&a, &b).is_err());
}
