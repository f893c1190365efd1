mod common;

use std::collections::BTreeSet;

use common::{literal, random_dataset, singleton_conditions};
use hybrid_icd::anneal::{anneal, AnnealConfig, AnnealMode, AnnealWeight};
use hybrid_icd::data::{BinaryDataset, GroupMap};
use hybrid_icd::rules::{Condition, RuleUniverse};
use hybrid_icd::Bitset;
use proptest::prelude::*;

/// Two identical feature columns, each a perfect positive rule for half the rows.
fn twins() -> (BinaryDataset, RuleUniverse) {
    let n = 40;
    let x = Bitset::from_fn(n, |i| i < 20);
    let labels = Bitset::from_fn(n, |i| i < 20 || i % 4 == 0);
    let g = GroupMap::new("G".into(), vec!["A".into(), "B".into()], (0..n as u32).map(|i| i % 2).collect()).unwrap();
    let ds = BinaryDataset::new(vec!["x".into(), "x_copy".into()], vec![x.clone(), x], labels, vec![g]).unwrap();
    let conds = vec![
        Condition::new(vec![literal(&ds, 0, true)]),
        Condition::new(vec![literal(&ds, 1, true)]),
    ];
    let u = RuleUniverse::from_conditions(&ds, conds);
    (ds, u)
}

#[test]
fn symmetric_optima_reached_across_seeds() {
    let (ds, u) = twins();
    // black box always predicts 0: right on uncaptured rows except every fourth
    let hc = Bitset::zeros(ds.n());
    let mut chosen = BTreeSet::new();
    for seed in 0..20 {
        let cfg = AnnealConfig {
            weight: AnnealWeight::Transparency(0.1),
            companion: 0.01,
            iterations: 200,
            seed,
            mode: AnnealMode::Set,
            ..Default::default()
        };
        let r = anneal(&ds, &u, &hc, &cfg).unwrap();
        assert_eq!(r.prefix.len(), 1, "seed {seed}");
        chosen.insert(r.prefix.rules[0].condition.to_string());
    }
    assert_eq!(chosen.len(), 2, "{chosen:?}");
}

#[test]
fn zero_weights_do_no_worse_than_black_box() {
    let (ds, u) = twins();
    let hc = ds.labels().clone();
    let cfg = AnnealConfig {
        weight: AnnealWeight::Sparsity(0.0),
        companion: 0.0,
        ..Default::default()
    };
    let r = anneal(&ds, &u, &hc, &cfg).unwrap();
    assert_eq!(r.objective, 0.0);
}

fn objective_of_empty(ds: &BinaryDataset, hc: &Bitset, cfg: &AnnealConfig) -> f64 {
    let (_, beta) = cfg.lambda_beta();
    let wrong = (0..ds.n()).filter(|&i| hc.get(i) != ds.labels().get(i)).count();
    wrong as f64 / ds.n() as f64 + beta
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// The returned state is never worse than the empty starting prefix.
    #[test]
    fn never_worse_than_start(
        seed in 0u64..500,
        anneal_seed in any::<u64>(),
        iterations in 1usize..300,
        list in any::<bool>(),
        w in 0.0f64..0.5,
    ) {
        let ds = random_dataset(seed, 50, 4);
        let u = RuleUniverse::from_conditions(&ds, singleton_conditions(&ds));
        let hc = Bitset::from_fn(ds.n(), |i| ds.value(i, 0) ^ ds.value(i, 2));
        let cfg = AnnealConfig {
            weight: AnnealWeight::Transparency(w),
            iterations,
            seed: anneal_seed,
            mode: if list { AnnealMode::List } else { AnnealMode::Set },
            ..Default::default()
        };
        let r = anneal(&ds, &u, &hc, &cfg).unwrap();
        prop_assert!(r.objective <= objective_of_empty(&ds, &hc, &cfg) + 1e-12);
        prop_assert!(r.prefix.len() <= cfg.max_rules);
        let again = anneal(&ds, &u, &hc, &cfg).unwrap();
        prop_assert_eq!(&again.prefix, &r.prefix);
        prop_assert_eq!(again.objective, r.objective);
        if !list {
            let ids: Vec<_> = r.prefix.rules.iter().map(|x| x.condition.clone()).collect();
            let mut sorted = ids.clone();
            sorted.sort_by_key(|c| u.antecedents.iter().position(|a| &a.condition == c));
            prop_assert_eq!(ids, sorted);
        }
    }
}
