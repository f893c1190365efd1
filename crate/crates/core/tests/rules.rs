use std::collections::BTreeMap;

use hybrid_icd::data::{BinaryDataset, GroupMap};
use hybrid_icd::rules::{mine_antecedents, universe_from_json, universe_to_json, MiningConfig};
use hybrid_icd::Bitset;
use proptest::prelude::*;

fn dataset(cols: &[Vec<bool>]) -> BinaryDataset {
    let n = cols[0].len();
    let g = GroupMap::new("G".into(), vec!["a".into(), "b".into()], (0..n).map(|i| (i % 2) as u32).collect()).unwrap();
    BinaryDataset::new(
        (0..cols.len()).map(|f| format!("f{f}")).collect(),
        cols.iter().map(|c| Bitset::from_bools(c)).collect(),
        Bitset::from_fn(n, |i| i % 3 == 0),
        vec![g],
    )
    .unwrap()
}

type Key = Vec<(usize, bool)>;

/// Every conjunction of at most two literals over distinct features, with
/// its support on `train`, kept when frequent.
fn brute_force(cols: &[Vec<bool>], train: &[usize], min_support: f64, negations: bool) -> BTreeMap<Key, usize> {
    let mut lits = Vec::new();
    for f in 0..cols.len() {
        lits.push((f, true));
        if negations {
            lits.push((f, false));
        }
    }
    let count = |conj: &[(usize, bool)]| train.iter().filter(|&&r| conj.iter().all(|&(f, v)| cols[f][r] == v)).count();
    let mut out = BTreeMap::new();
    for (i, &a) in lits.iter().enumerate() {
        let mut cands = vec![vec![a]];
        for &b in &lits[i + 1..] {
            if b.0 != a.0 {
                cands.push(vec![a, b]);
            }
        }
        for c in cands {
            let k = count(&c);
            if k > 0 && k as f64 / train.len() as f64 >= min_support {
                let mut key = c.clone();
                key.sort();
                out.insert(key, k);
            }
        }
    }
    out
}

fn columns() -> impl Strategy<Value = Vec<Vec<bool>>> {
    (1usize..=12, 4usize..40).prop_flat_map(|(f, n)| prop::collection::vec(prop::collection::vec(any::<bool>(), n), f))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn mining_matches_enumeration(
        cols in columns(),
        min_support in 0.05f64..0.6,
        negations in any::<bool>(),
        bootstrap in any::<bool>(),
    ) {
        let ds = dataset(&cols);
        let n = ds.n();
        let train: Vec<usize> = if bootstrap { (0..n).map(|i| (i * 7 + 3) % n).collect() } else { (0..n).collect() };
        let cfg = MiningConfig { min_support, max_card: 2, max_rules: 100_000, negations };
        let want = brute_force(&cols, &train, min_support, negations);
        match mine_antecedents(&ds, &train, &cfg) {
            Err(_) => prop_assert!(want.is_empty()),
            Ok(u) => {
                let got: BTreeMap<Key, usize> = u
                    .antecedents
                    .iter()
                    .map(|a| {
                        let mut k: Key = a.condition.literals.iter().map(|l| (l.feature, l.value)).collect();
                        k.sort();
                        (k, a.train_support)
                    })
                    .collect();
                prop_assert_eq!(got.len(), u.len(), "duplicate antecedents");
                prop_assert_eq!(&got, &want);
                for (i, a) in u.antecedents.iter().enumerate() {
                    prop_assert_eq!(a.id, i);
                    prop_assert_eq!(&a.support, &a.condition.eval(&ds));
                    prop_assert_eq!(a.support_of(&train), a.train_support);
                    prop_assert!(a.train_support as f64 / train.len() as f64 >= min_support);
                    if i > 0 {
                        prop_assert!(u.antecedents[i - 1].train_support >= a.train_support);
                    }
                }
                let again = mine_antecedents(&ds, &train, &cfg).unwrap();
                prop_assert_eq!(&again, &u);
                let back = universe_from_json(&ds, &universe_to_json(&u)).unwrap();
                prop_assert_eq!(back, u);
            }
        }
    }

    #[test]
    fn truncation_keeps_a_support_prefix(cols in columns(), max_rules in 1usize..10) {
        let ds = dataset(&cols);
        let train: Vec<usize> = (0..ds.n()).collect();
        let full = MiningConfig { min_support: 0.1, max_rules: 100_000, ..Default::default() };
        let Ok(all) = mine_antecedents(&ds, &train, &full) else { return Ok(()) };
        let cut = mine_antecedents(&ds, &train, &MiningConfig { max_rules, ..full }).unwrap();
        prop_assert_eq!(cut.len(), max_rules.min(all.len()));
        for (a, b) in cut.antecedents.iter().zip(&all.antecedents) {
            prop_assert_eq!(&a.condition, &b.condition);
        }
    }
}
