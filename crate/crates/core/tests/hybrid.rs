mod common;

use common::{literal, random_dataset};
use hybrid_icd::data::{BinaryDataset, GroupMap};
use hybrid_icd::hybrid::{
    accuracy_of, coverage, equal_opportunity, icd_of, statistical_parity, Prefix, Rule,
};
use hybrid_icd::rules::Condition;
use hybrid_icd::Bitset;
use proptest::prelude::*;

/// Dataset with `k` groups under attribute "A" and the given assignment.
fn with_groups(base: &BinaryDataset, k: usize, assignment: Vec<u32>) -> BinaryDataset {
    let names = (0..k).map(|g| format!("g{g}")).collect();
    let g = GroupMap::new("A".into(), names, assignment).unwrap();
    BinaryDataset::new(
        base.feature_names().to_vec(),
        base.features().to_vec(),
        base.labels().clone(),
        vec![g],
    )
    .unwrap()
}

fn rules_strategy(n_features: usize) -> impl Strategy<Value = Vec<(usize, bool, usize, bool, bool)>> {
    prop::collection::vec((0..n_features, any::<bool>(), 0..n_features, any::<bool>(), any::<bool>()), 0..5)
}

fn build_prefix(ds: &BinaryDataset, spec: &[(usize, bool, usize, bool, bool)]) -> Prefix {
    Prefix::new(
        spec.iter()
            .map(|&(f, v, g, w, q)| {
                let mut lits = vec![literal(ds, f, v)];
                if g != f {
                    lits.push(literal(ds, g, w));
                }
                Rule {
                    condition: Condition::new(lits),
                    consequent: q,
                }
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Transparency and first-match routing against a per-row scan.
    #[test]
    fn capture_matches_row_scan(seed in 0u64..1000, spec in rules_strategy(6)) {
        let ds = random_dataset(seed, 50, 6);
        let prefix = build_prefix(&ds, &spec);
        let cap = prefix.capture(&ds);
        let subset: Vec<usize> = (0..ds.n()).filter(|i| i % 3 != 1).collect();
        let mut hits = 0;
        for i in 0..ds.n() {
            let first = prefix.rules.iter().position(|r| r.condition.literals.iter().all(|l| ds.value(i, l.feature) == l.value));
            prop_assert_eq!(cap.get(i), first.is_some());
            if first.is_some() && subset.contains(&i) {
                hits += 1;
            }
        }
        prop_assert_eq!(coverage(&cap, &subset).unwrap(), hits as f64 / subset.len() as f64);
        let per_rule = prefix.captures(&ds);
        let mut union = Bitset::zeros(ds.n());
        for r in &per_rule.per_rule {
            prop_assert_eq!(union.count_and(r), 0);
            union.or_with(r);
        }
        prop_assert_eq!(union, per_rule.total);
    }

    #[test]
    fn icd_ignores_group_names_and_order(
        seed in 0u64..1000,
        k in 2usize..5,
        perm_seed in any::<u64>(),
        spec in rules_strategy(4),
    ) {
        let base = random_dataset(seed, 40, 4);
        let assignment: Vec<u32> = (0..40u64).map(|i| ((i * 7 + seed) % k as u64) as u32).collect();
        // relabel groups by a permutation of ids
        let mut perm: Vec<u32> = (0..k as u32).collect();
        let mut s = perm_seed;
        for i in (1..k).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let relabeled: Vec<u32> = assignment.iter().map(|&g| perm[g as usize]).collect();
        let a = with_groups(&base, k, assignment);
        let b = with_groups(&base, k, relabeled);
        let cap = build_prefix(&a, &spec).capture(&a);
        let subset: Vec<usize> = (0..40).collect();
        let x = icd_of(&cap, &a, &subset, "A").ok();
        prop_assert_eq!(x, icd_of(&cap, &b, &subset, "A").ok());
        if let Some(v) = x {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let mut reversed = subset.clone();
        reversed.reverse();
        prop_assert_eq!(x, icd_of(&cap, &a, &reversed, "A").ok());
    }

    /// Reordering rules with disjoint supports keeps the capture, hence ICD.
    #[test]
    fn icd_ignores_order_of_disjoint_rules(seed in 0u64..1000, f in 0usize..4, g in 0usize..4) {
        let ds = random_dataset(seed, 40, 4);
        prop_assume!(f != g);
        let r1 = Rule { condition: Condition::new(vec![literal(&ds, f, true)]), consequent: true };
        let r2 = Rule { condition: Condition::new(vec![literal(&ds, f, false), literal(&ds, g, true)]), consequent: false };
        let ab = Prefix::new(vec![r1.clone(), r2.clone()]).capture(&ds);
        let ba = Prefix::new(vec![r2, r1]).capture(&ds);
        let all: Vec<usize> = (0..ds.n()).collect();
        prop_assert_eq!(&ab, &ba);
        prop_assert_eq!(icd_of(&ab, &ds, &all, "G").ok(), icd_of(&ba, &ds, &all, "G").ok());
    }

    #[test]
    fn parity_metrics_ignore_subset_order(
        seed in 0u64..1000,
        preds in prop::collection::vec(any::<bool>(), 40),
        rotate in 0usize..40,
    ) {
        let ds = random_dataset(seed, 40, 3);
        let p = Bitset::from_bools(&preds);
        let subset: Vec<usize> = (0..40).filter(|i| i % 4 != 0).collect();
        let mut shuffled = subset.clone();
        shuffled.rotate_left(rotate % subset.len());
        shuffled.reverse();
        let sp = statistical_parity(&p, &ds, &subset, "G").ok();
        let eo = equal_opportunity(&p, &ds, &subset, "G").ok();
        prop_assert_eq!(sp, statistical_parity(&p, &ds, &shuffled, "G").ok());
        prop_assert_eq!(eo, equal_opportunity(&p, &ds, &shuffled, "G").ok());
        prop_assert_eq!(accuracy_of(&p, &ds, &subset).unwrap(), accuracy_of(&p, &ds, &shuffled).unwrap());
        for v in [sp, eo].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn degenerate_coverage_has_zero_icd(seed in 0u64..1000, full in any::<bool>()) {
        let ds = random_dataset(seed, 30, 2);
        let cap = if full { Bitset::ones(ds.n()) } else { Bitset::zeros(ds.n()) };
        let all: Vec<usize> = (0..ds.n()).collect();
        prop_assert_eq!(icd_of(&cap, &ds, &all, "G").unwrap(), 0.0);
    }
}
