#![allow(dead_code)]

pub mod oracle;

use hybrid_icd::data::{BinaryDataset, GroupMap};
use hybrid_icd::rules::{Condition, Literal};
use hybrid_icd::Bitset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random binary dataset with one two-group attribute "G". Feature 0 leans
/// towards group A and the label leans on features 0 and 1.
pub fn random_dataset(seed: u64, n: usize, n_features: usize) -> BinaryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
    let mut cols = vec![vec![false; n]; n_features];
    let mut labels = vec![false; n];
    for i in 0..n {
        for (f, col) in cols.iter_mut().enumerate() {
            let p = if f == 0 && groups[i] == 0 { 0.7 } else { 0.4 };
            col[i] = rng.gen_bool(p);
        }
        let score = cols[0][i] as u8 + cols[1 % n_features][i] as u8;
        labels[i] = rng.gen_bool(0.2 + 0.3 * score as f64);
    }
    let names = (0..n_features).map(|f| format!("f{f}")).collect();
    let g = GroupMap::new("G".into(), vec!["A".into(), "B".into()], groups).unwrap();
    BinaryDataset::new(
        names,
        cols.iter().map(|c| Bitset::from_bools(c)).collect(),
        Bitset::from_bools(&labels),
        vec![g],
    )
    .unwrap()
}

pub fn literal(ds: &BinaryDataset, f: usize, value: bool) -> Literal {
    Literal {
        feature: f,
        name: ds.feature_names()[f].clone(),
        value,
    }
}

/// Every single literal, positive and negated.
pub fn singleton_conditions(ds: &BinaryDataset) -> Vec<Condition> {
    (0..ds.n_features())
        .flat_map(|f| [true, false].map(|v| Condition::new(vec![literal(ds, f, v)])))
        .collect()
}
