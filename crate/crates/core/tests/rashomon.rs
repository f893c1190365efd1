use hybrid_icd::blackbox::{BlackBox, ForestConfig};
use hybrid_icd::data::{split, BinaryDataset, DatasetManifest};
use hybrid_icd::hybrid::{Prefix, Rule};
use hybrid_icd::rashomon::{
    assign_bins, bin_metric_distribution, build, dedup, filter_epsilon, growth_curve, hybrid_grid, ica, icf,
    read_collection, write_collection, BuildConfig, LearnerSpec, Metric, RashomonCollection, N_BINS,
};
use hybrid_icd::rules::{mine_antecedents, MiningConfig, RuleUniverse};
use hybrid_icd::search::SearchConfig;
use hybrid_icd::synth::write_synthetic;
use hybrid_icd::Bitset;
use proptest::prelude::*;

fn setup(n: usize) -> (BinaryDataset, hybrid_icd::data::SplitSpec, RuleUniverse) {
    let dir = tempfile::tempdir().unwrap();
    let path = write_synthetic(dir.path(), "syn", n, 11).unwrap();
    let ds = DatasetManifest::load(&path).unwrap().load_dataset().unwrap();
    let sp = split(&ds, 0).unwrap();
    let u = mine_antecedents(&ds, &sp.train_indices, &MiningConfig::default()).unwrap();
    (ds, sp, u)
}

fn search_cfg() -> SearchConfig {
    SearchConfig {
        max_prefix_len: 3,
        time_limit: None,
        memory_limit: None,
        node_limit: Some(2000),
        ..Default::default()
    }
}

fn small_build(n_bootstrap: usize) -> BuildConfig {
    BuildConfig {
        n_bootstrap,
        base_seed: 5,
        forest: ForestConfig { n_trees: 10, ..Default::default() },
        workers: 2,
    }
}

fn collection() -> (BinaryDataset, RashomonCollection) {
    let (ds, sp, u) = setup(200);
    let specs: Vec<LearnerSpec> = hybrid_grid(false, &search_cfg()).into_iter().step_by(3).collect();
    let c = build(&ds, "syn", "hybrid_post", &sp, &u, &specs, &small_build(4)).unwrap();
    (ds, c)
}

#[test]
fn model_counts() {
    let (ds, sp, u) = setup(200);
    let one = vec![LearnerSpec::HybridPre(search_cfg())];
    let c = build(&ds, "syn", "x", &sp, &u, &one, &small_build(0)).unwrap();
    assert_eq!(c.members.len(), 1);
    assert_eq!(c.members[0].model.provenance.run, 0);
    assert_eq!(c.members[0].model.provenance.bootstrap_seed, None);
    let two = vec![LearnerSpec::HybridPre(search_cfg()), LearnerSpec::HybridPost(search_cfg())];
    let c = build(&ds, "syn", "x", &sp, &u, &two, &small_build(3)).unwrap();
    assert!(c.members.len() + c.failures.len() == 8);
    assert!(c.members.len() <= 8);
}

#[test]
fn build_is_deterministic_and_round_trips() {
    let (ds, a) = collection();
    let (_, b) = collection();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    write_collection(dir.path(), &a).unwrap();
    let back = read_collection(dir.path(), &ds).unwrap();
    assert_eq!(back, a);
}

#[test]
fn dedup_rules() {
    let (ds, c) = collection();
    let once = dedup(&c, &ds, 0.99).unwrap();
    assert_eq!(dedup(&once, &ds, 0.99).unwrap(), once);

    let base = c.members[0].clone();
    let train = &c.split.train_indices;
    let mut copy = base.clone();
    copy.id = 1000;
    // half the training rows flipped
    let mut bits = base.model.blackbox.predict_all(&ds);
    for &i in train.iter().step_by(2) {
        bits.set(i, !bits.get(i));
    }
    let mut far = base.clone();
    far.id = 1001;
    far.model.blackbox = BlackBox::Replay(bits);
    let toy = RashomonCollection { members: vec![base.clone(), copy, far], ..c.clone() };
    let d = dedup(&toy, &ds, 0.99).unwrap();
    assert_eq!(d.members.iter().map(|m| m.id).collect::<Vec<_>>(), vec![base.id, 1001]);

    // same rules in another order stay distinct
    let r1 = Rule { condition: ds_condition(&ds, 0), consequent: true };
    let r2 = Rule { condition: ds_condition(&ds, 1), consequent: false };
    let mut x = base.clone();
    x.model.prefix = Prefix::new(vec![r1.clone(), r2.clone()]);
    let mut y = base.clone();
    y.id = 7;
    y.model.prefix = Prefix::new(vec![r2, r1]);
    let toy = RashomonCollection { members: vec![x, y], ..c };
    assert_eq!(dedup(&toy, &ds, 0.99).unwrap().members.len(), 2);
}

fn ds_condition(ds: &BinaryDataset, f: usize) -> hybrid_icd::rules::Condition {
    hybrid_icd::rules::Condition::new(vec![hybrid_icd::rules::Literal {
        feature: f,
        name: ds.feature_names()[f].clone(),
        value: true,
    }])
}

#[test]
fn epsilon_filter_example_and_icf() {
    let (_, c) = collection();
    let mut toy = c.clone();
    toy.members.truncate(3);
    for (m, acc) in toy.members.iter_mut().zip([0.9, 0.88, 0.8]) {
        m.train_accuracy = acc;
        m.train_transparency = 0.3;
    }
    let bins = assign_bins(&toy);
    assert_eq!(bins[1], vec![0, 1, 2]);
    let f = filter_epsilon(&toy, &bins, 0.05).unwrap();
    assert_eq!(f[1], vec![0, 1]);
    assert_eq!(filter_epsilon(&toy, &bins, 0.0).unwrap()[1], vec![0]);
    assert_eq!(filter_epsilon(&toy, &bins, 1.0).unwrap()[1], vec![0, 1, 2]);

    let caps = vec![
        Bitset::from_indices(4, [0, 1]),
        Bitset::from_indices(4, [0]),
        Bitset::from_indices(4, [0, 1]),
        Bitset::from_indices(4, [0, 1, 2]),
    ];
    let all = [0, 1, 2, 3];
    assert_eq!(icf(&caps, &all, 0).unwrap(), 1.0);
    assert_eq!(icf(&caps, &all, 1).unwrap(), 0.75);
    assert_eq!(icf(&caps, &all, 3).unwrap(), 0.0);
    assert!(icf(&caps, &[], 0).is_err());
}

#[test]
fn distributions_match_sort_oracle() {
    let (ds, c) = collection();
    let caps = c.captures(&ds);
    let bins = assign_bins(&c);
    let test = &c.split.test_indices;
    let dist = bin_metric_distribution(&c, &caps, &ds, &bins, Metric::Accuracy, test, None).unwrap();
    for b in 0..N_BINS {
        let Some(s) = &dist[b] else {
            assert!(bins[b].is_empty());
            continue;
        };
        let mut v: Vec<f64> = s.values.iter().map(|x| x.1).collect();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        assert_eq!(s.min, v[0]);
        assert_eq!(s.max, *v.last().unwrap());
        assert_eq!(s.median, q(0.5));
        assert_eq!(s.q1, q(0.25));
        assert_eq!(s.q3, q(0.75));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn growth_is_monotone(accs in prop::collection::vec((0.5f64..1.0, 0.0f64..=1.0), 1..30), eps in prop::collection::vec(0.0f64..0.3, 1..8)) {
        let (_, c) = COLLECTION.with(|c| c.clone());
        let mut toy = c.clone();
        toy.members = accs.iter().enumerate().map(|(i, &(a, t))| {
            let mut m = c.members[0].clone();
            m.id = i;
            m.train_accuracy = a;
            m.train_transparency = t;
            m
        }).collect();
        let bins = assign_bins(&toy);
        let mut eps = eps;
        eps.sort_by(f64::total_cmp);
        let curve = growth_curve(&toy, &bins, &eps).unwrap();
        for w in curve.windows(2) {
            for b in 0..N_BINS {
                prop_assert!(w[0].1[b] <= w[1].1[b]);
            }
        }
        for w in eps.windows(2) {
            let lo = filter_epsilon(&toy, &bins, w[0]).unwrap();
            let hi = filter_epsilon(&toy, &bins, w[1]).unwrap();
            for b in 0..N_BINS {
                prop_assert!(lo[b].iter().all(|i| hi[b].contains(i)));
            }
        }
    }
}

proptest! {
    #[test]
    fn ica_is_symmetric_and_bounded(flags in prop::collection::vec(any::<bool>(), 1..40), row in 0usize..8) {
        let captures: Vec<Bitset> = flags.iter().map(|&f| Bitset::from_fn(8, |i| f ^ (i == row))).collect();
        let members: Vec<usize> = (0..captures.len()).collect();
        let f = icf(&captures, &members, row).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let a = ica(f);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - ica(1.0 - f)).abs() < 1e-12);
        let negated: Vec<Bitset> = captures.iter().map(|c| Bitset::from_fn(8, |i| !c.get(i))).collect();
        prop_assert!((a - ica(icf(&negated, &members, row).unwrap())).abs() < 1e-12);
    }
}

thread_local! {
    static COLLECTION: (BinaryDataset, RashomonCollection) = collection();
}
