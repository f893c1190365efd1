//! Approximate Rashomon sets by bootstrap retraining: build, deduplicate,
//! bin by training transparency, filter by accuracy tolerance, and summarize
//! per-bin metrics and per-example coverage frequency (ICF) and arbitrariness
//! (ICA).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::ops::RangeInclusive;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anneal::{anneal_train, AnnealConfig, AnnealMode, AnnealWeight};
use crate::bitset::Bitset;
use crate::blackbox::{agreement, train_forest, BlackBox, ForestConfig};
use crate::data::{bootstrap_sample, quantile_sorted, BinaryDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::hybrid::{self, HybridModel, Provenance};
use crate::rules::RuleUniverse;
use crate::search::{finalize_pre, search, Mode, SearchConfig, StopReason};

pub const N_BINS: usize = 4;
pub const BIN_LABELS: [&str; N_BINS] = ["Q1", "Q2", "Q3", "Q4"];
pub const C_MIN_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
pub const DEFAULT_AGREEMENT: f64 = 0.99;

/// SplitMix64 step; independent seed streams from one base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `k` values log-spaced from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..k)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (k - 1) as f64))
        .collect()
}

/// One learner with fixed hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LearnerSpec {
    HybridPre(SearchConfig),
    HybridPost(SearchConfig),
    Anneal(AnnealConfig),
}

impl LearnerSpec {
    pub fn method(&self) -> &'static str {
        match self {
            LearnerSpec::HybridPre(_) => "hybrid_pre",
            LearnerSpec::HybridPost(_) => "hybrid_post",
            LearnerSpec::Anneal(a) => a.method_name(),
        }
    }

    pub fn hyperparameters(&self) -> BTreeMap<String, String> {
        let mut h = BTreeMap::new();
        match self {
            LearnerSpec::HybridPre(s) | LearnerSpec::HybridPost(s) => {
                h.insert("lambda".into(), s.lambda.to_string());
                h.insert("beta".into(), s.beta.to_string());
                h.insert("c_min".into(), s.c_min.to_string());
                if let Some(a) = &s.attribute {
                    h.insert("eta".into(), s.eta.to_string());
                    h.insert("attribute".into(), a.clone());
                }
            }
            LearnerSpec::Anneal(a) => {
                match a.weight {
                    AnnealWeight::Transparency(b) => h.insert("beta".into(), b.to_string()),
                    AnnealWeight::Sparsity(l) => h.insert("lambda".into(), l.to_string()),
                };
                h.insert("companion".into(), a.companion.to_string());
                h.insert("iterations".into(), a.iterations.to_string());
            }
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::HybridPre(s) | LearnerSpec::HybridPost(s) => s.validate(),
            LearnerSpec::Anneal(a) => a.validate(),
        }
    }

    /// Whether the learner consumes a black box trained on the full sample.
    fn needs_forest(&self) -> bool {
        !matches!(self, LearnerSpec::HybridPre(_))
    }
}

/// The exact learner over the transparency grid.
pub fn hybrid_grid(pre: bool, base: &SearchConfig) -> Vec<LearnerSpec> {
    C_MIN_GRID
        .iter()
        .map(|&c| {
            let cfg = SearchConfig { c_min: c, ..base.clone() };
            if pre {
                LearnerSpec::HybridPre(cfg)
            } else {
                LearnerSpec::HybridPost(cfg)
            }
        })
        .collect()
}

/// Annealing over its weight grid: deferral weight in [1e-3, 1] for rule
/// sets, rule weight in [1e-3, 1e-1] for rule lists.
pub fn anneal_grid(mode: AnnealMode, base: &AnnealConfig) -> Vec<LearnerSpec> {
    let weights = match mode {
        AnnealMode::Set => log_space(1e-3, 1.0, 10),
        AnnealMode::List => log_space(1e-3, 1e-1, 10),
    };
    weights
        .into_iter()
        .map(|w| {
            LearnerSpec::Anneal(AnnealConfig {
                weight: match mode {
                    AnnealMode::Set => AnnealWeight::Transparency(w),
                    AnnealMode::List => AnnealWeight::Sparsity(w),
                },
                mode,
                ..base.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub n_bootstrap: usize,
    pub base_seed: u64,
    pub forest: ForestConfig,
    pub workers: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            n_bootstrap: 1000,
            base_seed: 0,
            forest: ForestConfig::default(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub id: usize,
    /// Index into the collection's learner specs.
    pub spec: usize,
    /// Black box stored as replayed predictions over the whole dataset.
    pub model: HybridModel,
    pub train_transparency: f64,
    pub train_accuracy: f64,
    pub objective: f64,
    pub nodes_expanded: u64,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub spec: usize,
    pub run: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RashomonCollection {
    pub dataset: String,
    /// Family name, e.g. a method with or without mitigation.
    pub label: String,
    pub split: SplitSpec,
    pub specs: Vec<LearnerSpec>,
    pub members: Vec<Member>,
    pub failures: Vec<RunFailure>,
}

impl RashomonCollection {
    /// Capture set of every member over the whole dataset.
    pub fn captures(&self, ds: &BinaryDataset) -> Vec<Bitset> {
        self.members.iter().map(|m| m.model.prefix.capture(ds)).collect()
    }
}

/// Trains a reference model on the unresampled training rows and one model per
/// bootstrap resample, for every learner spec. Runs are spread over
/// `cfg.workers` threads; results keep (run, spec) order. Failed runs are
/// logged and recorded, not fatal.
pub fn build(
    ds: &BinaryDataset,
    dataset: &str,
    label: &str,
    split: &SplitSpec,
    universe: &RuleUniverse,
    specs: &[LearnerSpec],
    cfg: &BuildConfig,
) -> Result<RashomonCollection> {
    build_runs(ds, dataset, label, split, universe, specs, cfg, 0..=cfg.n_bootstrap)
}

/// [`build`] restricted to the given run indices (0 is the reference run).
#[allow(clippy::too_many_arguments)]
pub fn build_runs(
    ds: &BinaryDataset,
    dataset: &str,
    label: &str,
    split: &SplitSpec,
    universe: &RuleUniverse,
    specs: &[LearnerSpec],
    cfg: &BuildConfig,
    runs: RangeInclusive<usize>,
) -> Result<RashomonCollection> {
    for s in specs {
        s.validate()?;
    }
    cfg.forest.validate()?;
    if split.train_indices.is_empty() {
        return Err(Error::EmptySubset);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<Vec<std::result::Result<Member, RunFailure>>> = pool.install(|| {
        runs.into_par_iter()
            .map(|run| train_run(ds, split, universe, specs, cfg, run))
            .collect()
    });
    let mut members = Vec::new();
    let mut failures = Vec::new();
    for r in runs.into_iter().flatten() {
        match r {
            Ok(mut m) => {
                m.id = members.len();
                members.push(m);
            }
            Err(f) => {
                warn!("run {} of spec {} failed: {}", f.run, f.spec, f.error);
                failures.push(f);
            }
        }
    }
    info!("{label}: {} models, {} failures", members.len(), failures.len());
    Ok(RashomonCollection {
        dataset: dataset.to_string(),
        label: label.to_string(),
        split: split.clone(),
        specs: specs.to_vec(),
        members,
        failures,
    })
}

fn train_run(
    ds: &BinaryDataset,
    split: &SplitSpec,
    universe: &RuleUniverse,
    specs: &[LearnerSpec],
    cfg: &BuildConfig,
    run: usize,
) -> Vec<std::result::Result<Member, RunFailure>> {
    let train = &split.train_indices;
    let bootstrap_seed = (run > 0).then(|| derive_seed(cfg.base_seed, 2 * run as u64));
    let forest_seed = derive_seed(cfg.base_seed, 2 * run as u64 + 1);
    let rows = match bootstrap_seed {
        Some(s) => bootstrap_sample(train, s),
        None => train.clone(),
    };
    let forest_cfg = cfg.forest.clone().with_seed(forest_seed);
    let local = ds.select(&rows);
    let full_forest = if specs.iter().any(LearnerSpec::needs_forest) {
        Some(train_forest(ds, &rows, &forest_cfg))
    } else {
        None
    };
    specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let provenance = Provenance {
                method: spec.method().to_string(),
                hyperparameters: spec.hyperparameters(),
                run,
                bootstrap_seed,
                forest_seed,
                optimal: true,
            };
            let forest = full_forest.as_ref().map(|f| f.as_ref().map_err(|e| e.to_string()));
            train_one(ds, &local, &rows, universe, spec, forest, &forest_cfg, provenance, run)
                .map(|(model, objective, nodes, stop)| {
                    finish_member(ds, train, k, model, objective, nodes, stop)
                })
                .map_err(|e| RunFailure {
                    spec: k,
                    run,
                    error: e,
                })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn train_one(
    ds: &BinaryDataset,
    local: &BinaryDataset,
    rows: &[usize],
    universe: &RuleUniverse,
    spec: &LearnerSpec,
    forest: Option<std::result::Result<&BlackBox, String>>,
    forest_cfg: &ForestConfig,
    mut provenance: Provenance,
    run: usize,
) -> std::result::Result<(HybridModel, f64, u64, StopReason), String> {
    let err = |e: Error| e.to_string();
    match spec {
        LearnerSpec::HybridPre(cfg) => {
            let r = search(local, universe, cfg, Mode::Pre, None).map_err(err)?;
            provenance.optimal = r.optimal;
            let m = finalize_pre(ds, rows, r.prefix, forest_cfg, provenance).map_err(err)?;
            Ok((m, r.objective, r.log.nodes_expanded, r.log.stop))
        }
        LearnerSpec::HybridPost(cfg) => {
            let bb = forest.expect("forest trained for post")?;
            let hc = bb.predict_rows(ds, rows);
            let r = search(local, universe, cfg, Mode::Post(&hc), None).map_err(err)?;
            provenance.optimal = r.optimal;
            let m = HybridModel {
                prefix: r.prefix,
                blackbox: bb.clone(),
                provenance,
            };
            Ok((m, r.objective, r.log.nodes_expanded, r.log.stop))
        }
        LearnerSpec::Anneal(cfg) => {
            let bb = forest.expect("forest trained for anneal")?;
            let cfg = AnnealConfig {
                seed: derive_seed(cfg.seed, run as u64),
                ..cfg.clone()
            };
            provenance.optimal = false;
            let (m, r) = anneal_train(ds, rows, universe, bb, &cfg, provenance).map_err(err)?;
            Ok((m, r.objective, r.log.nodes_expanded, r.log.stop))
        }
    }
}

fn finish_member(
    ds: &BinaryDataset,
    train: &[usize],
    spec: usize,
    mut model: HybridModel,
    objective: f64,
    nodes_expanded: u64,
    stop: StopReason,
) -> Member {
    model.blackbox = model.blackbox.to_replay(ds);
    let capture = model.prefix.capture(ds);
    let train_transparency = hybrid::coverage(&capture, train).expect("nonempty train");
    let train_accuracy =
        hybrid::accuracy_of(&model.predict_all(ds), ds, train).expect("nonempty train");
    Member {
        id: 0,
        spec,
        model,
        train_transparency,
        train_accuracy,
        objective,
        nodes_expanded,
        stop,
    }
}

/// Appends the members and failures of `other` (same specs), renumbering ids.
pub fn extend(c: &mut RashomonCollection, other: RashomonCollection) -> Result<()> {
    if c.specs != other.specs {
        return Err(Error::Config(format!("cannot merge collections {} and {}: learner specs differ", c.label, other.label)));
    }
    for mut m in other.members {
        m.id = c.members.len();
        c.members.push(m);
    }
    c.failures.extend(other.failures);
    Ok(())
}

/// Removes later members whose method and prefix (rules, order, consequents)
/// equal an earlier kept member's and whose black boxes agree on at least
/// `threshold` of the training rows.
pub fn dedup(c: &RashomonCollection, ds: &BinaryDataset, threshold: f64) -> Result<RashomonCollection> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("agreement threshold must be in (0, 1], got {threshold}")));
    }
    let train = &c.split.train_indices;
    let mut kept: HashMap<(&str, &hybrid::Prefix), Vec<(usize, crate::blackbox::Fingerprint)>> =
        HashMap::new();
    let mut members = Vec::new();
    for m in &c.members {
        let fp = m.model.blackbox.fingerprint(ds, train);
        let slot = kept
            .entry((m.model.provenance.method.as_str(), &m.model.prefix))
            .or_default();
        let mut duplicate = false;
        for (_, other) in slot.iter() {
            if agreement(&fp, other)? >= threshold {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            slot.push((m.id, fp));
            members.push(m.clone());
        }
    }
    Ok(RashomonCollection {
        members,
        ..c.clone()
    })
}

/// Transparency bin: [0, .25), [.25, .5), [.5, .75), [.75, 1].
pub fn bin_of(transparency: f64) -> usize {
    if transparency < 0.25 {
        0
    } else if transparency < 0.5 {
        1
    } else if transparency < 0.75 {
        2
    } else {
        3
    }
}

pub type Bins = [Vec<usize>; N_BINS];

/// Member positions (indices into `c.members`) per training-transparency bin.
pub fn assign_bins(c: &RashomonCollection) -> Bins {
    let mut bins: Bins = Default::default();
    for (i, m) in c.members.iter().enumerate() {
        bins[bin_of(m.train_transparency)].push(i);
    }
    bins
}

/// Within each bin, keeps members with training accuracy at least
/// `(1 - epsilon)` times the bin's best.
pub fn filter_epsilon(c: &RashomonCollection, bins: &Bins, epsilon: f64) -> Result<Bins> {
    if !(epsilon >= 0.0) {
        return Err(Error::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let mut out: Bins = Default::default();
    for (b, members) in bins.iter().enumerate() {
        let Some(best) = members
            .iter()
            .map(|&i| c.members[i].train_accuracy)
            .max_by(f64::total_cmp)
        else {
            continue;
        };
        let threshold = (1.0 - epsilon) * best;
        out[b] = members
            .iter()
            .copied()
            .filter(|&i| c.members[i].train_accuracy >= threshold)
            .collect();
    }
    Ok(out)
}

/// Number of filtered members per bin at each tolerance.
pub fn growth_curve(c: &RashomonCollection, bins: &Bins, epsilons: &[f64]) -> Result<Vec<(f64, [usize; N_BINS])>> {
    epsilons
        .iter()
        .map(|&e| {
            let f = filter_epsilon(c, bins, e)?;
            Ok((e, std::array::from_fn(|b| f[b].len())))
        })
        .collect()
}

/// Fraction of `members` whose capture set contains `row`.
pub fn icf(captures: &[Bitset], members: &[usize], row: usize) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyBin);
    }
    let hits = members.iter().filter(|&&i| captures[i].get(row)).count();
    Ok(hits as f64 / members.len() as f64)
}

/// `1 - 2 |f - 1/2|`: 0 when all or no models agree, 1 at an even split.
pub fn ica(icf: f64) -> f64 {
    1.0 - 2.0 * (icf - 0.5).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Icd,
    StatisticalParity,
    EqualOpportunity,
    Accuracy,
    Sparsity,
    Transparency,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Icd,
        Metric::StatisticalParity,
        Metric::EqualOpportunity,
        Metric::Accuracy,
        Metric::Sparsity,
        Metric::Transparency,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Icd => "icd",
            Metric::StatisticalParity => "sp",
            Metric::EqualOpportunity => "eo",
            Metric::Accuracy => "accuracy",
            Metric::Sparsity => "sparsity",
            Metric::Transparency => "transparency",
        }
    }

    pub fn needs_attribute(&self) -> bool {
        matches!(self, Metric::Icd | Metric::StatisticalParity | Metric::EqualOpportunity)
    }
}

/// A metric for one model on `subset`.
pub fn metric_value(
    metric: Metric,
    model: &HybridModel,
    capture: &Bitset,
    ds: &BinaryDataset,
    subset: &[usize],
    attribute: Option<&str>,
) -> Result<f64> {
    let attr = || {
        attribute.ok_or_else(|| Error::Config(format!("metric {} needs an attribute", metric.name())))
    };
    match metric {
        Metric::Icd => hybrid::icd_of(capture, ds, subset, attr()?),
        Metric::StatisticalParity => {
            hybrid::statistical_parity(&model.predict_all(ds), ds, subset, attr()?)
        }
        Metric::EqualOpportunity => {
            hybrid::equal_opportunity(&model.predict_all(ds), ds, subset, attr()?)
        }
        Metric::Accuracy => hybrid::accuracy_of(&model.predict_all(ds), ds, subset),
        Metric::Sparsity => Ok(model.sparsity() as f64),
        Metric::Transparency => hybrid::coverage(capture, subset),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    /// (member id, value) in member order.
    pub values: Vec<(usize, f64)>,
}

impl Summary {
    pub fn of(values: Vec<(usize, f64)>) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = values.iter().map(|v| v.1).collect();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Some(Summary {
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            mean,
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
            values,
        })
    }
}

/// Per-bin summary of a metric over the members in `bins`; `None` for empty bins.
pub fn bin_metric_distribution(
    c: &RashomonCollection,
    captures: &[Bitset],
    ds: &BinaryDataset,
    bins: &Bins,
    metric: Metric,
    subset: &[usize],
    attribute: Option<&str>,
) -> Result<[Option<Summary>; N_BINS]> {
    let mut out: [Option<Summary>; N_BINS] = Default::default();
    for (b, members) in bins.iter().enumerate() {
        let values = members
            .iter()
            .map(|&i| {
                let m = &c.members[i];
                metric_value(metric, &m.model, &captures[i], ds, subset, attribute).map(|v| (m.id, v))
            })
            .collect::<Result<Vec<_>>>()?;
        out[b] = Summary::of(values);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CollectionIndex {
    dataset: String,
    label: String,
    split: SplitSpec,
    specs: Vec<LearnerSpec>,
    n_models: usize,
    models_file: String,
    failures: Vec<RunFailure>,
}

#[derive(Serialize, Deserialize)]
struct MemberLine {
    id: usize,
    spec: usize,
    train_transparency: f64,
    train_accuracy: f64,
    objective: f64,
    nodes_expanded: u64,
    stop: StopReason,
    model: serde_json::Value,
}

pub const INDEX_FILE: &str = "collection.json";
pub const MODELS_FILE: &str = "models.jsonl";

/// Index JSON and one JSON line per member.
pub fn collection_to_parts(c: &RashomonCollection) -> (String, String) {
    let index = CollectionIndex {
        dataset: c.dataset.clone(),
        label: c.label.clone(),
        split: c.split.clone(),
        specs: c.specs.clone(),
        n_models: c.members.len(),
        models_file: MODELS_FILE.to_string(),
        failures: c.failures.clone(),
    };
    let mut lines = String::new();
    for m in &c.members {
        let line = MemberLine {
            id: m.id,
            spec: m.spec,
            train_transparency: m.train_transparency,
            train_accuracy: m.train_accuracy,
            objective: m.objective,
            nodes_expanded: m.nodes_expanded,
            stop: m.stop,
            model: serde_json::from_str(&m.model.to_json()).expect("model json"),
        };
        lines.push_str(&serde_json::to_string(&line).expect("member serializes"));
        lines.push('\n');
    }
    (
        serde_json::to_string_pretty(&index).expect("index serializes"),
        lines,
    )
}

pub fn collection_from_parts(ds: &BinaryDataset, index: &str, models: &str) -> Result<RashomonCollection> {
    let index: CollectionIndex = serde_json::from_str(index)?;
    let n = ds.n();
    for &i in index.split.train_indices.iter().chain(&index.split.test_indices) {
        if i >= n {
            return Err(Error::format("collection", format!("split index {i} out of range")));
        }
    }
    let mut members = Vec::new();
    for (k, line) in models.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let rec: MemberLine = serde_json::from_str(line)?;
        if rec.spec >= index.specs.len() {
            return Err(Error::format("collection", format!("line {}: spec {} out of range", k + 1, rec.spec)));
        }
        let model = HybridModel::from_json(ds, &rec.model.to_string())?;
        members.push(Member {
            id: rec.id,
            spec: rec.spec,
            model,
            train_transparency: rec.train_transparency,
            train_accuracy: rec.train_accuracy,
            objective: rec.objective,
            nodes_expanded: rec.nodes_expanded,
            stop: rec.stop,
        });
    }
    if members.len() != index.n_models {
        return Err(Error::format(
            "collection",
            format!("index lists {} models, file has {}", index.n_models, members.len()),
        ));
    }
    Ok(RashomonCollection {
        dataset: index.dataset,
        label: index.label,
        split: index.split,
        specs: index.specs,
        members,
        failures: index.failures,
    })
}

pub fn write_collection(dir: &Path, c: &RashomonCollection) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (index, models) = collection_to_parts(c);
    let p = dir.join(INDEX_FILE);
    fs::write(&p, index).map_err(|e| Error::io(&p, e))?;
    let p = dir.join(MODELS_FILE);
    fs::write(&p, models).map_err(|e| Error::io(&p, e))
}

pub fn read_collection(dir: &Path, ds: &BinaryDataset) -> Result<RashomonCollection> {
    let read = |name: &str| {
        let p = dir.join(name);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                path: p,
                hint: "run the bootstrap step first".into(),
            });
        }
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    collection_from_parts(ds, &read(INDEX_FILE)?, &read(MODELS_FILE)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_and_boundaries() {
        assert_eq!(bin_of(0.0), 0);
        assert_eq!(bin_of(0.2499), 0);
        assert_eq!(bin_of(0.25), 1);
        assert_eq!(bin_of(0.5), 2);
        assert_eq!(bin_of(0.75), 3);
        assert_eq!(bin_of(1.0), 3);
    }

    #[test]
    fn ica_values() {
        assert_eq!(ica(0.5), 1.0);
        assert_eq!(ica(0.0), 0.0);
        assert_eq!(ica(1.0), 0.0);
        assert_eq!(ica(0.75), 0.5);
    }

    #[test]
    fn grids() {
        let g = log_space(1e-3, 1.0, 10);
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[9] - 1.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(hybrid_grid(true, &SearchConfig::default()).len(), 10);
        let a = anneal_grid(AnnealMode::List, &AnnealConfig::default());
        assert_eq!(a[0].method(), "anneal_list");
        assert_eq!(a[9].hyperparameters()["lambda"], (0.1f64).to_string());
    }

    #[test]
    fn seeds_differ() {
        let s: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 100);
        assert_eq!(derive_seed(7, 3), s[3]);
    }

    #[test]
    fn summary_quantiles() {
        let s = Summary::of(vec![(0, 0.2), (1, 0.4)]).unwrap();
        assert!((s.mean - 0.3).abs() < 1e-15);
        assert_eq!((s.min, s.max), (0.2, 0.4));
        let s = Summary::of(vec![(3, 0.7)]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.mean, s.q3, s.max), (0.7, 0.7, 0.7, 0.7, 0.7, 0.7));
        assert!(Summary::of(vec![]).is_none());
    }
}
