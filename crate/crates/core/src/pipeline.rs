//! End-to-end experiment over an output directory. Each step reads the
//! previous step's artifacts:
//!
//! ```text
//! prepare   -> prepare/{dataset.bin, split.json, dataset.json}
//! mine      -> rules.json
//! train     -> train/<family>/{collection.json, models.jsonl}      (reference runs)
//! bootstrap -> collections/<family>/{collection.json, models.jsonl} (plus resamples)
//! audit     -> audit/*.csv
//! report    -> report/*.csv
//! ```
//!
//! A family is one learner over its hyperparameter grid, either unconstrained
//! or with an ICD constraint on one attribute at one η.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::anneal::{anneal_train, AnnealConfig, AnnealMode};
use crate::blackbox::{train_forest, ForestConfig};
use crate::data::{read_dataset, split, write_dataset, BinaryDataset, DatasetManifest, SplitSpec};
use crate::error::{Error, Result};
use crate::hybrid::{group_coverage_of, HybridModel, Provenance};
use crate::rashomon::{
    self, anneal_grid, assign_bins, build_runs, dedup, filter_epsilon, growth_curve, hybrid_grid,
    metric_value, BuildConfig, LearnerSpec, Metric, RashomonCollection, Summary, BIN_LABELS,
};
use crate::rules::{mine_antecedents, read_universe, write_universe, MiningConfig, RuleUniverse};
use crate::search::{finalize_pre, search, Mode, SearchConfig};
use crate::stats::{
    classify_transitions, prevalence_table, write_prevalence, BellRule, VerdictRow,
};

pub const METHODS: [&str; 4] = ["hybrid_pre", "hybrid_post", "anneal_set", "anneal_list"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOverrides {
    pub c_min: Option<Vec<f64>>,
    pub anneal_set: Option<Vec<f64>>,
    pub anneal_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationConfig {
    pub enabled: bool,
    /// Attributes to constrain; defaults to the audited attributes.
    pub attributes: Option<Vec<String>>,
    pub eta: f64,
    /// Extra η values for the sweep report.
    pub eta_sweep: Vec<f64>,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        MitigationConfig {
            enabled: true,
            attributes: None,
            eta: 0.05,
            eta_sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest, relative to the config file's directory unless absolute.
    pub dataset: PathBuf,
    pub mining: MiningConfig,
    /// Base search settings; `c_min`, `eta` and `attribute` are set per family.
    pub search: SearchConfig,
    pub anneal: AnnealConfig,
    pub forest: ForestConfig,
    pub methods: Vec<String>,
    pub grids: GridOverrides,
    pub n_bootstrap: usize,
    pub seed: u64,
    /// Defaults to `seed`.
    pub split_seed: Option<u64>,
    pub epsilons: Vec<f64>,
    pub growth_epsilons: Vec<f64>,
    /// Audited attributes; defaults to all attributes of the dataset.
    pub attributes: Option<Vec<String>>,
    pub mitigation: MitigationConfig,
    pub agreement_threshold: f64,
    pub alpha: f64,
    pub bell_rule: BellRule,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::new(),
            mining: MiningConfig::default(),
            search: SearchConfig::default(),
            anneal: AnnealConfig::default(),
            forest: ForestConfig::default(),
            methods: METHODS.iter().map(|m| m.to_string()).collect(),
            grids: GridOverrides::default(),
            n_bootstrap: 1000,
            seed: 0,
            split_seed: None,
            epsilons: vec![0.01, 0.05],
            growth_epsilons: vec![0.0, 0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.075, 0.1],
            attributes: None,
            mitigation: MitigationConfig::default(),
            agreement_threshold: rashomon::DEFAULT_AGREEMENT,
            alpha: 0.05,
            bell_rule: BellRule::default(),
            workers: 1,
        }
    }
}

fn config_err(m: String) -> Error {
    Error::Config(m)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_json(&text)?;
        if c.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                c.dataset = dir.join(&c.dataset);
            }
        }
        Ok(c)
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(config_err("dataset manifest path is required".into()));
        }
        if self.methods.is_empty() {
            return Err(config_err("at least one method is required".into()));
        }
        let mut seen = BTreeSet::new();
        for m in &self.methods {
            if !METHODS.contains(&m.as_str()) {
                return Err(config_err(format!("unknown method {m:?}; expected one of {METHODS:?}")));
            }
            if !seen.insert(m) {
                return Err(config_err(format!("method {m} listed twice")));
            }
        }
        self.mining.validate()?;
        self.search.validate()?;
        self.anneal.validate()?;
        self.forest.validate()?;
        if self.epsilons.is_empty() {
            return Err(config_err("at least one epsilon is required".into()));
        }
        for &e in self.epsilons.iter().chain(&self.growth_epsilons) {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(config_err(format!("epsilon must be >= 0, got {e}")));
            }
        }
        for &e in std::iter::once(&self.mitigation.eta).chain(&self.mitigation.eta_sweep) {
            if !(e > 0.0 && e <= 1.0) {
                return Err(config_err(format!("eta must be in (0, 1], got {e}")));
            }
        }
        if let Some(g) = &self.grids.c_min {
            if g.is_empty() || g.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(config_err("c_min grid must be nonempty with values in [0, 1]".into()));
            }
        }
        for g in [&self.grids.anneal_set, &self.grids.anneal_list].into_iter().flatten() {
            if g.is_empty() || g.iter().any(|w| !(*w >= 0.0)) {
                return Err(config_err("anneal grids must be nonempty with weights >= 0".into()));
            }
        }
        if !(self.agreement_threshold > 0.0 && self.agreement_threshold <= 1.0) {
            return Err(config_err("agreement_threshold must be in (0, 1]".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err("alpha must be in (0, 1)".into()));
        }
        if self.workers == 0 {
            return Err(config_err("workers must be >= 1".into()));
        }
        if let Some(a) = &self.attributes {
            if a.is_empty() {
                return Err(config_err("attributes list is empty".into()));
            }
        }
        Ok(())
    }

    /// Audited attributes, checked against the dataset.
    pub fn audit_attributes(&self, ds: &BinaryDataset) -> Result<Vec<String>> {
        let all: Vec<String> = ds.attributes().map(str::to_string).collect();
        let chosen = self.attributes.clone().unwrap_or_else(|| all.clone());
        for a in &chosen {
            if !all.contains(a) {
                return Err(Error::UnknownAttribute(a.clone()));
            }
        }
        Ok(chosen)
    }

    fn mitigation_attributes(&self, ds: &BinaryDataset) -> Result<Vec<String>> {
        match &self.mitigation.attributes {
            Some(a) => {
                for x in a {
                    ds.group_map(x)?;
                }
                Ok(a.clone())
            }
            None => self.audit_attributes(ds),
        }
    }

    fn etas(&self) -> Vec<f64> {
        let mut etas = vec![self.mitigation.eta];
        etas.extend(&self.mitigation.eta_sweep);
        etas.sort_by(f64::total_cmp);
        etas.dedup();
        etas
    }

    fn grid(&self, method: &str, search: &SearchConfig) -> Vec<LearnerSpec> {
        match method {
            "hybrid_pre" | "hybrid_post" => {
                let pre = method == "hybrid_pre";
                match &self.grids.c_min {
                    None => hybrid_grid(pre, search),
                    Some(g) => g
                        .iter()
                        .map(|&c| {
                            let s = SearchConfig { c_min: c, ..search.clone() };
                            if pre {
                                LearnerSpec::HybridPre(s)
                            } else {
                                LearnerSpec::HybridPost(s)
                            }
                        })
                        .collect(),
                }
            }
            _ => {
                let mode = if method == "anneal_set" { AnnealMode::Set } else { AnnealMode::List };
                let specs = anneal_grid(mode, &self.anneal);
                let custom = if mode == AnnealMode::Set { &self.grids.anneal_set } else { &self.grids.anneal_list };
                match custom {
                    None => specs,
                    Some(ws) => ws
                        .iter()
                        .map(|&w| {
                            let LearnerSpec::Anneal(base) = &specs[0] else { unreachable!() };
                            let weight = match base.weight {
                                crate::anneal::AnnealWeight::Transparency(_) => crate::anneal::AnnealWeight::Transparency(w),
                                crate::anneal::AnnealWeight::Sparsity(_) => crate::anneal::AnnealWeight::Sparsity(w),
                            };
                            LearnerSpec::Anneal(AnnealConfig { weight, ..base.clone() })
                        })
                        .collect(),
                }
            }
        }
    }

    /// Every family: each method unconstrained, and each exact method under
    /// every (mitigated attribute, η) pair.
    pub fn families(&self, ds: &BinaryDataset) -> Result<Vec<Family>> {
        let unconstrained = SearchConfig {
            eta: 1.0,
            attribute: None,
            ..self.search.clone()
        };
        let mut out = Vec::new();
        for method in &self.methods {
            out.push(Family {
                label: method.clone(),
                method: method.clone(),
                attribute: None,
                eta: None,
                specs: self.grid(method, &unconstrained),
            });
        }
        if self.mitigation.enabled {
            let attrs = self.mitigation_attributes(ds)?;
            for method in self.methods.iter().filter(|m| m.starts_with("hybrid_")) {
                for a in &attrs {
                    for eta in self.etas() {
                        let s = SearchConfig {
                            eta,
                            attribute: Some(a.clone()),
                            ..self.search.clone()
                        };
                        out.push(Family {
                            label: format!("{method}__{}__eta{eta}", sanitize(a)),
                            method: method.clone(),
                            attribute: Some(a.clone()),
                            eta: Some(eta),
                            specs: self.grid(method, &s),
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    /// Directory-safe name.
    pub label: String,
    pub method: String,
    pub attribute: Option<String>,
    pub eta: Option<f64>,
    pub specs: Vec<LearnerSpec>,
}

impl Family {
    pub fn hyperparameters(&self) -> String {
        match (&self.attribute, self.eta) {
            (Some(a), Some(e)) => format!("attribute={a};eta={e}"),
            _ => "unconstrained".into(),
        }
    }
}

/// Paths inside an output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("prepare").join("dataset.bin")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("prepare").join("split.json")
    }
    pub fn dataset_info(&self) -> PathBuf {
        self.root.join("prepare").join("dataset.json")
    }
    pub fn rules(&self) -> PathBuf {
        self.root.join("rules.json")
    }
    pub fn train(&self, family: &str) -> PathBuf {
        self.root.join("train").join(family)
    }
    pub fn collection(&self, family: &str) -> PathBuf {
        self.root.join("collections").join(family)
    }
    pub fn audit(&self) -> PathBuf {
        self.root.join("audit")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

fn require(path: &Path, step: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: format!("run the `{step}` step first"),
        })
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetInfo {
    name: String,
    n: usize,
    n_features: usize,
    attributes: Vec<String>,
}

/// Loaded upstream state shared by later steps.
struct Prepared {
    name: String,
    ds: BinaryDataset,
    split: SplitSpec,
}

fn load_prepared(layout: &Layout) -> Result<Prepared> {
    require(&layout.dataset(), "prepare")?;
    require(&layout.split(), "prepare")?;
    require(&layout.dataset_info(), "prepare")?;
    let ds = read_dataset(&layout.dataset())?;
    let text = fs::read_to_string(layout.split()).map_err(|e| Error::io(layout.split(), e))?;
    let split: SplitSpec = serde_json::from_str(&text)?;
    if split.train_indices.iter().chain(&split.test_indices).any(|&i| i >= ds.n()) {
        return Err(Error::format("split", "index out of range for the cached dataset"));
    }
    let text = fs::read_to_string(layout.dataset_info()).map_err(|e| Error::io(layout.dataset_info(), e))?;
    let info: DatasetInfo = serde_json::from_str(&text)?;
    Ok(Prepared {
        name: info.name,
        ds,
        split,
    })
}

/// Binarizes the dataset, caches it and draws the train/test split.
pub fn cmd_prepare(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let manifest = DatasetManifest::load(&cfg.dataset)?;
    let ds = manifest.load_dataset()?;
    cfg.audit_attributes(&ds)?;
    if cfg.mitigation.enabled {
        cfg.mitigation_attributes(&ds)?;
    }
    let sp = split(&ds, cfg.split_seed())?;
    fs::create_dir_all(out.join("prepare")).map_err(|e| Error::io(out, e))?;
    write_dataset(&layout.dataset(), &ds)?;
    write_text(&layout.split(), &serde_json::to_string(&sp)?)?;
    let info = DatasetInfo {
        name: manifest.name.clone(),
        n: ds.n(),
        n_features: ds.n_features(),
        attributes: ds.attributes().map(str::to_string).collect(),
    };
    write_text(&layout.dataset_info(), &serde_json::to_string_pretty(&info)?)?;
    write_text(&out.join("run_config.json"), &serde_json::to_string_pretty(cfg)?)?;
    info!(
        "prepared {}: {} rows, {} features, {} train / {} test",
        manifest.name,
        ds.n(),
        ds.n_features(),
        sp.train_indices.len(),
        sp.test_indices.len()
    );
    Ok(())
}

/// Mines the rule universe on the training rows.
pub fn cmd_mine(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let p = load_prepared(&layout)?;
    let u = mine_antecedents(&p.ds, &p.split.train_indices, &cfg.mining)?;
    write_universe(&layout.rules(), &u)?;
    info!("mined {} antecedents", u.len());
    Ok(())
}

fn load_universe(layout: &Layout, ds: &BinaryDataset) -> Result<RuleUniverse> {
    require(&layout.rules(), "mine")?;
    read_universe(&layout.rules(), ds)
}

fn build_config(cfg: &RunConfig) -> BuildConfig {
    BuildConfig {
        n_bootstrap: cfg.n_bootstrap,
        base_seed: cfg.seed,
        forest: cfg.forest,
        workers: cfg.workers,
    }
}

/// Reference models: every family's grid on the unresampled training rows.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let p = load_prepared(&layout)?;
    let u = load_universe(&layout, &p.ds)?;
    let bc = build_config(cfg);
    for fam in cfg.families(&p.ds)? {
        let c = build_runs(&p.ds, &p.name, &fam.label, &p.split, &u, &fam.specs, &bc, 0..=0)?;
        info!("trained {} reference models for {}", c.members.len(), fam.label);
        rashomon::write_collection(&layout.train(&fam.label), &c)?;
    }
    Ok(())
}

/// Extends every family's reference models with the bootstrap resamples.
pub fn cmd_bootstrap(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let p = load_prepared(&layout)?;
    let u = load_universe(&layout, &p.ds)?;
    let bc = build_config(cfg);
    for fam in cfg.families(&p.ds)? {
        let dir = layout.train(&fam.label);
        require(&dir.join(rashomon::INDEX_FILE), "train")?;
        let mut c = rashomon::read_collection(&dir, &p.ds)?;
        if c.specs != fam.specs {
            return Err(Error::Config(format!(
                "reference models in {} were trained with a different grid; rerun `train`",
                dir.display()
            )));
        }
        if cfg.n_bootstrap > 0 {
            let more = build_runs(&p.ds, &p.name, &fam.label, &p.split, &u, &fam.specs, &bc, 1..=cfg.n_bootstrap)?;
            rashomon::extend(&mut c, more)?;
        }
        info!("{}: {} models, {} failed runs", fam.label, c.members.len(), c.failures.len());
        rashomon::write_collection(&layout.collection(&fam.label), &c)?;
    }
    Ok(())
}

/// One per-model metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub dataset: String,
    pub family: String,
    pub method: String,
    pub mitigated_attribute: String,
    pub eta: String,
    pub epsilon: f64,
    pub bin: String,
    pub subset: String,
    pub metric: String,
    pub attribute: String,
    pub model_id: usize,
    pub run: usize,
    pub hyperparameters: String,
    pub seed: u64,
    pub split_seed: u64,
    pub value: f64,
}

/// Per-model interpretability coverage of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCoverageRow {
    pub dataset: String,
    pub family: String,
    pub method: String,
    pub epsilon: f64,
    pub bin: String,
    pub attribute: String,
    pub group: String,
    pub model_id: usize,
    pub run: usize,
    pub hyperparameters: String,
    pub seed: u64,
    pub split_seed: u64,
    pub value: f64,
}

/// ICF and ICA of one test example within one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaRow {
    pub dataset: String,
    pub family: String,
    pub method: String,
    pub hyperparameters: String,
    pub epsilon: f64,
    pub bin: String,
    pub n_models: usize,
    pub row: usize,
    pub icf: f64,
    pub ica: f64,
    pub seed: u64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub dataset: String,
    pub family: String,
    pub method: String,
    pub hyperparameters: String,
    pub epsilon: f64,
    pub bin: String,
    pub n_models: usize,
    pub seed: u64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub dataset: String,
    pub family: String,
    pub spec: usize,
    pub run: usize,
    pub error: String,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv_rows<T: DeserializeOwned>(path: &Path, step: &str) -> Result<Vec<T>> {
    require(path, step)?;
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

pub const DISTRIBUTIONS: &str = "distributions.csv";
pub const GROUP_COVERAGE: &str = "group_coverage.csv";
pub const ICA: &str = "ica.csv";
pub const GROWTH: &str = "growth.csv";
pub const VERDICTS: &str = "verdicts.csv";
pub const PREVALENCE: &str = "prevalence.csv";
pub const FAILURES: &str = "failures.csv";

/// Label of the single bin spanning every transparency.
pub const ALL_BINS: &str = "all";

fn is_undefined(e: &Error) -> bool {
    matches!(e, Error::IcdUndefined(_) | Error::EoUndefined(_))
}

struct ModelCtx<'a> {
    fam: &'a Family,
    p: &'a Prepared,
    seed_split: u64,
}

impl ModelCtx<'_> {
    #[allow(clippy::too_many_arguments)]
    fn dist_rows(
        &self,
        out: &mut Vec<DistributionRow>,
        m: &rashomon::Member,
        capture: &crate::Bitset,
        epsilon: f64,
        bin: &str,
        subsets: &[(&str, &[usize])],
        attributes: &[String],
        skipped: &mut usize,
    ) -> Result<()> {
        let model: &HybridModel = &m.model;
        for &(subset_name, subset) in subsets {
            for metric in Metric::ALL {
                let attrs: Vec<Option<&str>> = if metric.needs_attribute() {
                    attributes.iter().map(|a| Some(a.as_str())).collect()
                } else {
                    vec![None]
                };
                for attr in attrs {
                    let value = match metric_value(metric, model, capture, &self.p.ds, subset, attr) {
                        Ok(v) => v,
                        Err(e) if is_undefined(&e) => {
                            *skipped += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    out.push(DistributionRow {
                        dataset: self.p.name.clone(),
                        family: self.fam.label.clone(),
                        method: self.fam.method.clone(),
                        mitigated_attribute: self.fam.attribute.clone().unwrap_or_default(),
                        eta: self.fam.eta.map(|e| e.to_string()).unwrap_or_default(),
                        epsilon,
                        bin: bin.to_string(),
                        subset: subset_name.to_string(),
                        metric: metric.name().to_string(),
                        attribute: attr.unwrap_or_default().to_string(),
                        model_id: m.id,
                        run: model.provenance.run,
                        hyperparameters: model.provenance.hyperparameter_string(),
                        seed: model.provenance.forest_seed,
                        split_seed: self.seed_split,
                        value,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Deduplicates, bins and filters every family's collection and writes the
/// tidy metric tables, ICF/ICA, growth curves, rank-test verdicts and bell
/// prevalence.
pub fn cmd_audit(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let p = load_prepared(&layout)?;
    let attributes = cfg.audit_attributes(&p.ds)?;
    let families = cfg.families(&p.ds)?;
    let train: &[usize] = &p.split.train_indices;
    let test: &[usize] = &p.split.test_indices;
    let split_seed = p.split.seed;

    let mut dist = Vec::new();
    let mut groups = Vec::new();
    let mut icas = Vec::new();
    let mut growth = Vec::new();
    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    let mut skipped = 0usize;

    let mut growth_eps: Vec<f64> = cfg.growth_epsilons.iter().chain(&cfg.epsilons).copied().collect();
    growth_eps.sort_by(f64::total_cmp);
    growth_eps.dedup();

    for fam in &families {
        let dir = layout.collection(&fam.label);
        require(&dir.join(rashomon::INDEX_FILE), "bootstrap")?;
        let raw = rashomon::read_collection(&dir, &p.ds)?;
        for f in &raw.failures {
            failures.push(FailureRow {
                dataset: p.name.clone(),
                family: fam.label.clone(),
                spec: f.spec,
                run: f.run,
                error: f.error.clone(),
            });
        }
        let c: RashomonCollection = dedup(&raw, &p.ds, cfg.agreement_threshold)?;
        info!("{}: {} models, {} after dedup", fam.label, raw.members.len(), c.members.len());
        let caps = c.captures(&p.ds);
        let bins = assign_bins(&c);
        let ctx = ModelCtx { fam, p: &p, seed_split: split_seed };
        let fam_hp = fam.hyperparameters();

        for (eps, counts) in growth_curve(&c, &bins, &growth_eps)? {
            for (b, n) in counts.iter().enumerate() {
                growth.push(GrowthRow {
                    dataset: p.name.clone(),
                    family: fam.label.clone(),
                    method: fam.method.clone(),
                    hyperparameters: fam_hp.clone(),
                    epsilon: eps,
                    bin: BIN_LABELS[b].to_string(),
                    n_models: *n,
                    seed: cfg.seed,
                    split_seed,
                });
            }
        }

        let all: rashomon::Bins = [(0..c.members.len()).collect(), vec![], vec![], vec![]];
        for &eps in &cfg.epsilons {
            let filtered = filter_epsilon(&c, &bins, eps)?;
            for (b, members) in filtered.iter().enumerate() {
                let bin = BIN_LABELS[b];
                for &i in members {
                    let m = &c.members[i];
                    ctx.dist_rows(&mut dist, m, &caps[i], eps, bin, &[("train", train), ("test", test)], &attributes, &mut skipped)?;
                    for a in &attributes {
                        let cov = match group_coverage_of(&caps[i], &p.ds, test, a) {
                            Ok(v) => v,
                            Err(e) if is_undefined(&e) => {
                                skipped += 1;
                                continue;
                            }
                            Err(e) => return Err(e),
                        };
                        for (g, v) in cov {
                            groups.push(GroupCoverageRow {
                                dataset: p.name.clone(),
                                family: fam.label.clone(),
                                method: fam.method.clone(),
                                epsilon: eps,
                                bin: bin.to_string(),
                                attribute: a.clone(),
                                group: g,
                                model_id: m.id,
                                run: m.model.provenance.run,
                                hyperparameters: m.model.provenance.hyperparameter_string(),
                                seed: m.model.provenance.forest_seed,
                                split_seed,
                                value: v,
                            });
                        }
                    }
                }
                if !members.is_empty() {
                    for &row in test {
                        let f = rashomon::icf(&caps, members, row)?;
                        icas.push(IcaRow {
                            dataset: p.name.clone(),
                            family: fam.label.clone(),
                            method: fam.method.clone(),
                            hyperparameters: fam_hp.clone(),
                            epsilon: eps,
                            bin: bin.to_string(),
                            n_models: members.len(),
                            row,
                            icf: f,
                            ica: rashomon::ica(f),
                            seed: cfg.seed,
                            split_seed,
                        });
                    }
                }
            }
            // one bin over all transparencies, for the η sweep
            let whole = filter_epsilon(&c, &all, eps)?;
            for &i in &whole[0] {
                ctx.dist_rows(&mut dist, &c.members[i], &caps[i], eps, ALL_BINS, &[("test", test)], &attributes, &mut skipped)?;
            }

            for a in &attributes {
                let per_bin: Vec<Vec<f64>> = filtered
                    .iter()
                    .map(|members| {
                        members
                            .iter()
                            .filter_map(|&i| crate::hybrid::icd_of(&caps[i], &p.ds, test, a).ok())
                            .collect()
                    })
                    .collect();
                for v in classify_transitions(&per_bin, cfg.alpha)? {
                    verdicts.push(VerdictRow {
                        dataset: p.name.clone(),
                        method: fam.label.clone(),
                        attribute: a.clone(),
                        epsilon: eps,
                        transition: v.label(),
                        u: v.u_statistic,
                        p_raw: v.p_raw,
                        p_adj: v.p_adjusted,
                        direction: v.direction,
                        hyperparameters: fam_hp.clone(),
                        seed: cfg.seed,
                        split_seed,
                    });
                }
            }
        }
    }
    if skipped > 0 {
        warn!("{skipped} metric values undefined on their subset (a group with no rows or no positives) and omitted");
    }
    let dir = layout.audit();
    write_csv(&dir.join(DISTRIBUTIONS), &dist)?;
    write_csv(&dir.join(GROUP_COVERAGE), &groups)?;
    write_csv(&dir.join(ICA), &icas)?;
    write_csv(&dir.join(GROWTH), &growth)?;
    write_csv(&dir.join(VERDICTS), &verdicts)?;
    write_csv(&dir.join(FAILURES), &failures)?;
    let prevalence = if verdicts.is_empty() {
        Vec::new()
    } else {
        prevalence_table(&verdicts, cfg.bell_rule)?
    };
    let file = dir.join(PREVALENCE);
    let f = fs::File::create(&file).map_err(|e| Error::io(&file, e))?;
    write_prevalence(f, &prevalence)?;
    info!("audit written to {}", dir.display());
    Ok(())
}

/// Box-plot statistics for one group of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub dataset: String,
    pub family: String,
    pub method: String,
    pub variant: String,
    pub mitigated_attribute: String,
    pub eta: String,
    pub epsilon: f64,
    pub bin: String,
    pub subset: String,
    pub metric: String,
    pub attribute: String,
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
    pub std: f64,
    pub seed: u64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceReportRow {
    pub dataset: String,
    pub method: String,
    pub epsilon: f64,
    pub settings: usize,
    pub bell_like: f64,
    pub mixed: f64,
    pub seed: u64,
    pub split_seed: u64,
}

pub const FIG2: &str = "fig2_icd_boxes.csv";
pub const FIG3: &str = "fig3_group_coverage.csv";
pub const FIG4: &str = "fig4_ica_boxes.csv";
pub const FIG5_6: &str = "fig5_6_mitigation.csv";
pub const FIG7: &str = "fig7_eta_sweep.csv";
pub const GROWTH_REPORT: &str = "appendix_growth.csv";
pub const TABLE1: &str = "table1_prevalence.csv";

/// Group key for box rows: everything except the statistics.
type BoxKey = (String, String, String, String, String, String, u64, String, String, String, String, String);

fn bin_order(bin: &str) -> usize {
    BIN_LABELS.iter().position(|b| *b == bin).unwrap_or(BIN_LABELS.len())
}

fn box_rows(groups: BTreeMap<BoxKey, Vec<f64>>, seed: u64, split_seed: u64) -> Vec<BoxRow> {
    let mut rows: Vec<BoxRow> = groups
        .into_iter()
        .filter_map(|(k, values)| {
            let n = values.len();
            let s = Summary::of(values.into_iter().enumerate().collect())?;
            let var = s.values.iter().map(|v| (v.1 - s.mean).powi(2)).sum::<f64>() / n as f64;
            Some(BoxRow {
                dataset: k.0,
                family: k.1,
                method: k.2,
                variant: k.3,
                mitigated_attribute: k.4,
                eta: k.5,
                epsilon: f64::from_bits(k.6),
                bin: k.7,
                subset: k.8,
                metric: k.9,
                attribute: k.10,
                group: k.11,
                n,
                min: s.min,
                q1: s.q1,
                median: s.median,
                mean: s.mean,
                q3: s.q3,
                max: s.max,
                std: var.sqrt(),
                seed,
                split_seed,
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.family, &a.variant, a.epsilon.to_bits(), &a.metric, &a.attribute, &a.group, bin_order(&a.bin))
            .cmp(&(&b.family, &b.variant, b.epsilon.to_bits(), &b.metric, &b.attribute, &b.group, bin_order(&b.bin)))
    });
    rows
}

fn variant_of(mitigated_attribute: &str) -> &'static str {
    if mitigated_attribute.is_empty() {
        "unconstrained"
    } else {
        "mitigated"
    }
}

/// Aggregates the audit tables into plot-ready CSVs.
pub fn cmd_report(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let audit = layout.audit();
    let dist: Vec<DistributionRow> = read_csv_rows(&audit.join(DISTRIBUTIONS), "audit")?;
    let groups: Vec<GroupCoverageRow> = read_csv_rows(&audit.join(GROUP_COVERAGE), "audit")?;
    let icas: Vec<IcaRow> = read_csv_rows(&audit.join(ICA), "audit")?;
    let growth: Vec<GrowthRow> = read_csv_rows(&audit.join(GROWTH), "audit")?;
    let verdicts: Vec<VerdictRow> = read_csv_rows(&audit.join(VERDICTS), "audit")?;
    let seed = cfg.seed;
    let split_seed = cfg.split_seed();
    let report = layout.report();

    // test ICD per bin, unconstrained families
    let mut fig2: BTreeMap<BoxKey, Vec<f64>> = BTreeMap::new();
    for r in dist.iter().filter(|r| r.metric == "icd" && r.subset == "test" && r.bin != ALL_BINS && r.mitigated_attribute.is_empty()) {
        fig2.entry(key_of(r, "")).or_default().push(r.value);
    }
    write_csv(&report.join(FIG2), &box_rows(fig2, seed, split_seed))?;

    let mut fig3: BTreeMap<BoxKey, Vec<f64>> = BTreeMap::new();
    for r in &groups {
        let k = (
            r.dataset.clone(),
            r.family.clone(),
            r.method.clone(),
            String::new(),
            String::new(),
            String::new(),
            r.epsilon.to_bits(),
            r.bin.clone(),
            "test".to_string(),
            "group_coverage".to_string(),
            r.attribute.clone(),
            r.group.clone(),
        );
        fig3.entry(k).or_default().push(r.value);
    }
    write_csv(&report.join(FIG3), &box_rows(fig3, seed, split_seed))?;

    let mut fig4: BTreeMap<BoxKey, Vec<f64>> = BTreeMap::new();
    for r in &icas {
        let k = (
            r.dataset.clone(),
            r.family.clone(),
            r.method.clone(),
            String::new(),
            String::new(),
            String::new(),
            r.epsilon.to_bits(),
            r.bin.clone(),
            "test".to_string(),
            "ica".to_string(),
            String::new(),
            String::new(),
        );
        fig4.entry(k).or_default().push(r.ica);
    }
    write_csv(&report.join(FIG4), &box_rows(fig4, seed, split_seed))?;

    // unconstrained vs mitigated at the configured η, per mitigated attribute
    let eta = cfg.mitigation.eta.to_string();
    let mitigated: BTreeSet<(String, String)> = dist
        .iter()
        .filter(|r| !r.mitigated_attribute.is_empty() && r.eta == eta)
        .map(|r| (r.method.clone(), r.mitigated_attribute.clone()))
        .collect();
    let mut fig56: BTreeMap<BoxKey, Vec<f64>> = BTreeMap::new();
    for r in dist.iter().filter(|r| r.subset == "test" && r.bin != ALL_BINS) {
        let targets: Vec<String> = if r.mitigated_attribute.is_empty() {
            mitigated
                .iter()
                .filter(|(m, _)| *m == r.method)
                .map(|(_, a)| a.clone())
                .collect()
        } else if r.eta == eta {
            vec![r.mitigated_attribute.clone()]
        } else {
            vec![]
        };
        for a in targets {
            if !r.attribute.is_empty() && r.attribute != a {
                continue;
            }
            let k = (
                r.dataset.clone(),
                r.method.clone(),
                r.method.clone(),
                variant_of(&r.mitigated_attribute).to_string(),
                a,
                eta.clone(),
                r.epsilon.to_bits(),
                r.bin.clone(),
                r.subset.clone(),
                r.metric.clone(),
                r.attribute.clone(),
                String::new(),
            );
            fig56.entry(k).or_default().push(r.value);
        }
    }
    // ICA boxes for the same pairs
    for r in &icas {
        let Some(fam_method) = METHODS.iter().find(|m| r.family == **m || r.family.starts_with(&format!("{m}__"))) else {
            continue;
        };
        for (m, a) in mitigated.iter().filter(|(m, _)| m == fam_method) {
            let mitigated_label = format!("{m}__{}__eta{eta}", sanitize(a));
            let variant = if r.family == *m {
                "unconstrained"
            } else if r.family == mitigated_label {
                "mitigated"
            } else {
                continue;
            };
            let k = (
                r.dataset.clone(),
                m.clone(),
                m.clone(),
                variant.to_string(),
                a.clone(),
                eta.clone(),
                r.epsilon.to_bits(),
                r.bin.clone(),
                "test".to_string(),
                "ica".to_string(),
                String::new(),
                String::new(),
            );
            fig56.entry(k).or_default().push(r.ica);
        }
    }
    write_csv(&report.join(FIG5_6), &box_rows(fig56, seed, split_seed))?;

    // η sweep over the single all-transparency bin
    let mut fig7: BTreeMap<BoxKey, Vec<f64>> = BTreeMap::new();
    for r in dist.iter().filter(|r| r.bin == ALL_BINS && !r.mitigated_attribute.is_empty()) {
        if !r.attribute.is_empty() && r.attribute != r.mitigated_attribute {
            continue;
        }
        if !matches!(r.metric.as_str(), "icd" | "accuracy" | "eo" | "sparsity") {
            continue;
        }
        let k = (
            r.dataset.clone(),
            r.family.clone(),
            r.method.clone(),
            "mitigated".to_string(),
            r.mitigated_attribute.clone(),
            r.eta.clone(),
            r.epsilon.to_bits(),
            r.bin.clone(),
            r.subset.clone(),
            r.metric.clone(),
            r.attribute.clone(),
            String::new(),
        );
        fig7.entry(k).or_default().push(r.value);
    }
    write_csv(&report.join(FIG7), &box_rows(fig7, seed, split_seed))?;

    write_csv(&report.join(GROWTH_REPORT), &growth)?;

    let prevalence: Vec<PrevalenceReportRow> = if verdicts.is_empty() {
        Vec::new()
    } else {
        let dataset = verdicts[0].dataset.clone();
        prevalence_table(&verdicts, cfg.bell_rule)?
            .into_iter()
            .map(|r| PrevalenceReportRow {
                dataset: dataset.clone(),
                method: r.method,
                epsilon: r.epsilon,
                settings: r.settings,
                bell_like: r.bell_like,
                mixed: r.mixed,
                seed,
                split_seed,
            })
            .collect()
    };
    write_csv(&report.join(TABLE1), &prevalence)?;
    write_csv(&report.join(VERDICTS), &verdicts)?;
    info!("report written to {}", report.display());
    Ok(())
}

fn key_of(r: &DistributionRow, group: &str) -> BoxKey {
    (
        r.dataset.clone(),
        r.family.clone(),
        r.method.clone(),
        variant_of(&r.mitigated_attribute).to_string(),
        r.mitigated_attribute.clone(),
        r.eta.clone(),
        r.epsilon.to_bits(),
        r.bin.clone(),
        r.subset.clone(),
        r.metric.clone(),
        r.attribute.clone(),
        group.to_string(),
    )
}

/// Trains one model with the base search (or anneal) settings on the training
/// split and writes `fit/<method>/{model.json, search_log.jsonl}`.
pub fn cmd_fit(cfg: &RunConfig, out: &Path, method: &str) -> Result<HybridModel> {
    cfg.validate()?;
    let layout = Layout::new(out);
    let p = load_prepared(&layout)?;
    let u = load_universe(&layout, &p.ds)?;
    if let Some(a) = &cfg.search.attribute {
        p.ds.group_map(a)?;
    }
    let train = &p.split.train_indices;
    let forest_cfg = cfg.forest.clone().with_seed(rashomon::derive_seed(cfg.seed, 1));
    let mut provenance = Provenance {
        method: method.to_string(),
        forest_seed: forest_cfg.seed,
        optimal: true,
        ..Provenance::default()
    };
    let local = p.ds.select(train);
    let (model, log) = match method {
        "hybrid_pre" => {
            let r = search(&local, &u, &cfg.search, Mode::Pre, None)?;
            provenance.hyperparameters = LearnerSpec::HybridPre(cfg.search.clone()).hyperparameters();
            provenance.optimal = r.optimal;
            (finalize_pre(&p.ds, train, r.prefix, &forest_cfg, provenance)?, r.log)
        }
        "hybrid_post" => {
            let bb = train_forest(&p.ds, train, &forest_cfg)?;
            let hc = bb.predict_rows(&p.ds, train);
            let r = search(&local, &u, &cfg.search, Mode::Post(&hc), None)?;
            provenance.hyperparameters = LearnerSpec::HybridPost(cfg.search.clone()).hyperparameters();
            provenance.optimal = r.optimal;
            (
                HybridModel {
                    prefix: r.prefix,
                    blackbox: bb,
                    provenance,
                },
                r.log,
            )
        }
        "anneal_set" | "anneal_list" => {
            let bb = train_forest(&p.ds, train, &forest_cfg)?;
            let mode = if method == "anneal_set" { AnnealMode::Set } else { AnnealMode::List };
            let a = AnnealConfig { mode, ..cfg.anneal.clone() };
            provenance.hyperparameters = LearnerSpec::Anneal(a.clone()).hyperparameters();
            provenance.optimal = false;
            let (m, r) = anneal_train(&p.ds, train, &u, &bb, &a, provenance)?;
            (m, r.log)
        }
        other => return Err(config_err(format!("unknown method {other:?}; expected one of {METHODS:?}"))),
    };
    let dir = out.join("fit").join(method);
    write_text(&dir.join("model.json"), &model.to_json())?;
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).map_err(|e| Error::io(&dir, e))?;
    write_text(&dir.join("search_log.jsonl"), &String::from_utf8_lossy(&buf))?;
    info!(
        "{method}: {} rules, {} nodes expanded, stop {:?}",
        model.prefix.rules.len(),
        log.nodes_expanded,
        log.stop
    );
    Ok(model)
}

/// Every step in order.
pub fn run_all(cfg: &RunConfig, out: &Path) -> Result<()> {
    cmd_prepare(cfg, out)?;
    cmd_mine(cfg, out)?;
    cmd_train(cfg, out)?;
    cmd_bootstrap(cfg, out)?;
    cmd_audit(cfg, out)?;
    cmd_report(cfg, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = RunConfig::from_json(r#"{"dataset": "d.json"}"#).unwrap();
        assert_eq!(c.n_bootstrap, 1000);
        assert_eq!(c.epsilons, vec![0.01, 0.05]);
        assert_eq!(c.search.max_prefix_len, 10);
        assert!(RunConfig::from_json(r#"{"dataset": "d.json", "methods": ["corels"]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": "d.json", "epsilons": [-0.1]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": "d.json", "mitigation": {"eta": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"dataset": "d.json", "typo": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{}"#).is_err());
        let c = RunConfig::from_json(r#"{"dataset": "d.json", "search": {"lambda": 0.01}}"#).unwrap();
        assert_eq!(c.search.lambda, 0.01);
        assert_eq!(c.search.max_prefix_len, 10);
    }

    #[test]
    fn labels_are_directory_safe() {
        assert_eq!(sanitize("Race/Eth nic"), "Race_Eth_nic");
    }
}
