//! Exact branch-and-bound over ordered rule prefixes, in the two hybrid
//! flavours: `Pre` (black box trained afterwards on what the prefix leaves
//! uncaptured) and `Post` (black box trained beforehand and fixed). Incumbent
//! updates are gated on a minimum transparency and a maximum ICD for one
//! sensitive attribute.
//!
//! Objectives on a training set `S` of size `n`, for a prefix `r` capturing
//! `S_r` with `e_r` misclassified captured rows:
//!
//! * pre:  `(e_r + incons(S \ S_r)) / n + λ|r| + β |S \ S_r| / n`
//! * post: `(e_r + err(h_c, S \ S_r)) / n + λ|r| + β |S \ S_r| / n`
//!
//! The lower bound drops the β term and replaces the uncaptured error by a
//! per-equivalence-class floor that no extension can beat.

use std::cmp::{Ordering, Reverse};
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::blackbox::{train_forest, BlackBox, ForestConfig};
use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::hybrid::{max_rate_gap, HybridModel, Prefix, Provenance, Rule};
use crate::rules::RuleUniverse;

/// Absolute slack added before pruning on a bound, so rounding in the bound
/// arithmetic never discards a prefix whose objective ties the incumbent.
const PRUNE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Per-rule penalty.
    pub lambda: f64,
    /// Penalty per unit of black-box deferral.
    pub beta: f64,
    /// Minimum training transparency of an incumbent.
    pub c_min: f64,
    /// Maximum training ICD of an incumbent on `attribute`.
    pub eta: f64,
    pub attribute: Option<String>,
    pub max_prefix_len: usize,
    pub time_limit: Option<f64>,
    pub memory_limit: Option<u64>,
    /// Deterministic budget on expanded nodes.
    pub node_limit: Option<u64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lambda: 0.001,
            beta: 0.0,
            c_min: 0.0,
            eta: 1.0,
            attribute: None,
            max_prefix_len: 10,
            time_limit: Some(300.0),
            memory_limit: Some(8 << 30),
            node_limit: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0) || !(self.beta >= 0.0) {
            return bad(format!("lambda and beta must be >= 0: {} {}", self.lambda, self.beta));
        }
        if !(0.0..=1.0).contains(&self.c_min) {
            return bad(format!("c_min must be in [0, 1], got {}", self.c_min));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must be in (0, 1], got {}", self.eta));
        }
        if self.time_limit.is_some_and(|t| !(t > 0.0)) {
            return bad("time_limit must be positive".into());
        }
        Ok(())
    }
}

/// Which objective the search minimizes.
#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Pre,
    /// Black-box predictions on the training rows.
    Post(&'a Bitset),
}

impl Mode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Pre => "pre",
            Mode::Post(_) => "post",
        }
    }
}

/// Minimum number of errors any deterministic classifier makes on `rows`:
/// over classes of identical feature vectors, the minority-label count.
pub fn incons(ds: &BinaryDataset, rows: &Bitset) -> usize {
    let mut classes: HashMap<&[u64], (usize, usize)> = HashMap::new();
    for i in rows.iter_ones() {
        let e = classes.entry(ds.row_key(i)).or_default();
        if ds.label(i) {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    classes.values().map(|&(p, q)| p.min(q)).sum()
}

/// Majority label of the captured rows; ties and empty sets go to 1.
pub fn best_consequent(ds: &BinaryDataset, captured: &Bitset) -> bool {
    let pos = captured.count_and(ds.labels());
    2 * pos >= captured.count_ones()
}

/// Groups of identical rows.
fn equivalence_classes(ds: &BinaryDataset) -> Vec<Vec<usize>> {
    let mut index: HashMap<&[u64], usize> = HashMap::new();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in 0..ds.n() {
        let next = classes.len();
        let c = *index.entry(ds.row_key(i)).or_insert(next);
        if c == next {
            classes.push(Vec::new());
        }
        classes[c].push(i);
    }
    classes
}

/// Rows whose count over any class-closed set gives that set's error floor.
/// With `wrong` (black-box errors), each class contributes the smaller of
/// its black-box errors and its minority count.
fn floor_mask(ds: &BinaryDataset, wrong: Option<&Bitset>) -> Bitset {
    let mut mask = Bitset::zeros(ds.n());
    for class in equivalence_classes(ds) {
        let pos: Vec<usize> = class.iter().copied().filter(|&i| ds.label(i)).collect();
        let neg: Vec<usize> = class.iter().copied().filter(|&i| !ds.label(i)).collect();
        let minority = if pos.len() <= neg.len() { pos } else { neg };
        let chosen = match wrong {
            Some(w) => {
                let errs: Vec<usize> = class.iter().copied().filter(|&i| w.get(i)).collect();
                if errs.len() <= minority.len() {
                    errs
                } else {
                    minority
                }
            }
            None => minority,
        };
        for i in chosen {
            mask.set(i, true);
        }
    }
    mask
}

/// Objective from counts; the one formula used everywhere.
#[inline]
fn objective_value(errors: usize, len: usize, uncaptured: usize, n: usize, cfg: &SearchConfig) -> f64 {
    errors as f64 / n as f64 + cfg.lambda * len as f64 + cfg.beta * uncaptured as f64 / n as f64
}

#[inline]
fn bound_value(errors: usize, len: usize, n: usize, lambda: f64) -> f64 {
    errors as f64 / n as f64 + lambda * len as f64
}

/// Errors made by a prefix's rules on the rows they capture, plus the capture.
fn prefix_errors(ds: &BinaryDataset, prefix: &Prefix) -> (usize, Bitset) {
    let cap = prefix.captures(ds);
    let errors = prefix
        .rules
        .iter()
        .zip(&cap.per_rule)
        .map(|(r, rows)| {
            let pos = rows.count_and(ds.labels());
            if r.consequent {
                rows.count_ones() - pos
            } else {
                pos
            }
        })
        .sum();
    (errors, cap.total)
}

fn check_training_set(ds: &BinaryDataset) -> Result<()> {
    if ds.n() == 0 {
        Err(Error::EmptySubset)
    } else {
        Ok(())
    }
}

/// Pre-mode objective of `prefix` on training set `ds`.
pub fn objective_pre(ds: &BinaryDataset, prefix: &Prefix, cfg: &SearchConfig) -> Result<f64> {
    check_training_set(ds)?;
    let (errors, cap) = prefix_errors(ds, prefix);
    let unc = cap.not();
    Ok(objective_value(
        errors + incons(ds, &unc),
        prefix.len(),
        unc.count_ones(),
        ds.n(),
        cfg,
    ))
}

/// Post-mode objective; `hc` holds black-box predictions on the rows of `ds`.
pub fn objective_post(
    ds: &BinaryDataset,
    prefix: &Prefix,
    hc: &Bitset,
    cfg: &SearchConfig,
) -> Result<f64> {
    check_training_set(ds)?;
    check_len(ds, hc)?;
    let (errors, cap) = prefix_errors(ds, prefix);
    let unc = cap.not();
    let hc_errors = unc.count_and_not(&xnor(hc, ds.labels()));
    Ok(objective_value(
        errors + hc_errors,
        prefix.len(),
        unc.count_ones(),
        ds.n(),
        cfg,
    ))
}

/// Admissible lower bound on the objective of `prefix` and of every extension.
pub fn lower_bound(
    ds: &BinaryDataset,
    prefix: &Prefix,
    cfg: &SearchConfig,
    mode: Mode<'_>,
) -> Result<f64> {
    check_training_set(ds)?;
    let wrong = match mode {
        Mode::Pre => None,
        Mode::Post(hc) => {
            check_len(ds, hc)?;
            Some(xnor(hc, ds.labels()).not())
        }
    };
    let floor = floor_mask(ds, wrong.as_ref());
    let (errors, cap) = prefix_errors(ds, prefix);
    let unc_floor = floor.count_and_not(&cap);
    Ok(bound_value(errors + unc_floor, prefix.len(), ds.n(), cfg.lambda))
}

/// Training ICD of the prefix's capture set on `attribute`.
pub fn prefix_icd(ds: &BinaryDataset, prefix: &Prefix, attribute: &str) -> Result<f64> {
    let groups = ds.group_map(attribute)?;
    let cap = prefix.capture(ds);
    let hits: Vec<usize> = (0..groups.n_groups())
        .map(|g| groups.members(g).count_and(&cap))
        .collect();
    max_rate_gap(&hits, &groups.sizes()).ok_or_else(|| Error::IcdUndefined(attribute.into()))
}

fn check_len(ds: &BinaryDataset, b: &Bitset) -> Result<()> {
    if b.len() != ds.n() {
        return Err(Error::LengthMismatch {
            expected: ds.n(),
            found: b.len(),
        });
    }
    Ok(())
}

/// Rows where two bitsets agree.
fn xnor(a: &Bitset, b: &Bitset) -> Bitset {
    a.and(b).or(&a.not().and(&b.not()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncumbentUpdate {
    pub nodes_expanded: u64,
    pub objective: f64,
    pub transparency: f64,
    pub icd: Option<f64>,
    pub prefix_len: usize,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Exhausted,
    TimeLimit,
    MemoryLimit,
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    pub mode: String,
    pub nodes_expanded: u64,
    pub nodes_pruned: u64,
    pub symmetric_skips: u64,
    pub max_queue: usize,
    pub updates: Vec<IncumbentUpdate>,
    pub stop: StopReason,
    pub elapsed_secs: f64,
}

impl SearchLog {
    /// JSON lines: one `incumbent` record per update, then one `summary` record.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for u in &self.updates {
            let line = serde_json::json!({"event": "incumbent", "update": u});
            writeln!(w, "{line}")?;
        }
        let summary = serde_json::json!({
            "event": "summary",
            "mode": self.mode,
            "nodes_expanded": self.nodes_expanded,
            "nodes_pruned": self.nodes_pruned,
            "symmetric_skips": self.symmetric_skips,
            "max_queue": self.max_queue,
            "stop": self.stop,
            "elapsed_secs": self.elapsed_secs,
        });
        writeln!(w, "{summary}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub prefix: Prefix,
    pub objective: f64,
    pub transparency: f64,
    pub icd: Option<f64>,
    /// True when the queue was exhausted, so the result is the constrained optimum.
    pub optimal: bool,
    pub log: SearchLog,
}

struct Problem<'a> {
    n: usize,
    labels: &'a Bitset,
    supports: Vec<Bitset>,
    /// Rows whose count over the uncaptured set is the objective's error term.
    error_mask: Bitset,
    /// Same, for the bound.
    floor_mask: Bitset,
    groups: Option<(Vec<Bitset>, Vec<usize>)>,
    cfg: &'a SearchConfig,
}

impl Problem<'_> {
    fn feasible(&self, capture: &Bitset) -> (bool, f64, Option<f64>) {
        let covered = capture.count_ones();
        let transparency = covered as f64 / self.n as f64;
        let icd = self.groups.as_ref().map(|(members, sizes)| {
            let hits: Vec<usize> = members.iter().map(|m| m.count_and(capture)).collect();
            max_rate_gap(&hits, sizes).expect("checked at setup")
        });
        let ok = transparency >= self.cfg.c_min && icd.is_none_or(|v| v <= self.cfg.eta);
        (ok, transparency, icd)
    }
}

#[derive(Debug)]
struct Node {
    rules: Vec<(u32, bool)>,
    capture: Bitset,
    errors: usize,
    lb: f64,
    counter: u64,
}

impl Node {
    fn bytes(&self) -> usize {
        std::mem::size_of::<Node>() + self.capture.words().len() * 8 + self.rules.len() * 8
    }
}

struct Queued(Node);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .lb
            .total_cmp(&other.0.lb)
            .then(self.0.counter.cmp(&other.0.counter))
    }
}

/// Best-first branch-and-bound over prefixes of at most `cfg.max_prefix_len`
/// rules drawn from `universe`, on training set `ds`.
///
/// `initial` must satisfy the constraints; `None` uses the constant majority
/// prefix, which always does. Prefixes with the same antecedent set capture
/// the same rows, so only the one with fewest captured errors is expanded.
pub fn search(
    ds: &BinaryDataset,
    universe: &RuleUniverse,
    cfg: &SearchConfig,
    mode: Mode<'_>,
    initial: Option<Prefix>,
) -> Result<SearchResult> {
    cfg.validate()?;
    check_training_set(ds)?;
    if universe.len() > u32::MAX as usize {
        return Err(Error::Config("rule universe too large".into()));
    }
    let start = Instant::now();
    let n = ds.n();

    let wrong = match mode {
        Mode::Pre => None,
        Mode::Post(hc) => {
            check_len(ds, hc)?;
            Some(xnor(hc, ds.labels()).not())
        }
    };
    let floor = floor_mask(ds, wrong.as_ref());
    let error_mask = wrong.unwrap_or_else(|| floor.clone());
    let groups = match &cfg.attribute {
        None => None,
        Some(a) => {
            let g = ds.group_map(a)?;
            let sizes = g.sizes();
            if sizes.iter().filter(|&&s| s > 0).count() < 2 {
                return Err(Error::IcdUndefined(a.clone()));
            }
            Some(((0..g.n_groups()).map(|i| g.members(i).clone()).collect(), sizes))
        }
    };
    let problem = Problem {
        n,
        labels: ds.labels(),
        supports: universe
            .antecedents
            .iter()
            .map(|a| a.condition.eval(ds))
            .collect(),
        error_mask,
        floor_mask: floor,
        groups,
        cfg,
    };

    let mut log = SearchLog {
        mode: mode.name().to_string(),
        nodes_expanded: 0,
        nodes_pruned: 0,
        symmetric_skips: 0,
        max_queue: 0,
        updates: Vec::new(),
        stop: StopReason::Exhausted,
        elapsed_secs: 0.0,
    };

    // incumbent from the initial prefix
    let initial = initial.unwrap_or_else(|| Prefix::constant(best_consequent(ds, &Bitset::ones(n))));
    let (init_errors, init_cap) = prefix_errors(ds, &initial);
    let init_unc = init_cap.not();
    let (ok, transparency, icd) = problem.feasible(&init_cap);
    if !ok {
        return Err(Error::InfeasibleInitial(format!(
            "transparency {transparency}, icd {icd:?}"
        )));
    }
    let mut best_prefix = initial.clone();
    let mut best_rules: Option<Vec<(u32, bool)>> = None;
    let mut best = objective_value(
        init_errors + init_unc.count_and(&problem.error_mask),
        initial.len(),
        init_unc.count_ones(),
        n,
        cfg,
    );
    let mut best_stats = (transparency, icd);
    let record = |log: &mut SearchLog, objective, transparency, icd, len| {
        log.updates.push(IncumbentUpdate {
            nodes_expanded: log.nodes_expanded,
            objective,
            transparency,
            icd,
            prefix_len: len,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
    };
    record(&mut log, best, transparency, icd, initial.len());

    // the empty prefix
    let root = Node {
        rules: Vec::new(),
        capture: Bitset::zeros(n),
        errors: 0,
        lb: bound_value(problem.floor_mask.count_ones(), 0, n, cfg.lambda),
        counter: 0,
    };
    {
        let z = objective_value(problem.error_mask.count_ones(), 0, n, n, cfg);
        let (ok, t, icd) = problem.feasible(&root.capture);
        if ok && z < best {
            best = z;
            best_rules = Some(Vec::new());
            best_stats = (t, icd);
            record(&mut log, z, t, icd, 0);
        }
    }

    let mut counter = 1u64;
    let mut heap = BinaryHeap::new();
    let mut bytes = root.bytes();
    heap.push(Reverse(Queued(root)));
    let mut seen: HashMap<Vec<u32>, (usize, u64)> = HashMap::new();
    let time_limit = cfg.time_limit.map(Duration::from_secs_f64);

    while let Some(Reverse(Queued(node))) = heap.pop() {
        bytes -= node.bytes();
        if node.lb >= best + PRUNE_SLACK {
            // best-first: every remaining node has a bound at least this large
            log.nodes_pruned += 1 + heap.len() as u64;
            heap.clear();
            break;
        }
        if !node.rules.is_empty() {
            let mut key: Vec<u32> = node.rules.iter().map(|r| r.0).collect();
            key.sort_unstable();
            if seen.get(&key).is_some_and(|&(_, c)| c != node.counter) {
                log.symmetric_skips += 1;
                continue;
            }
        }
        if node.rules.len() >= cfg.max_prefix_len {
            continue;
        }
        if cfg.node_limit.is_some_and(|l| log.nodes_expanded >= l) {
            log.stop = StopReason::NodeLimit;
            break;
        }
        if log.nodes_expanded % 256 == 0 && time_limit.is_some_and(|t| start.elapsed() >= t) {
            log.stop = StopReason::TimeLimit;
            break;
        }
        log.nodes_expanded += 1;

        let len = node.rules.len() + 1;
        for (a, support) in problem.supports.iter().enumerate() {
            if node.rules.iter().any(|r| r.0 as usize == a) {
                continue;
            }
            let new = support.and_not(&node.capture);
            let k = new.count_ones();
            if k == 0 {
                // captures nothing: same rows as the parent, one more rule
                log.nodes_pruned += 1;
                continue;
            }
            let pos = new.count_and(problem.labels);
            let q = 2 * pos >= k;
            let errors = node.errors + if q { k - pos } else { pos };
            let mut capture = node.capture.clone();
            capture.or_with(&new);
            let unc_floor = problem.floor_mask.count_and_not(&capture);
            let lb = bound_value(errors + unc_floor, len, n, cfg.lambda);
            if lb >= best + PRUNE_SLACK {
                log.nodes_pruned += 1;
                continue;
            }
            let covered = capture.count_ones();
            let unc_errors = problem.error_mask.count_and_not(&capture);
            let z = objective_value(errors + unc_errors, len, n - covered, n, cfg);
            let mut rules = node.rules.clone();
            rules.push((a as u32, q));
            if z < best {
                let (ok, t, icd) = problem.feasible(&capture);
                if ok {
                    best = z;
                    best_rules = Some(rules.clone());
                    best_stats = (t, icd);
                    record(&mut log, z, t, icd, len);
                }
            }
            // every extension adds a rule and loses no captured error
            if len >= cfg.max_prefix_len || lb + cfg.lambda >= best + PRUNE_SLACK {
                continue;
            }
            let mut key: Vec<u32> = rules.iter().map(|r| r.0).collect();
            key.sort_unstable();
            match seen.entry(key) {
                Entry::Occupied(mut e) => {
                    if e.get().0 <= errors {
                        log.symmetric_skips += 1;
                        continue;
                    }
                    e.insert((errors, counter));
                }
                Entry::Vacant(e) => {
                    bytes += e.key().len() * 4 + 48;
                    e.insert((errors, counter));
                }
            }
            let child = Node {
                rules,
                capture,
                errors,
                lb,
                counter,
            };
            counter += 1;
            bytes += child.bytes();
            heap.push(Reverse(Queued(child)));
        }
        log.max_queue = log.max_queue.max(heap.len());
        if cfg.memory_limit.is_some_and(|m| bytes as u64 > m) {
            log.stop = StopReason::MemoryLimit;
            break;
        }
    }

    if let Some(rules) = best_rules {
        best_prefix = Prefix::new(
            rules
                .into_iter()
                .map(|(a, q)| Rule {
                    condition: universe.antecedents[a as usize].condition.clone(),
                    consequent: q,
                })
                .collect(),
        );
    }
    log.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(SearchResult {
        prefix: best_prefix,
        objective: best,
        transparency: best_stats.0,
        icd: best_stats.1,
        optimal: log.stop == StopReason::Exhausted,
        log,
    })
}

/// Trains the black box on the training rows the prefix leaves uncaptured
/// and assembles the hybrid model.
pub fn finalize_pre(
    ds: &BinaryDataset,
    train: &[usize],
    prefix: Prefix,
    forest: &ForestConfig,
    provenance: Provenance,
) -> Result<HybridModel> {
    let uncaptured = uncaptured_rows(ds, train, &prefix);
    let blackbox = if uncaptured.is_empty() {
        let pos = train.iter().filter(|&&i| ds.label(i)).count();
        BlackBox::Constant(2 * pos >= train.len())
    } else {
        train_forest(ds, &uncaptured, forest)?
    };
    Ok(HybridModel {
        prefix,
        blackbox,
        provenance,
    })
}

/// Rows of `train` (with multiplicity) not captured by `prefix`.
pub fn uncaptured_rows(ds: &BinaryDataset, train: &[usize], prefix: &Prefix) -> Vec<usize> {
    let cap = prefix.capture(ds);
    train.iter().copied().filter(|&i| !cap.get(i)).collect()
}
