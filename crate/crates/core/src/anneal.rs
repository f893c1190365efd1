//! Simulated annealing over rule prefixes against the post-mode objective,
//! with a fixed pre-trained black box. Used as the heuristic learner family
//! in multiplicity audits; one weight is swept and a companion weight is held
//! fixed.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::blackbox::BlackBox;
use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::hybrid::{HybridModel, Prefix, Provenance, Rule};
use crate::rules::RuleUniverse;
use crate::search::{IncumbentUpdate, SearchLog, StopReason};

/// The swept weight. `Transparency(β)` penalizes deferral to the black box
/// with λ set to the companion; `Sparsity(λ)` penalizes rules with β set to
/// the companion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealWeight {
    Transparency(f64),
    Sparsity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealMode {
    /// Rules kept in antecedent-id order; no reorder move.
    Set,
    List,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealConfig {
    pub weight: AnnealWeight,
    pub companion: f64,
    pub iterations: usize,
    pub initial_temperature: f64,
    pub cooling: f64,
    pub seed: u64,
    pub mode: AnnealMode,
    pub max_rules: usize,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            weight: AnnealWeight::Transparency(0.1),
            companion: 0.001,
            iterations: 2000,
            initial_temperature: 0.01,
            cooling: 0.998,
            seed: 0,
            mode: AnnealMode::Set,
            max_rules: 10,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        let w = match self.weight {
            AnnealWeight::Transparency(w) | AnnealWeight::Sparsity(w) => w,
        };
        let bad = |m: String| Err(Error::Config(m));
        if !(w >= 0.0) || !(self.companion >= 0.0) {
            return bad(format!("anneal weights must be >= 0: {w} {}", self.companion));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if !(self.initial_temperature > 0.0) {
            return bad("initial temperature must be positive".into());
        }
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return bad(format!("cooling rate must be in (0, 1), got {}", self.cooling));
        }
        if self.max_rules == 0 {
            return bad("max_rules must be >= 1".into());
        }
        Ok(())
    }

    /// (λ, β) of the post-mode objective.
    pub fn lambda_beta(&self) -> (f64, f64) {
        match self.weight {
            AnnealWeight::Transparency(b) => (self.companion, b),
            AnnealWeight::Sparsity(l) => (l, self.companion),
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self.mode {
            AnnealMode::Set => "anneal_set",
            AnnealMode::List => "anneal_list",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealResult {
    pub prefix: Prefix,
    pub objective: f64,
    pub transparency: f64,
    pub log: SearchLog,
}

struct Evaluator<'a> {
    n: usize,
    labels: &'a Bitset,
    supports: Vec<Bitset>,
    wrong: Bitset,
    lambda: f64,
    beta: f64,
}

impl Evaluator<'_> {
    /// Objective, consequents and coverage of an ordered list of antecedents.
    fn eval(&self, state: &[usize]) -> (f64, Vec<bool>, usize) {
        let mut cap = Bitset::zeros(self.n);
        let mut errors = 0;
        let mut qs = Vec::with_capacity(state.len());
        for &a in state {
            let new = self.supports[a].and_not(&cap);
            let k = new.count_ones();
            let pos = new.count_and(self.labels);
            let q = 2 * pos >= k;
            errors += if q { k - pos } else { pos };
            qs.push(q);
            cap.or_with(&new);
        }
        let covered = cap.count_ones();
        errors += self.wrong.count_and_not(&cap);
        let n = self.n as f64;
        let z = errors as f64 / n
            + self.lambda * state.len() as f64
            + self.beta * (self.n - covered) as f64 / n;
        (z, qs, covered)
    }
}

/// Anneals on training set `ds`; `hc` holds black-box predictions on its rows.
/// Starts from the empty prefix.
pub fn anneal(
    ds: &BinaryDataset,
    universe: &RuleUniverse,
    hc: &Bitset,
    cfg: &AnnealConfig,
) -> Result<AnnealResult> {
    cfg.validate()?;
    if universe.is_empty() {
        return Err(Error::EmptyRuleUniverse);
    }
    if ds.n() == 0 {
        return Err(Error::EmptySubset);
    }
    if hc.len() != ds.n() {
        return Err(Error::LengthMismatch {
            expected: ds.n(),
            found: hc.len(),
        });
    }
    let start = Instant::now();
    let (lambda, beta) = cfg.lambda_beta();
    let labels = ds.labels();
    let wrong = hc.and_not(labels).or(&labels.and_not(hc));
    let ev = Evaluator {
        n: ds.n(),
        labels,
        supports: universe
            .antecedents
            .iter()
            .map(|a| a.condition.eval(ds))
            .collect(),
        wrong,
        lambda,
        beta,
    };
    let m = universe.len();
    let max_rules = cfg.max_rules.min(m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut state: Vec<usize> = Vec::new();
    let (mut z, _, covered) = ev.eval(&state);
    let mut best = (state.clone(), z);
    let mut log = SearchLog {
        mode: cfg.method_name().to_string(),
        nodes_expanded: 0,
        nodes_pruned: 0,
        symmetric_skips: 0,
        max_queue: 1,
        updates: Vec::new(),
        stop: StopReason::Exhausted,
        elapsed_secs: 0.0,
    };
    let record = |log: &mut SearchLog, objective: f64, covered: usize, len: usize| {
        log.updates.push(IncumbentUpdate {
            nodes_expanded: log.nodes_expanded,
            objective,
            transparency: covered as f64 / ds.n() as f64,
            icd: None,
            prefix_len: len,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
    };
    record(&mut log, z, covered, 0);

    let mut temperature = cfg.initial_temperature;
    for _ in 0..cfg.iterations {
        log.nodes_expanded += 1;
        let Some(candidate) = propose(&state, m, max_rules, cfg.mode, &mut rng) else {
            log.nodes_pruned += 1;
            continue;
        };
        let (zc, _, covered) = ev.eval(&candidate);
        let delta = zc - z;
        let accept = delta <= 0.0 || rng.gen::<f64>() < (-delta / temperature).exp();
        if accept {
            state = candidate;
            z = zc;
            if z < best.1 {
                best = (state.clone(), z);
                record(&mut log, z, covered, state.len());
            }
        }
        temperature *= cfg.cooling;
    }

    let (state, objective) = best;
    let (_, qs, covered) = ev.eval(&state);
    let prefix = Prefix::new(
        state
            .iter()
            .zip(qs)
            .map(|(&a, q)| Rule {
                condition: universe.antecedents[a].condition.clone(),
                consequent: q,
            })
            .collect(),
    );
    log.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(AnnealResult {
        prefix,
        objective,
        transparency: covered as f64 / ds.n() as f64,
        log,
    })
}

/// One random neighbour, or `None` when the drawn move is impossible.
fn propose(
    state: &[usize],
    m: usize,
    max_rules: usize,
    mode: AnnealMode,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let n_moves = if mode == AnnealMode::List { 4 } else { 3 };
    let fresh = |rng: &mut ChaCha8Rng| -> Option<usize> {
        if state.len() >= m {
            return None;
        }
        loop {
            let a = rng.gen_range(0..m);
            if !state.contains(&a) {
                return Some(a);
            }
        }
    };
    let mut next = state.to_vec();
    match rng.gen_range(0..n_moves) {
        0 => {
            if state.len() >= max_rules {
                return None;
            }
            let a = fresh(rng)?;
            let at = rng.gen_range(0..=state.len());
            next.insert(at, a);
        }
        1 => {
            if state.is_empty() {
                return None;
            }
            next.remove(rng.gen_range(0..state.len()));
        }
        2 => {
            if state.is_empty() {
                return None;
            }
            let a = fresh(rng)?;
            let at = rng.gen_range(0..state.len());
            next[at] = a;
        }
        _ => {
            if state.len() < 2 {
                return None;
            }
            let i = rng.gen_range(0..state.len());
            let j = rng.gen_range(0..state.len());
            if i == j {
                return None;
            }
            next.swap(i, j);
        }
    }
    if mode == AnnealMode::Set {
        next.sort_unstable();
    }
    Some(next)
}

/// Anneals on the rows `train` of `ds` against a black box already trained
/// on them, and wraps the result as a hybrid model.
pub fn anneal_train(
    ds: &BinaryDataset,
    train: &[usize],
    universe: &RuleUniverse,
    blackbox: &BlackBox,
    cfg: &AnnealConfig,
    provenance: Provenance,
) -> Result<(HybridModel, AnnealResult)> {
    let local = ds.select(train);
    let hc = blackbox.predict_rows(ds, train);
    let result = anneal(&local, universe, &hc, cfg)?;
    let model = HybridModel {
        prefix: result.prefix.clone(),
        blackbox: blackbox.clone(),
        provenance,
    };
    Ok((model, result))
}
