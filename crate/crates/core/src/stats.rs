//! Rank tests for comparing ICD distributions across adjacent transparency
//! bins, Holm adjustment, and classification of the resulting patterns.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Combined sample size up to which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U of the first sample: pairs (x in a, y in b) with x > y, ties counting ½.
    pub u: f64,
    pub p: f64,
}

/// Doubled midranks of the pooled sample (integers), plus the tie-group sizes.
fn doubled_midranks(a: &[f64], b: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks = vec![0u64; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1..=j averaged, doubled: (i + 1 + j)
        for p in &pooled[i..j] {
            ranks[p.1] = (i + 1 + j) as u64;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySubset);
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Config("NaN in rank test sample".into()));
    }
    Ok(())
}

fn u_of(rank_sum2: u64, n1: usize) -> f64 {
    rank_sum2 as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0
}

/// Two-sided Mann-Whitney U test; exact for combined size ≤ 20, normal
/// approximation with tie and continuity correction above.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.len() + b.len() <= EXACT_MAX_N {
        mann_whitney_u_exact(a, b)
    } else {
        mann_whitney_u_normal(a, b)
    }
}

/// Exact two-sided test: the probability, over all equally likely splits of
/// the pooled midranks, of a rank sum at least as far from its mean.
pub fn mann_whitney_u_exact(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    check_samples(a, b)?;
    let (ranks, _) = doubled_midranks(a, b);
    let n1 = a.len();
    let n = ranks.len();
    let observed: u64 = ranks[..n1].iter().sum();
    let max_sum: usize = ranks.iter().sum::<u64>() as usize;
    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0f64; max_sum + 1]; n1 + 1];
    ways[0][0] = 1.0;
    for &r in &ranks {
        let r = r as usize;
        for k in (1..=n1).rev() {
            let (lo, hi) = ways.split_at_mut(k);
            let prev = &lo[k - 1];
            let cur = &mut hi[0];
            for s in (r..=max_sum).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    // doubled mean of the rank sum is n1 (N + 1)
    let centre = (n1 * (n + 1)) as i64;
    let dev = (observed as i64 - centre).abs();
    let total: f64 = ways[n1].iter().sum();
    let extreme: f64 = ways[n1]
        .iter()
        .enumerate()
        .filter(|&(s, &w)| w > 0.0 && (s as i64 - centre).abs() >= dev)
        .map(|(_, &w)| w)
        .sum();
    Ok(MannWhitney {
        u: u_of(observed, n1),
        p: (extreme / total).min(1.0),
    })
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_u_normal(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    check_samples(a, b)?;
    let (ranks, ties) = doubled_midranks(a, b);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let u = u_of(ranks[..a.len()].iter().sum(), a.len());
    let mu = n1 * n2 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term);
    if !(var > 0.0) {
        return Ok(MannWhitney { u, p: 1.0 });
    }
    let z = ((u - mu).abs() - 0.5) / var.sqrt();
    let p = (erfc(z / std::f64::consts::SQRT_2)).clamp(0.0, 1.0);
    Ok(MannWhitney { u, p })
}

/// Holm step-down adjustment, returned in the input order.
pub fn holm_adjust(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Config(format!("p-value out of [0, 1]: {p}")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (k, &i) in order.iter().enumerate() {
        running = running.max(((m - k) as f64 * p_values[i]).min(1.0));
        out[i] = running;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Up,
    Down,
    Flat,
    Undefined,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "UP",
            Direction::Down => "DOWN",
            Direction::Flat => "FLAT",
            Direction::Undefined => "UNDEFINED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionVerdict {
    /// Zero-based bin indices, `(k, k + 1)`.
    pub pair: (usize, usize),
    pub u_statistic: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_adjusted: Option<f64>,
    pub direction: Direction,
}

impl TransitionVerdict {
    pub fn label(&self) -> String {
        format!("Q{}-Q{}", self.pair.0 + 1, self.pair.1 + 1)
    }
}

/// Median with linear interpolation; `values` nonempty.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        (v[m / 2 - 1] + v[m / 2]) / 2.0
    }
}

/// Tests each pair of adjacent bins; Holm correction runs over the defined
/// tests only. A transition touching an empty bin is `Undefined`.
pub fn classify_transitions(bins: &[Vec<f64>], alpha: f64) -> Result<Vec<TransitionVerdict>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let mut verdicts = Vec::new();
    let mut raw = Vec::new();
    for k in 0..bins.len().saturating_sub(1) {
        let (a, b) = (&bins[k], &bins[k + 1]);
        let mut v = TransitionVerdict {
            pair: (k, k + 1),
            u_statistic: None,
            p_raw: None,
            p_adjusted: None,
            direction: Direction::Undefined,
        };
        if !a.is_empty() && !b.is_empty() {
            let t = mann_whitney_u(a, b)?;
            v.u_statistic = Some(t.u);
            v.p_raw = Some(t.p);
            raw.push((verdicts.len(), t.p));
        }
        verdicts.push(v);
    }
    let adjusted = holm_adjust(&raw.iter().map(|r| r.1).collect::<Vec<_>>())?;
    for (&(i, _), p_adj) in raw.iter().zip(adjusted) {
        let v = &mut verdicts[i];
        v.p_adjusted = Some(p_adj);
        let (ma, mb) = (median(&bins[v.pair.0]), median(&bins[v.pair.1]));
        v.direction = if p_adj > alpha || ma == mb {
            Direction::Flat
        } else if mb > ma {
            Direction::Up
        } else {
            Direction::Down
        };
    }
    Ok(verdicts)
}

/// Decision rule for a bell-like sequence. Undefined transitions are dropped
/// first; the sequence needs an `Up` and no `Down` before its last `Up`.
/// `require_decline` additionally demands a `Down` after the last `Up`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BellRule {
    pub require_decline: bool,
}

impl BellRule {
    pub fn is_bell(&self, directions: &[Direction]) -> bool {
        let seq: Vec<Direction> = directions
            .iter()
            .copied()
            .filter(|d| *d != Direction::Undefined)
            .collect();
        let Some(last_up) = seq.iter().rposition(|d| *d == Direction::Up) else {
            return false;
        };
        if seq[..last_up].contains(&Direction::Down) {
            return false;
        }
        !self.require_decline || seq[last_up..].contains(&Direction::Down)
    }
}

/// Fractions of settings that are bell-like and mixed.
pub fn bell_prevalence(settings: &[Vec<Direction>], rule: BellRule) -> Result<(f64, f64)> {
    if settings.is_empty() {
        return Err(Error::Config("bell prevalence needs at least one setting".into()));
    }
    let bell = settings.iter().filter(|s| rule.is_bell(s)).count() as f64;
    let total = settings.len() as f64;
    Ok((bell / total, 1.0 - bell / total))
}

/// One row of the verdict table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub dataset: String,
    pub method: String,
    pub attribute: String,
    pub epsilon: f64,
    pub transition: String,
    #[serde(rename = "U")]
    pub u: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_adj: Option<f64>,
    pub direction: Direction,
    pub hyperparameters: String,
    pub seed: u64,
    pub split_seed: u64,
}

pub fn write_verdicts<W: Write>(w: W, rows: &[VerdictRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<verdicts>", e))?;
    Ok(())
}

/// One row of the prevalence summary: a method at one tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub method: String,
    pub epsilon: f64,
    pub settings: usize,
    pub bell_like: f64,
    pub mixed: f64,
}

/// Groups verdict rows by (method, epsilon, dataset, attribute) into settings
/// and summarizes per (method, epsilon), in first-appearance order.
pub fn prevalence_table(rows: &[VerdictRow], rule: BellRule) -> Result<Vec<PrevalenceRow>> {
    let mut settings: Vec<((String, u64), (String, String), Vec<Direction>)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.epsilon.to_bits());
        let setting = (r.dataset.clone(), r.attribute.clone());
        match settings.iter_mut().find(|s| s.0 == key && s.1 == setting) {
            Some(s) => s.2.push(r.direction),
            None => settings.push((key, setting, vec![r.direction])),
        }
    }
    let mut keys: Vec<(String, u64)> = Vec::new();
    for s in &settings {
        if !keys.contains(&s.0) {
            keys.push(s.0.clone());
        }
    }
    keys.into_iter()
        .map(|key| {
            let seqs: Vec<Vec<Direction>> = settings
                .iter()
                .filter(|s| s.0 == key)
                .map(|s| s.2.clone())
                .collect();
            let (bell, mixed) = bell_prevalence(&seqs, rule)?;
            Ok(PrevalenceRow {
                method: key.0,
                epsilon: f64::from_bits(key.1),
                settings: seqs.len(),
                bell_like: bell,
                mixed,
            })
        })
        .collect()
}

pub fn write_prevalence<W: Write>(w: W, rows: &[PrevalenceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<prevalence>", e))?;
    Ok(())
}
