//! Exhaustive reference for the prefix search on small problems.

use std::collections::BTreeMap;

use hybrid_icd::data::BinaryDataset;
use hybrid_icd::rules::Condition;
use hybrid_icd::search::SearchConfig;

pub struct Plain {
    pub rows: Vec<Vec<bool>>,
    pub labels: Vec<bool>,
    pub groups: Vec<usize>,
}

pub fn plain(ds: &BinaryDataset) -> Plain {
    Plain {
        rows: (0..ds.n())
            .map(|i| (0..ds.n_features()).map(|f| ds.value(i, f)).collect())
            .collect(),
        labels: (0..ds.n()).map(|i| ds.label(i)).collect(),
        groups: (0..ds.n()).map(|i| ds.group_maps()[0].group_of(i)).collect(),
    }
}

pub fn matches(c: &Condition, row: &[bool]) -> bool {
    c.literals.iter().all(|l| row[l.feature] == l.value)
}

pub fn brute_incons(p: &Plain, rows: &[usize]) -> usize {
    let mut classes: BTreeMap<&[bool], (usize, usize)> = BTreeMap::new();
    for &i in rows {
        let e = classes.entry(&p.rows[i]).or_default();
        if p.labels[i] {
            e.0 += 1
        } else {
            e.1 += 1
        }
    }
    classes.values().map(|&(a, b)| a.min(b)).sum()
}

/// Objective and feasibility of a sequence of conditions with majority
/// consequents (`fixed` overrides the consequents).
pub fn brute_eval(
    p: &Plain,
    conds: &[&Condition],
    fixed: Option<&[bool]>,
    hc: Option<&[bool]>,
    cfg: &SearchConfig,
) -> (f64, bool) {
    let n = p.rows.len();
    let mut buckets = vec![Vec::new(); conds.len()];
    let mut rest = Vec::new();
    for i in 0..n {
        match conds.iter().position(|c| matches(c, &p.rows[i])) {
            Some(k) => buckets[k].push(i),
            None => rest.push(i),
        }
    }
    let mut errors = 0;
    for (k, b) in buckets.iter().enumerate() {
        let pos = b.iter().filter(|&&i| p.labels[i]).count();
        let q = match fixed {
            Some(f) => f[k],
            None => 2 * pos >= b.len(),
        };
        errors += if q { b.len() - pos } else { pos };
    }
    errors += match hc {
        None => brute_incons(p, &rest),
        Some(h) => rest.iter().filter(|&&i| h[i] != p.labels[i]).count(),
    };
    let z = errors as f64 / n as f64
        + cfg.lambda * conds.len() as f64
        + cfg.beta * rest.len() as f64 / n as f64;
    let covered = n - rest.len();
    let mut ok = covered as f64 / n as f64 >= cfg.c_min;
    if cfg.attribute.is_some() {
        let mut rates = Vec::new();
        for g in 0..2 {
            let size = p.groups.iter().filter(|&&x| x == g).count();
            if size > 0 {
                let hit = (0..n).filter(|&i| p.groups[i] == g && !rest.contains(&i)).count();
                rates.push(hit as f64 / size as f64);
            }
        }
        let icd = rates.iter().cloned().fold(f64::MIN, f64::max)
            - rates.iter().cloned().fold(f64::MAX, f64::min);
        ok &= icd <= cfg.eta;
    }
    (z, ok)
}

pub fn brute_optimum(p: &Plain, conds: &[Condition], hc: Option<&[bool]>, cfg: &SearchConfig) -> f64 {
    let all_true = Condition::always();
    let pos = p.labels.iter().filter(|&&y| y).count();
    let majority = 2 * pos >= p.labels.len();
    let (mut best, ok) = brute_eval(p, &[&all_true], Some(&[majority]), hc, cfg);
    assert!(ok);
    let mut stack: Vec<Vec<usize>> = vec![vec![]];
    while let Some(seq) = stack.pop() {
        let refs: Vec<&Condition> = seq.iter().map(|&k| &conds[k]).collect();
        let (z, ok) = brute_eval(p, &refs, None, hc, cfg);
        if ok && z < best {
            best = z;
        }
        if seq.len() < cfg.max_prefix_len {
            for k in 0..conds.len() {
                if !seq.contains(&k) {
                    let mut next = seq.clone();
                    next.push(k);
                    stack.push(next);
                }
            }
        }
    }
    best
}
