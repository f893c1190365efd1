//! Candidate antecedents: frequent conjunctions of binary literals mined with
//! FP-Growth.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::data::BinaryDataset;
use crate::error::{Error, Result};

/// `feature == value`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literal {
    pub feature: usize,
    pub name: String,
    pub value: bool,
}

impl Literal {
    fn order_key(&self) -> (usize, bool) {
        (self.feature, !self.value)
    }

    pub fn eval(&self, ds: &BinaryDataset) -> Bitset {
        let f = ds.feature(self.feature);
        if self.value {
            f.clone()
        } else {
            f.not()
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.value {
            write!(f, "{}", self.name)
        } else {
            write!(f, "not {}", self.name)
        }
    }
}

/// A conjunction of literals. An empty literal list is the constant-true
/// condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Condition {
    pub literals: Vec<Literal>,
}

impl Condition {
    pub fn always() -> Self {
        Condition::default()
    }

    pub fn new(mut literals: Vec<Literal>) -> Self {
        literals.sort_by_key(Literal::order_key);
        Condition { literals }
    }

    pub fn is_always(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn eval(&self, ds: &BinaryDataset) -> Bitset {
        let mut out = Bitset::ones(ds.n());
        for lit in &self.literals {
            let f = ds.feature(lit.feature);
            if lit.value {
                out.and_with(f);
            } else {
                out.and_not_with(f);
            }
        }
        out
    }

    pub fn matches(&self, ds: &BinaryDataset, row: usize) -> bool {
        self.literals
            .iter()
            .all(|l| ds.value(row, l.feature) == l.value)
    }

    fn cmp_literals(&self, other: &Condition) -> Ordering {
        self.literals
            .iter()
            .map(Literal::order_key)
            .cmp(other.literals.iter().map(Literal::order_key))
    }

    /// Resolves `(feature name, value)` pairs against a dataset's schema.
    pub fn resolve(ds: &BinaryDataset, literals: &[(String, bool)]) -> Result<Condition> {
        let lits = literals
            .iter()
            .map(|(name, value)| {
                ds.feature_index(name)
                    .map(|feature| Literal {
                        feature,
                        name: name.clone(),
                        value: *value,
                    })
                    .ok_or_else(|| Error::format("rule", format!("unknown feature {name:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Condition::new(lits))
    }

    pub fn to_pairs(&self) -> Vec<(String, bool)> {
        self.literals
            .iter()
            .map(|l| (l.name.clone(), l.value))
            .collect()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.literals.is_empty() {
            return write!(f, "True");
        }
        for (i, l) in self.literals.iter().enumerate() {
            if i > 0 {
                write!(f, " && ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Antecedent {
    pub id: usize,
    pub condition: Condition,
    /// Truth of the condition on every row of the dataset it was mined from.
    pub support: Bitset,
    /// Support count on the mining rows.
    pub train_support: usize,
}

impl Antecedent {
    /// |support ∩ subset|, counting repeated indices once per occurrence.
    pub fn support_of(&self, subset: &[usize]) -> usize {
        subset.iter().filter(|&&i| self.support.get(i)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub min_support: f64,
    pub max_card: usize,
    pub max_rules: usize,
    /// Mine over each feature and its negation.
    pub negations: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            min_support: 0.01,
            max_card: 2,
            max_rules: 300,
            negations: true,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_support > 0.0 && self.min_support <= 1.0) {
            return Err(Error::Config(format!(
                "min_support must be in (0, 1], got {}",
                self.min_support
            )));
        }
        if !(1..=2).contains(&self.max_card) {
            return Err(Error::Config(format!(
                "max_card must be 1 or 2, got {}",
                self.max_card
            )));
        }
        if self.max_rules == 0 {
            return Err(Error::Config("max_rules must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleUniverse {
    pub antecedents: Vec<Antecedent>,
    pub config: MiningConfig,
}

impl RuleUniverse {
    pub fn len(&self) -> usize {
        self.antecedents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.antecedents.is_empty()
    }

    pub fn empty(config: MiningConfig) -> Self {
        RuleUniverse {
            antecedents: Vec::new(),
            config,
        }
    }

    /// Builds a universe from explicit conditions, keeping the given order.
    pub fn from_conditions(ds: &BinaryDataset, conditions: Vec<Condition>) -> Self {
        let n = ds.n();
        let antecedents = conditions
            .into_iter()
            .enumerate()
            .map(|(id, condition)| {
                let support = condition.eval(ds);
                Antecedent {
                    id,
                    train_support: support.count_ones(),
                    condition,
                    support,
                }
            })
            .collect();
        RuleUniverse {
            antecedents,
            config: MiningConfig {
                min_support: 1.0 / n.max(1) as f64,
                max_card: 2,
                max_rules: usize::MAX,
                negations: true,
            },
        }
    }
}

#[inline]
pub(crate) fn meets_support(count: usize, n: usize, min_support: f64) -> bool {
    count as f64 / n as f64 >= min_support
}

/// Item ids: `2f` is `feature f == 1`, `2f + 1` is `feature f == 0`.
fn item_literal(ds: &BinaryDataset, item: usize) -> Literal {
    let feature = item / 2;
    Literal {
        feature,
        name: ds.feature_names()[feature].clone(),
        value: item % 2 == 0,
    }
}

#[derive(Debug)]
struct FpNode {
    item: usize,
    count: usize,
    parent: usize,
    children: Vec<usize>,
}

/// Prefix tree over transactions whose items are ordered by global frequency.
struct FpTree {
    nodes: Vec<FpNode>,
    /// item -> nodes carrying that item
    header: Vec<Vec<usize>>,
}

const ROOT: usize = 0;

impl FpTree {
    fn new(n_items: usize) -> Self {
        FpTree {
            nodes: vec![FpNode {
                item: usize::MAX,
                count: 0,
                parent: ROOT,
                children: Vec::new(),
            }],
            header: vec![Vec::new(); n_items],
        }
    }

    fn insert(&mut self, items: &[usize], count: usize) {
        let mut at = ROOT;
        for &item in items {
            let existing = self.nodes[at]
                .children
                .iter()
                .copied()
                .find(|&c| self.nodes[c].item == item);
            at = match existing {
                Some(c) => {
                    self.nodes[c].count += count;
                    c
                }
                None => {
                    let id = self.nodes.len();
                    self.nodes.push(FpNode {
                        item,
                        count,
                        parent: at,
                        children: Vec::new(),
                    });
                    self.nodes[at].children.push(id);
                    self.header[item].push(id);
                    id
                }
            };
        }
    }

    fn item_count(&self, item: usize) -> usize {
        self.header[item].iter().map(|&n| self.nodes[n].count).sum()
    }

    /// Paths from the root to each node carrying `item` (exclusive), with that node's count.
    fn prefix_paths(&self, item: usize) -> Vec<(Vec<usize>, usize)> {
        self.header[item]
            .iter()
            .map(|&node| {
                let mut path = Vec::new();
                let mut at = self.nodes[node].parent;
                while at != ROOT {
                    path.push(self.nodes[at].item);
                    at = self.nodes[at].parent;
                }
                path.reverse();
                (path, self.nodes[node].count)
            })
            .collect()
    }
}

/// Recursive FP-Growth restricted to itemsets of at most `max_len` items.
/// `rank` orders items: lower rank appears earlier in every path.
fn fp_growth(
    tree: &FpTree,
    items: &[usize],
    suffix: &[usize],
    min_count: &dyn Fn(usize) -> bool,
    max_len: usize,
    rank: &[usize],
    out: &mut Vec<(Vec<usize>, usize)>,
) {
    for &item in items.iter().rev() {
        let count = tree.item_count(item);
        if count == 0 || !min_count(count) {
            continue;
        }
        let mut itemset = suffix.to_vec();
        itemset.push(item);
        out.push((itemset.clone(), count));
        if itemset.len() >= max_len {
            continue;
        }
        let paths = tree.prefix_paths(item);
        let mut cond_counts = vec![0usize; tree.header.len()];
        for (path, c) in &paths {
            for &p in path {
                cond_counts[p] += c;
            }
        }
        let mut cond_items: Vec<usize> = (0..tree.header.len())
            .filter(|&i| cond_counts[i] > 0 && min_count(cond_counts[i]))
            .collect();
        if cond_items.is_empty() {
            continue;
        }
        cond_items.sort_by_key(|&i| rank[i]);
        let mut cond_tree = FpTree::new(tree.header.len());
        for (path, c) in &paths {
            let kept: Vec<usize> = path
                .iter()
                .copied()
                .filter(|&p| cond_items.binary_search_by_key(&rank[p], |&i| rank[i]).is_ok())
                .collect();
            if !kept.is_empty() {
                cond_tree.insert(&kept, *c);
            }
        }
        fp_growth(&cond_tree, &cond_items, &itemset, min_count, max_len, rank, out);
    }
}

/// Mines all conjunctions of at most `cfg.max_card` literals whose support on
/// `train` (a multiset of row indices) is at least `cfg.min_support`, keeping
/// the `cfg.max_rules` with largest support.
pub fn mine_antecedents(
    ds: &BinaryDataset,
    train: &[usize],
    cfg: &MiningConfig,
) -> Result<RuleUniverse> {
    cfg.validate()?;
    let n = train.len();
    if n == 0 {
        return Err(Error::EmptySubset);
    }
    let n_items = 2 * ds.n_features();
    let polarity_ok = |item: usize| cfg.negations || item % 2 == 0;

    let mut item_counts = vec![0usize; n_items];
    for &row in train {
        for f in 0..ds.n_features() {
            let item = if ds.value(row, f) { 2 * f } else { 2 * f + 1 };
            item_counts[item] += 1;
        }
    }
    let min_count = |c: usize| meets_support(c, n, cfg.min_support);
    let mut frequent: Vec<usize> = (0..n_items)
        .filter(|&i| polarity_ok(i) && item_counts[i] > 0 && min_count(item_counts[i]))
        .collect();
    frequent.sort_by(|&a, &b| item_counts[b].cmp(&item_counts[a]).then(a.cmp(&b)));
    let mut rank = vec![usize::MAX; n_items];
    for (r, &item) in frequent.iter().enumerate() {
        rank[item] = r;
    }

    let mut tree = FpTree::new(n_items);
    let mut txn = Vec::with_capacity(frequent.len());
    for &row in train {
        txn.clear();
        txn.extend(frequent.iter().copied().filter(|&item| {
            let f = item / 2;
            ds.value(row, f) == (item % 2 == 0)
        }));
        tree.insert(&txn, 1);
    }

    let mut found = Vec::new();
    fp_growth(&tree, &frequent, &[], &min_count, cfg.max_card, &rank, &mut found);

    let mut candidates: Vec<(Condition, usize)> = found
        .into_iter()
        .map(|(items, count)| {
            let lits = items.iter().map(|&i| item_literal(ds, i)).collect();
            (Condition::new(lits), count)
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyRuleUniverse);
    }
    candidates.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp_literals(&b.0)));
    candidates.truncate(cfg.max_rules);

    let antecedents = candidates
        .into_iter()
        .enumerate()
        .map(|(id, (condition, count))| {
            let support = condition.eval(ds);
            debug_assert_eq!(support.gather(train).count_ones(), count);
            Antecedent {
                id,
                condition,
                support,
                train_support: count,
            }
        })
        .collect();
    Ok(RuleUniverse {
        antecedents,
        config: *cfg,
    })
}

#[derive(Serialize, Deserialize)]
struct CachedRule {
    literals: Vec<(String, bool)>,
    support: usize,
}

#[derive(Serialize, Deserialize)]
struct RuleCache {
    config: MiningConfig,
    antecedents: Vec<CachedRule>,
}

pub fn universe_to_json(u: &RuleUniverse) -> String {
    let cache = RuleCache {
        config: u.config,
        antecedents: u
            .antecedents
            .iter()
            .map(|a| CachedRule {
                literals: a.condition.to_pairs(),
                support: a.train_support,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&cache).expect("rule cache serializes")
}

/// Reloads a cached universe against `ds`, recomputing support bitsets.
pub fn universe_from_json(ds: &BinaryDataset, text: &str) -> Result<RuleUniverse> {
    let cache: RuleCache = serde_json::from_str(text)?;
    cache.config.validate()?;
    let antecedents = cache
        .antecedents
        .into_iter()
        .enumerate()
        .map(|(id, r)| {
            if r.literals.is_empty() || r.literals.len() > cache.config.max_card {
                return Err(Error::format(
                    "rule cache",
                    format!("rule {id} has {} literals", r.literals.len()),
                ));
            }
            let condition = Condition::resolve(ds, &r.literals)?;
            let support = condition.eval(ds);
            Ok(Antecedent {
                id,
                condition,
                support,
                train_support: r.support,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RuleUniverse {
        antecedents,
        config: cache.config,
    })
}

pub fn write_universe(path: &Path, u: &RuleUniverse) -> Result<()> {
    std::fs::write(path, universe_to_json(u)).map_err(|e| Error::io(path, e))
}

pub fn read_universe(path: &Path, ds: &BinaryDataset) -> Result<RuleUniverse> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    universe_from_json(ds, &text)
}
