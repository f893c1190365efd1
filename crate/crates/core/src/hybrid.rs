//! Hybrid models: an ordered rule prefix whose support is the interpretable
//! region, with everything else deferred to a black box. Also the per-model
//! metrics (transparency, group coverage, ICD, accuracy, SP, EO, sparsity).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::blackbox::{BlackBox, Forest};
use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::rules::Condition;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub condition: Condition,
    pub consequent: bool,
}

/// Ordered rule list. Examples not matched by any rule defer to the black box.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Prefix {
    pub rules: Vec<Rule>,
}

/// Capture sets of a prefix on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    /// Rows each rule captures: its support minus earlier captures.
    pub per_rule: Vec<Bitset>,
    pub total: Bitset,
}

impl Prefix {
    pub fn new(rules: Vec<Rule>) -> Self {
        Prefix { rules }
    }

    pub fn empty() -> Self {
        Prefix::default()
    }

    /// `[(True -> label)]`
    pub fn constant(label: bool) -> Self {
        Prefix {
            rules: vec![Rule {
                condition: Condition::always(),
                consequent: label,
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn first_match(&self, ds: &BinaryDataset, row: usize) -> Option<&Rule> {
        self.rules.iter().find(|r| r.condition.matches(ds, row))
    }

    pub fn captures(&self, ds: &BinaryDataset) -> Capture {
        let mut total = Bitset::zeros(ds.n());
        let per_rule = self
            .rules
            .iter()
            .map(|r| {
                let new = r.condition.eval(ds).and_not(&total);
                total.or_with(&new);
                new
            })
            .collect();
        Capture { per_rule, total }
    }

    /// Ω restricted to the dataset's rows.
    pub fn capture(&self, ds: &BinaryDataset) -> Bitset {
        self.captures(ds).total
    }
}

impl fmt::Display for Prefix {
    /// `if [...] then [...]` / `else if` / `else [black box]`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.rules.iter().enumerate() {
            let kw = if i == 0 { "if" } else { "else if" };
            writeln!(f, "{kw} [{}] then [{}]", r.condition, u8::from(r.consequent))?;
        }
        if self.rules.is_empty() {
            write!(f, "[black box]")
        } else {
            write!(f, "else [black box]")
        }
    }
}

/// Where a model came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub hyperparameters: BTreeMap<String, String>,
    /// Bootstrap run index; 0 is the model trained on the unresampled training set.
    pub run: usize,
    pub bootstrap_seed: Option<u64>,
    pub forest_seed: u64,
    /// False when a search stopped on a resource limit.
    #[serde(default = "default_true")]
    pub optimal: bool,
}

fn default_true() -> bool {
    true
}

impl Provenance {
    /// `key=value;key=value`, keys sorted.
    pub fn hyperparameter_string(&self) -> String {
        self.hyperparameters
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub prefix: Prefix,
    pub blackbox: BlackBox,
    pub provenance: Provenance,
}

impl HybridModel {
    pub fn predict(&self, ds: &BinaryDataset, row: usize) -> bool {
        match self.prefix.first_match(ds, row) {
            Some(rule) => rule.consequent,
            None => self.blackbox.predict(ds, row),
        }
    }

    /// Predictions on every row of `ds`.
    pub fn predict_all(&self, ds: &BinaryDataset) -> Bitset {
        let cap = self.prefix.captures(ds);
        let mut out = self.blackbox.predict_all(ds).and_not(&cap.total);
        for (rule, rows) in self.prefix.rules.iter().zip(&cap.per_rule) {
            if rule.consequent {
                out.or_with(rows);
            }
        }
        out
    }

    pub fn sparsity(&self) -> usize {
        self.prefix.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelRecord::from_model(self)).expect("model serializes")
    }

    pub fn from_json(ds: &BinaryDataset, text: &str) -> Result<HybridModel> {
        let record: ModelRecord = serde_json::from_str(text)?;
        record.into_model(ds)
    }
}

pub fn predict(m: &HybridModel, ds: &BinaryDataset, row: usize) -> bool {
    m.predict(ds, row)
}

pub fn sparsity(m: &HybridModel) -> usize {
    m.sparsity()
}

fn nonempty(subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        Err(Error::EmptySubset)
    } else {
        Ok(())
    }
}

/// Fraction of `subset` rows that fall in `capture`.
pub fn coverage(capture: &Bitset, subset: &[usize]) -> Result<f64> {
    nonempty(subset)?;
    let covered = subset.iter().filter(|&&i| capture.get(i)).count();
    Ok(covered as f64 / subset.len() as f64)
}

pub fn transparency(m: &HybridModel, ds: &BinaryDataset, subset: &[usize]) -> Result<f64> {
    coverage(&m.prefix.capture(ds), subset)
}

/// `max - min` over rates `hits[g] / sizes[g]` for groups with `sizes[g] > 0`.
/// `None` when fewer than two groups are nonempty.
pub fn max_rate_gap(hits: &[usize], sizes: &[usize]) -> Option<f64> {
    let rates: Vec<f64> = hits
        .iter()
        .zip(sizes)
        .filter(|(_, &s)| s > 0)
        .map(|(&h, &s)| h as f64 / s as f64)
        .collect();
    if rates.len() < 2 {
        return None;
    }
    let max = rates.iter().copied().fold(f64::MIN, f64::max);
    let min = rates.iter().copied().fold(f64::MAX, f64::min);
    Some(max - min)
}

/// Per-group counts over `subset`: (rows with `flag` set, rows).
fn group_counts(
    ds: &BinaryDataset,
    subset: &[usize],
    attribute: &str,
    flag: &Bitset,
    only: Option<&Bitset>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let groups = ds.group_map(attribute)?;
    let mut hits = vec![0; groups.n_groups()];
    let mut sizes = vec![0; groups.n_groups()];
    for &i in subset {
        if only.is_some_and(|o| !o.get(i)) {
            continue;
        }
        let g = groups.group_of(i);
        sizes[g] += 1;
        hits[g] += usize::from(flag.get(i));
    }
    Ok((hits, sizes))
}

/// IC_p for every nonempty group of `attribute` on `subset`.
pub fn group_coverage_of(
    capture: &Bitset,
    ds: &BinaryDataset,
    subset: &[usize],
    attribute: &str,
) -> Result<BTreeMap<String, f64>> {
    let (hits, sizes) = group_counts(ds, subset, attribute, capture, None)?;
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::IcdUndefined(attribute.to_string()));
    }
    let names = &ds.group_map(attribute)?.names;
    Ok(names
        .iter()
        .zip(hits.iter().zip(&sizes))
        .filter(|(_, (_, &s))| s > 0)
        .map(|(name, (&h, &s))| (name.clone(), h as f64 / s as f64))
        .collect())
}

pub fn group_coverage(
    m: &HybridModel,
    ds: &BinaryDataset,
    subset: &[usize],
    attribute: &str,
) -> Result<BTreeMap<String, f64>> {
    group_coverage_of(&m.prefix.capture(ds), ds, subset, attribute)
}

/// ICD of a capture set: largest gap in group coverage.
pub fn icd_of(
    capture: &Bitset,
    ds: &BinaryDataset,
    subset: &[usize],
    attribute: &str,
) -> Result<f64> {
    let (hits, sizes) = group_counts(ds, subset, attribute, capture, None)?;
    max_rate_gap(&hits, &sizes).ok_or_else(|| Error::IcdUndefined(attribute.to_string()))
}

pub fn icd(m: &HybridModel, ds: &BinaryDataset, subset: &[usize], attribute: &str) -> Result<f64> {
    icd_of(&m.prefix.capture(ds), ds, subset, attribute)
}

/// Largest ICD over every sensitive attribute of the dataset.
pub fn max_icd(m: &HybridModel, ds: &BinaryDataset, subset: &[usize]) -> Result<f64> {
    let capture = m.prefix.capture(ds);
    ds.attributes()
        .map(|a| icd_of(&capture, ds, subset, a))
        .try_fold(0.0f64, |acc, x| x.map(|v| acc.max(v)))
}

/// Fraction of `subset` where `predictions` equals the label.
pub fn accuracy_of(predictions: &Bitset, ds: &BinaryDataset, subset: &[usize]) -> Result<f64> {
    nonempty(subset)?;
    let hits = subset
        .iter()
        .filter(|&&i| predictions.get(i) == ds.label(i))
        .count();
    Ok(hits as f64 / subset.len() as f64)
}

pub fn accuracy(m: &HybridModel, ds: &BinaryDataset, subset: &[usize]) -> Result<f64> {
    accuracy_of(&m.predict_all(ds), ds, subset)
}

/// d_SP: largest gap in positive-prediction rate across groups.
pub fn statistical_parity(
    predictions: &Bitset,
    ds: &BinaryDataset,
    subset: &[usize],
    attribute: &str,
) -> Result<f64> {
    let (hits, sizes) = group_counts(ds, subset, attribute, predictions, None)?;
    max_rate_gap(&hits, &sizes).ok_or_else(|| Error::IcdUndefined(attribute.to_string()))
}

/// d_EO: largest gap in true-positive rate across groups with positives.
pub fn equal_opportunity(
    predictions: &Bitset,
    ds: &BinaryDataset,
    subset: &[usize],
    attribute: &str,
) -> Result<f64> {
    let (hits, sizes) = group_counts(ds, subset, attribute, predictions, Some(ds.labels()))?;
    max_rate_gap(&hits, &sizes).ok_or_else(|| Error::EoUndefined(attribute.to_string()))
}

#[derive(Serialize, Deserialize)]
struct RuleRecord {
    literals: Vec<(String, bool)>,
    q: u8,
}

/// How the black box is stored alongside a model.
#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BlackBoxRef {
    Constant(bool),
    Replay { n: usize, bits: String },
    Forest(Box<Forest>),
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    rules: Vec<RuleRecord>,
    blackbox_ref: BlackBoxRef,
    provenance: Provenance,
}

impl ModelRecord {
    fn from_model(m: &HybridModel) -> Self {
        let blackbox_ref = match &m.blackbox {
            BlackBox::Constant(l) => BlackBoxRef::Constant(*l),
            BlackBox::Replay(bits) => BlackBoxRef::Replay {
                n: bits.len(),
                bits: hex::encode(bits.to_le_bytes()),
            },
            BlackBox::Forest(f) => BlackBoxRef::Forest(Box::new(f.clone())),
        };
        ModelRecord {
            rules: m
                .prefix
                .rules
                .iter()
                .map(|r| RuleRecord {
                    literals: r.condition.to_pairs(),
                    q: u8::from(r.consequent),
                })
                .collect(),
            blackbox_ref,
            provenance: m.provenance.clone(),
        }
    }

    fn into_model(self, ds: &BinaryDataset) -> Result<HybridModel> {
        let rules = self
            .rules
            .into_iter()
            .map(|r| {
                let consequent = match r.q {
                    0 => false,
                    1 => true,
                    q => return Err(Error::format("model", format!("consequent {q}"))),
                };
                Ok(Rule {
                    condition: Condition::resolve(ds, &r.literals)?,
                    consequent,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let blackbox = match self.blackbox_ref {
            BlackBoxRef::Constant(l) => BlackBox::Constant(l),
            BlackBoxRef::Replay { n, bits } => {
                if n != ds.n() {
                    return Err(Error::LengthMismatch {
                        expected: ds.n(),
                        found: n,
                    });
                }
                let bytes = hex::decode(bits)
                    .map_err(|e| Error::format("model", format!("replay bits: {e}")))?;
                BlackBox::Replay(
                    Bitset::from_le_bytes(n, &bytes)
                        .ok_or_else(|| Error::format("model", "replay bits length"))?,
                )
            }
            BlackBoxRef::Forest(f) => {
                if f.feature_names != ds.feature_names() {
                    return Err(Error::format("model", "forest feature schema mismatch"));
                }
                // round-trip through the validating decoder
                BlackBox::Forest(Forest::from_json(&f.to_json())?)
            }
        };
        Ok(HybridModel {
            prefix: Prefix::new(rules),
            blackbox,
            provenance: self.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroupMap;
    use crate::rules::Literal;

    /// 10 rows, features a (rows 0..3), b (rows 2..6); groups A = 0..5, B = 5..10.
    fn toy() -> BinaryDataset {
        let a = Bitset::from_fn(10, |i| i < 3);
        let b = Bitset::from_fn(10, |i| (2..6).contains(&i));
        let labels = Bitset::from_fn(10, |i| i % 2 == 0);
        let groups = GroupMap::new(
            "G".into(),
            vec!["A".into(), "B".into()],
            (0..10).map(|i| u32::from(i >= 5)).collect(),
        )
        .unwrap();
        BinaryDataset::new(vec!["a".into(), "b".into()], vec![a, b], labels, vec![groups]).unwrap()
    }

    fn rule(ds: &BinaryDataset, name: &str, q: bool) -> Rule {
        Rule {
            condition: Condition::new(vec![Literal {
                feature: ds.feature_index(name).unwrap(),
                name: name.into(),
                value: true,
            }]),
            consequent: q,
        }
    }

    fn model(prefix: Prefix, bb: BlackBox) -> HybridModel {
        HybridModel {
            prefix,
            blackbox: bb,
            provenance: Provenance::default(),
        }
    }

    fn all() -> Vec<usize> {
        (0..10).collect()
    }

    #[test]
    fn capture_shadowing_and_order() {
        let ds = toy();
        let m = model(
            Prefix::new(vec![rule(&ds, "a", true), rule(&ds, "b", false)]),
            BlackBox::Constant(false),
        );
        // row 0 captured by rule a
        assert!(m.predict(&ds, 0));
        // row 2 matches both; first wins
        assert!(m.predict(&ds, 2));
        // row 4 only b
        assert!(!m.predict(&ds, 4));
        let cap = m.prefix.captures(&ds);
        assert_eq!(cap.per_rule[1].iter_ones().collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!(m.predict_all(&ds), Bitset::from_fn(10, |i| m.predict(&ds, i)));
    }

    #[test]
    fn empty_prefix_is_black_box() {
        let ds = toy();
        let m = model(Prefix::empty(), BlackBox::Constant(true));
        assert!((0..10).all(|i| m.predict(&ds, i)));
        assert_eq!(transparency(&m, &ds, &all()).unwrap(), 0.0);
        assert_eq!(icd(&m, &ds, &all(), "G").unwrap(), 0.0);
        assert_eq!(sparsity(&m), 0);
    }

    #[test]
    fn transparency_and_icd() {
        let ds = toy();
        let m = model(Prefix::new(vec![rule(&ds, "a", true)]), BlackBox::Constant(false));
        assert_eq!(transparency(&m, &ds, &all()).unwrap(), 0.3);
        let cov = group_coverage(&m, &ds, &all(), "G").unwrap();
        assert_eq!(cov["A"], 0.6);
        assert_eq!(cov["B"], 0.0);
        assert_eq!(icd(&m, &ds, &all(), "G").unwrap(), 0.6);
        assert!(transparency(&m, &ds, &[]).is_err());

        let full = model(Prefix::constant(true), BlackBox::Constant(false));
        assert_eq!(transparency(&full, &ds, &all()).unwrap(), 1.0);
        assert_eq!(icd(&full, &ds, &all(), "G").unwrap(), 0.0);
        assert!(group_coverage(&full, &ds, &all(), "G")
            .unwrap()
            .values()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn icd_single_group_subset_is_undefined() {
        let ds = toy();
        let m = model(Prefix::constant(true), BlackBox::Constant(false));
        assert!(matches!(
            icd(&m, &ds, &[0, 1, 2], "G"),
            Err(Error::IcdUndefined(_))
        ));
        assert!(matches!(
            icd(&m, &ds, &[0, 1], "Nope"),
            Err(Error::UnknownAttribute(_))
        ));
    }

    #[test]
    fn accuracy_extremes() {
        let ds = toy();
        let perfect = model(Prefix::empty(), BlackBox::Replay(ds.labels().clone()));
        assert_eq!(accuracy(&perfect, &ds, &all()).unwrap(), 1.0);
        let wrong = model(Prefix::empty(), BlackBox::Replay(ds.labels().not()));
        assert_eq!(accuracy(&wrong, &ds, &all()).unwrap(), 0.0);
    }

    #[test]
    fn parity_metrics() {
        let ds = toy();
        // rates: A has 5/5 positive predictions, B 0/5
        let pred = Bitset::from_fn(10, |i| i < 5);
        assert_eq!(statistical_parity(&pred, &ds, &all(), "G").unwrap(), 1.0);
        let half = Bitset::from_fn(10, |i| i % 2 == 0);
        // labels positive at even rows: A has {0,2,4} B has {6,8}
        assert_eq!(equal_opportunity(&half, &ds, &all(), "G").unwrap(), 0.0);
        assert_eq!(equal_opportunity(&pred, &ds, &all(), "G").unwrap(), 1.0);
        // B's only rows in subset are negatives -> EO undefined
        assert!(matches!(
            equal_opportunity(&pred, &ds, &[0, 2, 5, 7], "G"),
            Err(Error::EoUndefined(_))
        ));
    }

    #[test]
    fn three_group_rates() {
        assert_eq!(max_rate_gap(&[1, 5, 9], &[5, 10, 10]).unwrap(), 0.7);
        assert_eq!(max_rate_gap(&[1, 1], &[2, 2]).unwrap(), 0.0);
        assert_eq!(max_rate_gap(&[1, 0], &[2, 0]), None);
    }

    #[test]
    fn render_if_else() {
        let ds = toy();
        let p = Prefix::new(vec![rule(&ds, "a", true), rule(&ds, "b", false)]);
        assert_eq!(
            p.to_string(),
            "if [a] then [1]\nelse if [b] then [0]\nelse [black box]"
        );
    }

    #[test]
    fn model_json_roundtrip() {
        let ds = toy();
        let mut prov = Provenance {
            method: "hybrid_pre".into(),
            run: 3,
            bootstrap_seed: Some(9),
            ..Default::default()
        };
        prov.hyperparameters.insert("c_min".into(), "0.5".into());
        for bb in [
            BlackBox::Constant(true),
            BlackBox::Replay(Bitset::from_fn(10, |i| i % 3 == 0)),
        ] {
            let m = HybridModel {
                prefix: Prefix::new(vec![rule(&ds, "a", true)]),
                blackbox: bb,
                provenance: prov.clone(),
            };
            let back = HybridModel::from_json(&ds, &m.to_json()).unwrap();
            assert_eq!(back, m);
        }
    }
}
