//! The complex component of a hybrid model: a CART random forest over the
//! binary features, a constant fallback, or replayed external predictions.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::data::BinaryDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 10,
            min_samples_split: 10,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_split < 2 {
            return Err(Error::Config(format!(
                "forest needs n_trees >= 1, max_depth >= 1, min_samples_split >= 2: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        ForestConfig { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf(bool),
    /// Rows with the feature unset go left.
    Split {
        feature: usize,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, ds: &BinaryDataset, row: usize) -> bool {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(label) => return label,
                Node::Split {
                    feature,
                    left,
                    right,
                } => at = if ds.value(row, feature) { right } else { left },
            }
        }
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::format("forest", "empty tree"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Split {
                feature,
                left,
                right,
            } = *node
            {
                let children_ok = left > i && right > i && left < self.nodes.len() && right < self.nodes.len();
                if feature >= n_features || !children_ok {
                    return Err(Error::format("forest", format!("bad split at node {i}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub feature_names: Vec<String>,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestFile {
    version: u32,
    #[serde(flatten)]
    forest: Forest,
}

impl Forest {
    /// Majority vote; an even split votes positive.
    pub fn predict(&self, ds: &BinaryDataset, row: usize) -> bool {
        let pos = self.trees.iter().filter(|t| t.predict(ds, row)).count();
        2 * pos >= self.trees.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ForestFile {
            version: FOREST_FORMAT_VERSION,
            forest: self.clone(),
        })
        .expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let file: ForestFile = serde_json::from_str(text)?;
        if file.version != FOREST_FORMAT_VERSION {
            return Err(Error::format(
                "forest",
                format!("unsupported version {}", file.version),
            ));
        }
        if file.forest.trees.is_empty() {
            return Err(Error::format("forest", "no trees"));
        }
        for t in &file.forest.trees {
            t.validate(file.forest.feature_names.len())?;
        }
        Ok(file.forest)
    }
}

/// h_c: anything that labels rows of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum BlackBox {
    Forest(Forest),
    Constant(bool),
    /// Predictions keyed by row index of the dataset they were recorded on.
    Replay(Bitset),
}

impl BlackBox {
    pub fn predict(&self, ds: &BinaryDataset, row: usize) -> bool {
        match self {
            BlackBox::Forest(f) => f.predict(ds, row),
            BlackBox::Constant(label) => *label,
            BlackBox::Replay(bits) => bits.get(row),
        }
    }

    /// Predictions for `rows`, in order.
    pub fn predict_rows(&self, ds: &BinaryDataset, rows: &[usize]) -> Bitset {
        match self {
            BlackBox::Replay(bits) => bits.gather(rows),
            _ => Bitset::from_fn(rows.len(), |i| self.predict(ds, rows[i])),
        }
    }

    pub fn predict_all(&self, ds: &BinaryDataset) -> Bitset {
        match self {
            BlackBox::Replay(bits) => bits.clone(),
            _ => Bitset::from_fn(ds.n(), |i| self.predict(ds, i)),
        }
    }

    /// Freezes the predictions on every row of `ds`.
    pub fn to_replay(&self, ds: &BinaryDataset) -> BlackBox {
        BlackBox::Replay(self.predict_all(ds))
    }

    pub fn fingerprint(&self, ds: &BinaryDataset, train: &[usize]) -> Fingerprint {
        Fingerprint(self.predict_rows(ds, train))
    }
}

/// Predictions on the training rows, used to compare black boxes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub Bitset);

/// Fraction of rows where two fingerprints agree.
pub fn agreement(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    let n = a.0.len();
    if b.0.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: b.0.len(),
        });
    }
    if n == 0 {
        return Ok(1.0);
    }
    let both_one = a.0.count_and(&b.0);
    let both_zero = n + both_one - a.0.count_ones() - b.0.count_ones();
    Ok((both_one + both_zero) as f64 / n as f64)
}

fn majority(pos: usize, total: usize) -> bool {
    2 * pos >= total
}

struct Grower<'a> {
    ds: &'a BinaryDataset,
    cfg: &'a ForestConfig,
    mtry: usize,
}

impl Grower<'_> {
    fn grow(&self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let mut nodes = vec![Node::Leaf(false)];
        let mut stack = vec![(0usize, rows, 0usize)];
        let mut features: Vec<usize> = (0..self.ds.n_features()).collect();
        while let Some((slot, rows, depth)) = stack.pop() {
            let pos = rows.iter().filter(|&&r| self.ds.label(r)).count();
            let pure = pos == 0 || pos == rows.len();
            let split = if pure
                || depth >= self.cfg.max_depth
                || rows.len() < self.cfg.min_samples_split
            {
                None
            } else {
                self.best_split(&rows, pos, &mut features, rng)
            };
            match split {
                None => nodes[slot] = Node::Leaf(majority(pos, rows.len())),
                Some(feature) => {
                    let (right_rows, left_rows): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&r| self.ds.value(r, feature));
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf(false));
                    nodes.push(Node::Leaf(false));
                    nodes[slot] = Node::Split {
                        feature,
                        left,
                        right,
                    };
                    stack.push((right, right_rows, depth + 1));
                    stack.push((left, left_rows, depth + 1));
                }
            }
        }
        Tree { nodes }
    }

    /// Samples features until `mtry` non-constant ones have been scored;
    /// returns the one with lowest weighted Gini impurity.
    fn best_split(
        &self,
        rows: &[usize],
        pos: usize,
        features: &mut [usize],
        rng: &mut ChaCha8Rng,
    ) -> Option<usize> {
        let n = rows.len() as f64;
        let gini = |count: usize, pos: usize| -> f64 {
            if count == 0 {
                return 0.0;
            }
            let p = pos as f64 / count as f64;
            count as f64 * 2.0 * p * (1.0 - p)
        };
        let mut best: Option<(f64, usize)> = None;
        let mut scored = 0;
        let total = features.len();
        for k in 0..total {
            if scored >= self.mtry {
                break;
            }
            let j = rng.gen_range(k..total);
            features.swap(k, j);
            let f = features[k];
            let (mut ones, mut ones_pos) = (0usize, 0usize);
            for &r in rows {
                if self.ds.value(r, f) {
                    ones += 1;
                    ones_pos += usize::from(self.ds.label(r));
                }
            }
            if ones == 0 || ones == rows.len() {
                continue;
            }
            scored += 1;
            let impurity =
                (gini(ones, ones_pos) + gini(rows.len() - ones, pos - ones_pos)) / n;
            if best.is_none_or(|(b, _)| impurity < b) {
                best = Some((impurity, f));
            }
        }
        best.map(|(_, f)| f)
    }
}

/// Trains a random forest on `train` (a multiset of row indices). Each tree
/// draws from its own ChaCha stream keyed by the tree index.
pub fn train_forest(ds: &BinaryDataset, train: &[usize], cfg: &ForestConfig) -> Result<BlackBox> {
    cfg.validate()?;
    if train.is_empty() {
        log::warn!("empty training set; using a constant positive predictor");
        return Ok(BlackBox::Constant(true));
    }
    let pos = train.iter().filter(|&&r| ds.label(r)).count();
    if pos == 0 || pos == train.len() {
        log::warn!("single-label training set; using a constant predictor");
        return Ok(BlackBox::Constant(pos > 0));
    }
    let mtry = ((ds.n_features() as f64).sqrt() as usize).max(1);
    let grower = Grower { ds, cfg, mtry };
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let sample: Vec<usize> = (0..train.len())
                .map(|_| train[rng.gen_range(0..train.len())])
                .collect();
            grower.grow(sample, &mut rng)
        })
        .collect();
    Ok(BlackBox::Forest(Forest {
        feature_names: ds.feature_names().to_vec(),
        config: *cfg,
        trees,
    }))
}

/// Reads an `index,prediction` CSV holding exactly one 0/1 value per index in `0..n`.
pub fn read_predictions<R: Read>(reader: R, n: usize) -> Result<BlackBox> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut seen = Bitset::zeros(n);
    let mut bits = Bitset::zeros(n);
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record?;
        let (Some(idx), Some(pred)) = (record.get(0), record.get(1)) else {
            return Err(Error::format("predictions", "expected two columns"));
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::format("predictions", format!("bad index {idx:?}")))?;
        if idx >= n {
            return Err(Error::format(
                "predictions",
                format!("index {idx} out of range for n = {n}"),
            ));
        }
        if seen.get(idx) {
            return Err(Error::format("predictions", format!("duplicate index {idx}")));
        }
        let value = match pred {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::format(
                    "predictions",
                    format!("non-binary prediction {other:?} at index {idx}"),
                ))
            }
        };
        seen.set(idx, true);
        bits.set(idx, value);
        rows += 1;
    }
    if rows != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: rows,
        });
    }
    Ok(BlackBox::Replay(bits))
}

pub fn load_predictions(path: &Path, n: usize) -> Result<BlackBox> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(file, n)
}

pub fn write_predictions(path: &Path, predictions: &Bitset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "prediction"])?;
    for i in 0..predictions.len() {
        w.write_record([i.to_string(), u8::from(predictions.get(i)).to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
