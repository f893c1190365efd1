//! Tabular ingest, binarization, protected-group partitions, splits and
//! bootstrap resampling.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitset::Bitset;
use crate::error::{Error, Result};

/// Cell values treated as missing.
const MISSING_TOKENS: [&str; 4] = ["", "NA", "NaN", "nan"];
const MISSING_LEVEL: &str = "missing";
const OTHER_GROUP: &str = "Other";

fn is_missing(cell: &str) -> bool {
    MISSING_TOKENS.contains(&cell)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// A raw column. Cells are kept as text; `kind` is inferred at load time and
/// may be overridden by a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub cells: Vec<Option<String>>,
}

impl Column {
    fn numeric_values(&self) -> Result<Vec<Option<f64>>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(row, c)| match c {
                None => Ok(None),
                Some(s) => s.parse::<f64>().map(Some).map_err(|_| {
                    Error::Config(format!(
                        "column {} row {row}: {s:?} is not numeric",
                        self.name
                    ))
                }),
            })
            .collect()
    }
}

/// Parsed CSV with the label column split off.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<Column>,
    pub labels: Vec<bool>,
    pub n_rows: usize,
}

impl RawTable {
    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::ColumnNotFound(name.to_string()))
    }
}

pub fn load_csv(path: &Path, label_column: &str, positive_value: &str) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column, positive_value)
}

/// Parses a comma-separated table with a header row. Rows whose label is
/// missing are dropped.
pub fn read_csv<R: Read>(reader: R, label_column: &str, positive_value: &str) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::LabelColumnNotFound(label_column.to_string()))?;
    {
        let mut seen = BTreeSet::new();
        for h in &headers {
            if !seen.insert(h) {
                return Err(Error::format("csv", format!("duplicate column {h:?}")));
            }
        }
    }

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    let mut raw_labels = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let label = record.get(label_idx).unwrap_or("");
        if is_missing(label) {
            continue;
        }
        raw_labels.push(label.to_string());
        for (j, cell) in record.iter().enumerate() {
            cells[j].push((!is_missing(cell)).then(|| cell.to_string()));
        }
    }

    let distinct: BTreeSet<&str> = raw_labels.iter().map(String::as_str).collect();
    if distinct.len() > 2 {
        return Err(Error::NonBinaryLabel(format!(
            "column {label_column} has {} distinct values",
            distinct.len()
        )));
    }
    if distinct.len() == 2 && !distinct.contains(positive_value) {
        return Err(Error::NonBinaryLabel(format!(
            "positive value {positive_value:?} not among {distinct:?}"
        )));
    }
    let labels: Vec<bool> = raw_labels.iter().map(|l| l == positive_value).collect();
    let n_rows = labels.len();

    let columns = headers
        .into_iter()
        .zip(cells)
        .enumerate()
        .filter(|(j, _)| *j != label_idx)
        .map(|(_, (name, cells))| {
            let numeric = cells
                .iter()
                .flatten()
                .all(|c| c.parse::<f64>().is_ok_and(f64::is_finite));
            Column {
                name,
                kind: if numeric {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Categorical
                },
                cells,
            }
        })
        .collect();

    Ok(RawTable {
        columns,
        labels,
        n_rows,
    })
}

/// How a sensitive attribute's values are partitioned into groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupRule {
    /// Named categories; everything else merges into `Other` when `other` is set.
    Categories { keep: Vec<String>, other: bool },
    /// The `k` most frequent categories; everything else merges into `Other`
    /// when `other` is set.
    TopK { k: usize, other: bool },
    /// Right-closed numeric cut points: `x <= e1`, `e1 < x <= e2`, ..., `x > ek`.
    Cuts {
        edges: Vec<f64>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
    /// Quantile bins over the full column.
    Quantiles { n_bins: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveSpec {
    pub attribute: String,
    pub column: String,
    pub groups: GroupRule,
}

/// Which columns become features and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarizeSpec {
    #[serde(default)]
    pub numeric_columns: Option<Vec<String>>,
    #[serde(default)]
    pub categorical_columns: Option<Vec<String>>,
    #[serde(default = "default_n_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub sensitive: Vec<SensitiveSpec>,
}

fn default_n_bins() -> usize {
    3
}

impl Default for BinarizeSpec {
    fn default() -> Self {
        BinarizeSpec {
            numeric_columns: None,
            categorical_columns: None,
            n_bins: default_n_bins(),
            sensitive: Vec::new(),
        }
    }
}

/// Partition of the examples by one sensitive attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMap {
    pub attribute: String,
    pub names: Vec<String>,
    pub assignment: Vec<u32>,
    members: Vec<Bitset>,
}

impl GroupMap {
    pub fn new(attribute: String, names: Vec<String>, assignment: Vec<u32>) -> Result<Self> {
        let n = assignment.len();
        let mut members = vec![Bitset::zeros(n); names.len()];
        for (i, &g) in assignment.iter().enumerate() {
            let slot = members.get_mut(g as usize).ok_or_else(|| {
                Error::format(
                    "group map",
                    format!("{attribute}: group id {g} out of range at row {i}"),
                )
            })?;
            slot.set(i, true);
        }
        Ok(GroupMap {
            attribute,
            names,
            assignment,
            members,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.names.len()
    }

    /// Bitset of the rows in group `g`.
    pub fn members(&self, g: usize) -> &Bitset {
        &self.members[g]
    }

    pub fn group_of(&self, row: usize) -> usize {
        self.assignment[row] as usize
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Bitset::count_ones).collect()
    }

    fn select(&self, rows: &[usize]) -> GroupMap {
        let assignment: Vec<u32> = rows.iter().map(|&r| self.assignment[r]).collect();
        GroupMap::new(self.attribute.clone(), self.names.clone(), assignment)
            .expect("assignment ids already validated")
    }
}

/// Binarized feature matrix stored as one bitset per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    feature_names: Vec<String>,
    features: Vec<Bitset>,
    labels: Bitset,
    groups: Vec<GroupMap>,
    /// Row-major copy of the features, `row_words` words per row.
    rows: Vec<u64>,
    row_words: usize,
}

impl BinaryDataset {
    pub fn new(
        feature_names: Vec<String>,
        features: Vec<Bitset>,
        labels: Bitset,
        groups: Vec<GroupMap>,
    ) -> Result<Self> {
        let n = labels.len();
        if feature_names.len() != features.len() {
            return Err(Error::LengthMismatch {
                expected: feature_names.len(),
                found: features.len(),
            });
        }
        if let Some(f) = features.iter().find(|f| f.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                found: f.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::format("dataset", format!("duplicate feature {name:?}")));
            }
        }
        let mut attrs = BTreeSet::new();
        for g in &groups {
            if g.assignment.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: g.assignment.len(),
                });
            }
            if !attrs.insert(g.attribute.as_str()) {
                return Err(Error::format(
                    "dataset",
                    format!("duplicate attribute {:?}", g.attribute),
                ));
            }
        }
        let row_words = features.len().div_ceil(64).max(1);
        let mut rows = vec![0u64; n * row_words];
        for (f, bits) in features.iter().enumerate() {
            for i in bits.iter_ones() {
                rows[i * row_words + f / 64] |= 1 << (f % 64);
            }
        }
        Ok(BinaryDataset {
            feature_names,
            features,
            labels,
            groups,
            rows,
            row_words,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn feature(&self, f: usize) -> &Bitset {
        &self.features[f]
    }

    pub fn features(&self) -> &[Bitset] {
        &self.features
    }

    pub fn labels(&self) -> &Bitset {
        &self.labels
    }

    pub fn label(&self, i: usize) -> bool {
        self.labels.get(i)
    }

    #[inline]
    pub fn value(&self, row: usize, f: usize) -> bool {
        (self.rows[row * self.row_words + f / 64] >> (f % 64)) & 1 == 1
    }

    /// Packed feature vector of a row; identical rows have identical keys.
    pub fn row_key(&self, row: usize) -> &[u64] {
        &self.rows[row * self.row_words..(row + 1) * self.row_words]
    }

    pub fn group_maps(&self) -> &[GroupMap] {
        &self.groups
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|g| g.attribute.as_str())
    }

    pub fn group_map(&self, attribute: &str) -> Result<&GroupMap> {
        self.groups
            .iter()
            .find(|g| g.attribute == attribute)
            .ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))
    }

    /// A new dataset holding `rows` in order (duplicates become separate rows).
    pub fn select(&self, rows: &[usize]) -> BinaryDataset {
        let features = self.features.iter().map(|f| f.gather(rows)).collect();
        let labels = self.labels.gather(rows);
        let groups = self.groups.iter().map(|g| g.select(rows)).collect();
        BinaryDataset::new(self.feature_names.clone(), features, labels, groups)
            .expect("selection of a valid dataset is valid")
    }
}

fn format_edge(x: f64) -> String {
    format!("{x}")
}

/// Linear-interpolation quantile of a sorted slice.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Inner quantile edges for `n_bins` bins, deduplicated, excluding any edge at
/// or above the maximum (which would leave the top bin empty).
fn quantile_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let Some(&max) = sorted.last() else {
        return Vec::new();
    };
    let mut edges: Vec<f64> = (1..n_bins)
        .map(|k| quantile_sorted(&sorted, k as f64 / n_bins as f64))
        .filter(|&e| e < max)
        .collect();
    edges.dedup();
    edges
}

/// Bin index under right-closed intervals: `x <= e0` is bin 0.
fn bin_of(x: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| x > e).count()
}

fn interval_names(column: &str, edges: &[f64]) -> Vec<String> {
    let k = edges.len();
    (0..=k)
        .map(|b| match (b, k) {
            (0, _) => format!("{column}<={}", format_edge(edges[0])),
            (b, k) if b == k => format!("{column}>{}", format_edge(edges[k - 1])),
            (b, _) => format!(
                "{}<{column}<={}",
                format_edge(edges[b - 1]),
                format_edge(edges[b])
            ),
        })
        .collect()
}

fn binarize_numeric(
    column: &Column,
    n_bins: usize,
    names: &mut Vec<String>,
    features: &mut Vec<Bitset>,
) -> Result<()> {
    let values = column.numeric_values()?;
    let n = values.len();
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let edges = quantile_edges(&present, n_bins);
    if edges.is_empty() {
        if !present.is_empty() {
            log::warn!(
                "numeric column {} is constant; emitting a single indicator",
                column.name
            );
            names.push(format!("{}=all", column.name));
            features.push(Bitset::from_fn(n, |i| values[i].is_some()));
        }
    } else {
        for (b, name) in interval_names(&column.name, &edges).into_iter().enumerate() {
            names.push(name);
            features.push(Bitset::from_fn(n, |i| {
                values[i].is_some_and(|x| bin_of(x, &edges) == b)
            }));
        }
    }
    if values.iter().any(Option::is_none) {
        names.push(format!("{}={MISSING_LEVEL}", column.name));
        features.push(Bitset::from_fn(n, |i| values[i].is_none()));
    }
    Ok(())
}

fn binarize_categorical(column: &Column, names: &mut Vec<String>, features: &mut Vec<Bitset>) {
    let n = column.cells.len();
    let levels: BTreeSet<&str> = column
        .cells
        .iter()
        .map(|c| c.as_deref().unwrap_or(MISSING_LEVEL))
        .collect();
    for level in levels {
        names.push(format!("{}={level}", column.name));
        features.push(Bitset::from_fn(n, |i| {
            column.cells[i].as_deref().unwrap_or(MISSING_LEVEL) == level
        }));
    }
}

fn category_counts(column: &Column) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for c in &column.cells {
        *counts.entry(c.as_deref().unwrap_or(MISSING_LEVEL)).or_insert(0) += 1;
    }
    counts
}

fn partition_categories(
    attribute: &str,
    column: &Column,
    keep: Vec<String>,
    other: bool,
) -> Result<(Vec<String>, Vec<u32>)> {
    let mut names = keep;
    let other_id = names.len() as u32;
    let mut assignment = Vec::with_capacity(column.cells.len());
    for cell in &column.cells {
        let v = cell.as_deref().unwrap_or(MISSING_LEVEL);
        match names.iter().position(|k| k == v) {
            Some(g) => assignment.push(g as u32),
            None if other => assignment.push(other_id),
            None => {
                return Err(Error::Config(format!(
                    "attribute {attribute}: value {v:?} not retained and no Other group"
                )))
            }
        }
    }
    if other {
        names.push(OTHER_GROUP.to_string());
    }
    Ok((names, assignment))
}

fn partition(table: &RawTable, spec: &SensitiveSpec) -> Result<GroupMap> {
    let column = table.column(&spec.column)?;
    let (names, assignment) = match &spec.groups {
        GroupRule::Categories { keep, other } => {
            partition_categories(&spec.attribute, column, keep.clone(), *other)?
        }
        GroupRule::TopK { k, other } => {
            let mut counts: Vec<(&str, usize)> = category_counts(column).into_iter().collect();
            counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            let keep = counts.iter().take(*k).map(|(v, _)| v.to_string()).collect();
            partition_categories(&spec.attribute, column, keep, *other)?
        }
        GroupRule::Cuts { edges, labels } => {
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "attribute {}: cut points must be strictly increasing",
                    spec.attribute
                )));
            }
            numeric_partition(&spec.attribute, column, edges, labels.clone())?
        }
        GroupRule::Quantiles { n_bins } => {
            let values = column.numeric_values()?;
            let present: Vec<f64> = values.iter().flatten().copied().collect();
            let edges = quantile_edges(&present, *n_bins);
            let labels = match edges.len() {
                2 => Some(vec!["Low".into(), "Middle".into(), "High".into()]),
                1 => Some(vec!["Low".into(), "High".into()]),
                _ => None,
            };
            numeric_partition(&spec.attribute, column, &edges, labels)?
        }
    };
    let map = GroupMap::new(spec.attribute.clone(), names, assignment)?;
    let nonempty = map.sizes().iter().filter(|&&s| s > 0).count();
    if nonempty < 2 {
        return Err(Error::Config(format!(
            "attribute {} has {nonempty} nonempty group(s); ICD needs at least two",
            spec.attribute
        )));
    }
    Ok(map)
}

fn numeric_partition(
    attribute: &str,
    column: &Column,
    edges: &[f64],
    labels: Option<Vec<String>>,
) -> Result<(Vec<String>, Vec<u32>)> {
    let values = column.numeric_values()?;
    let mut names = match labels {
        Some(l) if l.len() == edges.len() + 1 => l,
        Some(l) => {
            return Err(Error::Config(format!(
                "attribute {attribute}: {} labels for {} bins",
                l.len(),
                edges.len() + 1
            )))
        }
        None if edges.is_empty() => vec!["all".to_string()],
        None => interval_names(&column.name, edges),
    };
    let missing_id = names.len() as u32;
    let assignment: Vec<u32> = values
        .iter()
        .map(|v| match v {
            Some(x) => bin_of(*x, edges) as u32,
            None => missing_id,
        })
        .collect();
    if values.iter().any(Option::is_none) {
        names.push(MISSING_LEVEL.to_string());
    }
    Ok((names, assignment))
}

/// Turns a raw table into indicator features plus group partitions. Binning
/// statistics are computed over every row of `table`.
pub fn binarize(table: &RawTable, spec: &BinarizeSpec) -> Result<BinaryDataset> {
    if spec.n_bins < 2 {
        return Err(Error::Config(format!("n_bins must be >= 2, got {}", spec.n_bins)));
    }
    let sensitive_columns: BTreeSet<&str> =
        spec.sensitive.iter().map(|s| s.column.as_str()).collect();
    let pick = |listed: &Option<Vec<String>>, kind: ColumnKind| -> Result<Vec<&Column>> {
        match listed {
            Some(names) => names.iter().map(|n| table.column(n)).collect(),
            None => Ok(table
                .columns
                .iter()
                .filter(|c| c.kind == kind && !sensitive_columns.contains(c.name.as_str()))
                .collect()),
        }
    };
    let numeric = pick(&spec.numeric_columns, ColumnKind::Numeric)?;
    let categorical = pick(&spec.categorical_columns, ColumnKind::Categorical)?;

    let mut names = Vec::new();
    let mut features = Vec::new();
    for column in numeric {
        binarize_numeric(column, spec.n_bins, &mut names, &mut features)?;
    }
    for column in categorical {
        binarize_categorical(column, &mut names, &mut features);
    }
    let groups = spec
        .sensitive
        .iter()
        .map(|s| partition(table, s))
        .collect::<Result<Vec<_>>>()?;
    let labels = Bitset::from_bools(&table.labels);
    BinaryDataset::new(names, features, labels, groups)
}

/// Train/test partition of example indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Test size is `floor(0.2 n)`, at least one.
pub fn test_size(n: usize) -> usize {
    (n / 5).max(1)
}

/// Deterministic 80/20 split.
pub fn split(ds: &BinaryDataset, seed: u64) -> Result<SplitSpec> {
    split_n(ds.n(), seed)
}

pub fn split_n(n: usize, seed: u64) -> Result<SplitSpec> {
    if n < 5 {
        return Err(Error::Config(format!("split needs at least 5 rows, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_test = test_size(n);
    let mut test_indices = idx[..n_test].to_vec();
    let mut train_indices = idx[n_test..].to_vec();
    test_indices.sort_unstable();
    train_indices.sort_unstable();
    Ok(SplitSpec {
        train_indices,
        test_indices,
        seed,
    })
}

/// `indices.len()` draws with replacement from `indices`.
pub fn bootstrap_sample(indices: &[usize], seed: u64) -> Vec<usize> {
    assert!(!indices.is_empty(), "bootstrap of an empty index list");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..indices.len())
        .map(|_| indices[rng.gen_range(0..indices.len())])
        .collect()
}

/// Dataset manifest: where the CSV lives and how to binarize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    /// CSV path, relative to the manifest's directory unless absolute.
    pub csv: PathBuf,
    pub label_column: String,
    pub positive_value: String,
    #[serde(flatten)]
    pub binarize: BinarizeSpec,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_json(&text)?;
        if m.csv.is_relative() {
            if let Some(dir) = path.parent() {
                m.csv = dir.join(&m.csv);
            }
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.binarize.n_bins < 2 {
            return Err(Error::Config("n_bins must be >= 2".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.binarize.sensitive {
            if !seen.insert(&s.attribute) {
                return Err(Error::Config(format!("duplicate attribute {}", s.attribute)));
            }
            if let GroupRule::Quantiles { n_bins } = s.groups {
                if n_bins < 2 {
                    return Err(Error::Config(format!(
                        "attribute {}: quantile groups need n_bins >= 2",
                        s.attribute
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<BinaryDataset> {
        let table = load_csv(&self.csv, &self.label_column, &self.positive_value)?;
        binarize(&table, &self.binarize)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"HICDDS01";

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    n: usize,
    feature_names: Vec<String>,
    groups: Vec<CacheGroup>,
}

#[derive(Serialize, Deserialize)]
struct CacheGroup {
    attribute: String,
    names: Vec<String>,
    assignment: Vec<u32>,
}

/// Serializes a dataset: magic, `u64` LE header length, JSON header, then one
/// packed LE bitset per feature followed by the labels.
pub fn encode_dataset(ds: &BinaryDataset) -> Vec<u8> {
    let header = CacheHeader {
        n: ds.n(),
        feature_names: ds.feature_names.clone(),
        groups: ds
            .groups
            .iter()
            .map(|g| CacheGroup {
                attribute: g.attribute.clone(),
                names: g.names.clone(),
                assignment: g.assignment.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for f in &ds.features {
        out.extend_from_slice(&f.to_le_bytes());
    }
    out.extend_from_slice(&ds.labels.to_le_bytes());
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<BinaryDataset> {
    let bad = |d: &str| Error::format("dataset cache", d.to_string());
    let rest = bytes.strip_prefix(CACHE_MAGIC).ok_or_else(|| bad("bad magic"))?;
    if rest.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let header_len = u64::from_le_bytes(rest[..8].try_into().unwrap());
    let rest = &rest[8..];
    let header_len = usize::try_from(header_len)
        .ok()
        .filter(|&l| l <= rest.len())
        .ok_or_else(|| bad("header length exceeds input"))?;
    let header: CacheHeader = serde_json::from_slice(&rest[..header_len])?;
    let payload = &rest[header_len..];

    let block = header
        .n
        .div_ceil(64)
        .checked_mul(8)
        .ok_or_else(|| bad("row count overflow"))?;
    let expected = header
        .feature_names
        .len()
        .checked_add(1)
        .and_then(|k| k.checked_mul(block))
        .ok_or_else(|| bad("payload size overflow"))?;
    if payload.len() != expected {
        return Err(bad(&format!(
            "payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let mut chunks = payload.chunks_exact(block.max(1));
    let mut next = || -> Result<Bitset> {
        let chunk = if block == 0 { &[][..] } else { chunks.next().unwrap() };
        Bitset::from_le_bytes(header.n, chunk).ok_or_else(|| bad("nonzero padding bits"))
    };
    let features = (0..header.feature_names.len())
        .map(|_| next())
        .collect::<Result<Vec<_>>>()?;
    let labels = next()?;
    let groups = header
        .groups
        .into_iter()
        .map(|g| GroupMap::new(g.attribute, g.names, g.assignment))
        .collect::<Result<Vec<_>>>()?;
    BinaryDataset::new(header.feature_names, features, labels, groups)
}

pub fn write_dataset(path: &Path, ds: &BinaryDataset) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<BinaryDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}
