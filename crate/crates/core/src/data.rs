//! Tabular data ingestion, preprocessing and scenario generation.
//!
//! A [`RawTable`] is parsed from CSV against a [`Schema`], preprocessed into
//! a dense `[0,1]` feature matrix (one-hot categoricals, mean imputation,
//! min-max scaling), and split into labeled-anomaly / unlabeled / test
//! partitions by [`make_scenario`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column-type declarations for a CSV file, including which column holds the
/// class label, which class is normal, and the admissible anomaly classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub label_column: String,
    pub normal_class: String,
    pub anomaly_classes: Vec<String>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Missing,
    Text(String),
}

/// Parsed CSV table: feature cells row-major plus per-row class labels.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub schema: Schema,
    pub rows: Vec<Vec<Cell>>,
    pub labels: Vec<String>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Anomaly class names present in the table, ascending; the class id of
    /// a name is its index in this list.
    pub fn anomaly_classes(&self) -> Vec<String> {
        let mut present: Vec<String> = self
            .labels
            .iter()
            .filter(|l| **l != self.schema.normal_class)
            .cloned()
            .collect();
        present.sort();
        present.dedup();
        present
    }
}

/// Parse a CSV file against `schema`. Categorical cells stay as strings,
/// empty numeric cells are marked [`Cell::Missing`].
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;

    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut col_idx = Vec::with_capacity(schema.columns.len());
    for spec in &schema.columns {
        let idx = headers
            .iter()
            .position(|h| *h == spec.name)
            .ok_or_else(|| Error::Schema(format!("column '{}' not found in header", spec.name)))?;
        col_idx.push(idx);
    }
    let label_idx = headers
        .iter()
        .position(|h| *h == schema.label_column)
        .ok_or_else(|| {
            Error::Schema(format!(
                "label column '{}' not found in header",
                schema.label_column
            ))
        })?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 2; // 1-based, after the header row
        let record = record.map_err(|e| Error::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: row_no,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut cells = Vec::with_capacity(schema.columns.len());
        for (spec, &idx) in schema.columns.iter().zip(&col_idx) {
            let raw = record.get(idx).unwrap_or("").trim();
            let cell = match spec.kind {
                ColumnKind::Numeric => {
                    if raw.is_empty() {
                        Cell::Missing
                    } else {
                        Cell::Number(raw.parse::<f64>().map_err(|_| Error::Parse {
                            row: row_no,
                            message: format!("'{raw}' is not numeric in column '{}'", spec.name),
                        })?)
                    }
                }
                ColumnKind::Categorical => {
                    if raw.is_empty() {
                        Cell::Missing
                    } else {
                        Cell::Text(raw.to_owned())
                    }
                }
            };
            cells.push(cell);
        }
        let label = record.get(label_idx).unwrap_or("").trim().to_owned();
        if label != schema.normal_class && !schema.anomaly_classes.contains(&label) {
            return Err(Error::Schema(format!(
                "unknown label '{label}' at row {row_no}"
            )));
        }
        rows.push(cells);
        labels.push(label);
    }

    if !labels.iter().any(|l| *l == schema.normal_class) {
        return Err(Error::Schema(format!(
            "no rows of normal class '{}'",
            schema.normal_class
        )));
    }
    Ok(RawTable {
        schema: schema.clone(),
        rows,
        labels,
    })
}

/// Per-column preprocessing statistics, computed on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnStats {
    Numeric {
        name: String,
        mean: f64,
        min: f64,
        max: f64,
    },
    Categorical {
        name: String,
        /// One-hot layout: category at index i maps to column offset i.
        categories: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub columns: Vec<ColumnStats>,
}

impl PreprocessStats {
    /// Width of the expanded feature space.
    pub fn feature_dim(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnStats::Numeric { .. } => 1,
                ColumnStats::Categorical { categories, .. } => categories.len(),
            })
            .sum()
    }
}

pub struct PreprocessOutput {
    pub features: Vec<Vec<f64>>,
    pub stats: PreprocessStats,
    /// Number of categorical cells whose category was unseen at fit time
    /// (each maps to an all-zero one-hot block).
    pub unseen_categories: usize,
}

fn fit_stats(table: &RawTable, fit_rows: &[usize]) -> Result<PreprocessStats> {
    let mut columns = Vec::with_capacity(table.schema.columns.len());
    for (ci, spec) in table.schema.columns.iter().enumerate() {
        match spec.kind {
            ColumnKind::Numeric => {
                let mut sum = 0.0;
                let mut count = 0usize;
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for &ri in fit_rows {
                    if let Cell::Number(v) = table.rows[ri][ci] {
                        sum += v;
                        count += 1;
                        min = min.min(v);
                        max = max.max(v);
                    }
                }
                if count == 0 {
                    // All-missing column: impute zeros.
                    min = 0.0;
                    max = 0.0;
                }
                let mean = if count == 0 { 0.0 } else { sum / count as f64 };
                columns.push(ColumnStats::Numeric {
                    name: spec.name.clone(),
                    mean,
                    min,
                    max,
                });
            }
            ColumnKind::Categorical => {
                // First-appearance order over the fit rows.
                let mut categories = Vec::new();
                for &ri in fit_rows {
                    if let Cell::Text(s) = &table.rows[ri][ci] {
                        if !categories.contains(s) {
                            categories.push(s.clone());
                        }
                    }
                }
                columns.push(ColumnStats::Categorical {
                    name: spec.name.clone(),
                    categories,
                });
            }
        }
    }
    Ok(PreprocessStats { columns })
}

fn transform_rows(
    table: &RawTable,
    rows: &[usize],
    stats: &PreprocessStats,
) -> Result<(Vec<Vec<f64>>, usize)> {
    if stats.columns.len() != table.schema.columns.len() {
        return Err(Error::Schema(format!(
            "preprocessing stats have {} columns, table has {}",
            stats.columns.len(),
            table.schema.columns.len()
        )));
    }
    let dim = stats.feature_dim();
    let mut unseen = 0usize;
    let mut features = Vec::with_capacity(rows.len());
    for &ri in rows {
        let mut out = Vec::with_capacity(dim);
        for (ci, col) in stats.columns.iter().enumerate() {
            match col {
                ColumnStats::Numeric { name, mean, min, max } => {
                    if table.schema.columns[ci].name != *name {
                        return Err(Error::Schema(format!(
                            "stats column '{name}' does not match table column '{}'",
                            table.schema.columns[ci].name
                        )));
                    }
                    let v = match table.rows[ri][ci] {
                        Cell::Number(v) => v,
                        _ => *mean,
                    };
                    // Constant columns (min == max) map to 0.
                    let scaled = if max > min { (v - min) / (max - min) } else { 0.0 };
                    out.push(scaled.clamp(0.0, 1.0));
                }
                ColumnStats::Categorical { categories, .. } => {
                    let hit = match &table.rows[ri][ci] {
                        Cell::Text(s) => {
                            let pos = categories.iter().position(|c| c == s);
                            if pos.is_none() {
                                unseen += 1;
                            }
                            pos
                        }
                        _ => None,
                    };
                    for k in 0..categories.len() {
                        out.push(if hit == Some(k) { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        features.push(out);
    }
    Ok((features, unseen))
}

/// One-hot expand categoricals, impute missing numerics with the column
/// mean, and min-max scale everything to `[0,1]`.
///
/// With `stats: None` the statistics are fit on the table itself (training
/// path); with `Some` they are applied as-is (inference path). Categories
/// unseen at fit time map to an all-zero one-hot block and are counted.
pub fn preprocess(table: &RawTable, stats: Option<&PreprocessStats>) -> Result<PreprocessOutput> {
    let all_rows: Vec<usize> = (0..table.n_rows()).collect();
    let stats = match stats {
        Some(s) => s.clone(),
        None => fit_stats(table, &all_rows)?,
    };
    let (features, unseen_categories) = transform_rows(table, &all_rows, &stats)?;
    Ok(PreprocessOutput {
        features,
        stats,
        unseen_categories,
    })
}

/// Recipe for building one training/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Anomaly classes whose labels are exposed to the learner.
    pub known_classes: Vec<String>,
    /// Size of the labeled anomaly set.
    #[serde(default = "default_budget")]
    pub labeled_budget: usize,
    /// Fraction of the unlabeled set that is anomalous.
    #[serde(default = "default_contamination")]
    pub contamination_rate: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_budget() -> usize {
    60
}
fn default_contamination() -> f64 {
    0.02
}
fn default_train_fraction() -> f64 {
    0.8
}

impl ScenarioSpec {
    pub fn new(known_classes: Vec<String>, seed: u64) -> Self {
        ScenarioSpec {
            known_classes,
            labeled_budget: default_budget(),
            contamination_rate: default_contamination(),
            train_fraction: default_train_fraction(),
            seed,
        }
    }

    /// Same spec with the contamination rate set to `n * 2%`.
    pub fn with_pollution_factor(&self, n: u32) -> Result<ScenarioSpec> {
        if !(1..=6).contains(&n) {
            return Err(Error::Config(format!(
                "pollution factor must be in 1..=6, got {n}"
            )));
        }
        let mut out = self.clone();
        out.contamination_rate = n as f64 * 0.02;
        Ok(out)
    }

    fn validate(&self, table: &RawTable) -> Result<()> {
        if self.known_classes.is_empty() {
            return Err(Error::Config("known_classes must be non-empty".into()));
        }
        if !(self.contamination_rate > 0.0 && self.contamination_rate < 1.0) {
            return Err(Error::Config(format!(
                "contamination_rate must be in (0,1), got {}",
                self.contamination_rate
            )));
        }
        if self.labeled_budget == 0 {
            return Err(Error::Config("labeled_budget must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0,1), got {}",
                self.train_fraction
            )));
        }
        let present = table.anomaly_classes();
        for k in &self.known_classes {
            if !present.contains(k) {
                return Err(Error::Config(format!(
                    "known class '{k}' not present in the table"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    LabeledAnomaly,
    Unlabeled,
    Test,
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partition::LabeledAnomaly => write!(f, "labeled_anomaly"),
            Partition::Unlabeled => write!(f, "unlabeled"),
            Partition::Test => write!(f, "test"),
        }
    }
}

/// Per-row class: normal, or an anomaly class id indexing
/// [`Dataset::class_names`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Normal,
    Anomaly(usize),
}

impl Class {
    pub fn is_anomaly(&self) -> bool {
        matches!(self, Class::Anomaly(_))
    }
}

/// Preprocessed, partitioned dataset ready for training and evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub class_of: Vec<Class>,
    pub partition: Vec<Partition>,
    /// Anomaly class names, ascending; `Class::Anomaly(i)` indexes this.
    pub class_names: Vec<String>,
    pub stats: PreprocessStats,
    pub spec: ScenarioSpec,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.features.len()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn indices_of(&self, p: Partition) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.partition[i] == p).collect()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.indices_of(Partition::LabeledAnomaly)
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        self.indices_of(Partition::Unlabeled)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_of(Partition::Test)
    }

    pub fn is_known_class(&self, class: Class) -> bool {
        match class {
            Class::Normal => false,
            Class::Anomaly(i) => self.spec.known_classes.contains(&self.class_names[i]),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Sub-seed for one named stream so that adding a class never perturbs
/// another class's shuffle.
fn sub_seed(seed: u64, tag: &str) -> u64 {
    seed.wrapping_mul(0x9e3779b97f4a7c15) ^ fnv1a(tag.as_bytes())
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Unlabeled anomaly count x satisfying x / (n_normal + x) = rate.
fn contamination_count(n_normal: usize, rate: f64) -> usize {
    round_half_up(n_normal as f64 * rate / (1.0 - rate))
}

/// Build a labeled/unlabeled/test split from a raw table.
///
/// Per class: stratified train/test shuffle with a per-class sub-seed.
/// The labeled set is drawn from training anomalies of the known classes;
/// the unlabeled set is all normal training rows plus anomalies sampled in
/// equal shares from every anomaly class until the contamination rate is
/// met. Unused training anomalies are discarded. Preprocessing statistics
/// are fit on the retained training rows only.
pub fn make_scenario(table: &RawTable, spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate(table)?;
    let class_names = table.anomaly_classes();
    let class_id: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    // Stratified shuffle + split per class. Test takes the head of the
    // shuffle, training keeps the shuffled order of the tail so larger
    // contamination rates only extend a prefix.
    let mut train_by_class: Vec<Vec<usize>> = vec![Vec::new(); class_names.len()];
    let mut train_normal: Vec<usize> = Vec::new();
    let mut test_rows: Vec<usize> = Vec::new();

    let mut all_classes: Vec<&String> = class_names.iter().collect();
    let normal_name = table.schema.normal_class.clone();
    all_classes.push(&normal_name);
    for name in all_classes {
        let mut members: Vec<usize> = (0..table.n_rows())
            .filter(|&i| table.labels[i] == *name)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, name));
        members.shuffle(&mut rng);
        let n_test = round_half_up((1.0 - spec.train_fraction) * members.len() as f64);
        test_rows.extend_from_slice(&members[..n_test]);
        let train = &members[n_test..];
        if *name == normal_name {
            train_normal.extend_from_slice(train);
        } else {
            train_by_class[class_id[name.as_str()]].extend_from_slice(train);
        }
    }

    // Labeled anomaly set from the known classes' training anomalies.
    let mut labeled_pool: Vec<usize> = Vec::new();
    let mut known_ids: Vec<usize> = spec
        .known_classes
        .iter()
        .map(|k| class_id[k.as_str()])
        .collect();
    known_ids.sort_unstable();
    for &cid in &known_ids {
        labeled_pool.extend_from_slice(&train_by_class[cid]);
    }
    if labeled_pool.len() < spec.labeled_budget {
        return Err(Error::Infeasible(format!(
            "labeled_budget {} exceeds the {} training anomalies of the known classes",
            spec.labeled_budget,
            labeled_pool.len()
        )));
    }
    let mut pool_rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, "labeled-anomaly-pool"));
    labeled_pool.shuffle(&mut pool_rng);
    let labeled: Vec<usize> = labeled_pool[..spec.labeled_budget].to_vec();

    // Contamination: equal shares across all anomaly classes, remainders to
    // lower class ids, drawn as a prefix of each class's remaining order.
    let n_contam = contamination_count(train_normal.len(), spec.contamination_rate);
    let k = class_names.len();
    let base = n_contam / k;
    let rem = n_contam % k;
    let mut unlabeled_anomalies: Vec<usize> = Vec::with_capacity(n_contam);
    for cid in 0..k {
        let share = base + usize::from(cid < rem);
        let available: Vec<usize> = train_by_class[cid]
            .iter()
            .copied()
            .filter(|i| !labeled.contains(i))
            .collect();
        if available.len() < share {
            let max_share: usize = (0..k)
                .map(|c| {
                    train_by_class[c]
                        .iter()
                        .filter(|i| !labeled.contains(i))
                        .count()
                })
                .min()
                .unwrap_or(0);
            let max_total = max_share * k;
            let max_rate = max_total as f64 / (train_normal.len() + max_total) as f64;
            return Err(Error::Infeasible(format!(
                "class '{}' has only {} spare training anomalies, {} needed; \
                 achievable contamination rate is at most {:.4}",
                class_names[cid],
                available.len(),
                share,
                max_rate
            )));
        }
        unlabeled_anomalies.extend_from_slice(&available[..share]);
    }

    // Assemble retained rows: labeled, unlabeled (normals + contamination),
    // test. Unused training anomalies are dropped.
    let mut retained: Vec<(usize, Partition)> = Vec::new();
    for &i in &labeled {
        retained.push((i, Partition::LabeledAnomaly));
    }
    for &i in &train_normal {
        retained.push((i, Partition::Unlabeled));
    }
    for &i in &unlabeled_anomalies {
        retained.push((i, Partition::Unlabeled));
    }
    for &i in &test_rows {
        retained.push((i, Partition::Test));
    }
    retained.sort_by_key(|&(i, _)| i);

    let train_rows: Vec<usize> = retained
        .iter()
        .filter(|(_, p)| *p != Partition::Test)
        .map(|&(i, _)| i)
        .collect();
    let stats = fit_stats(table, &train_rows)?;
    let row_ids: Vec<usize> = retained.iter().map(|&(i, _)| i).collect();
    let (features, _) = transform_rows(table, &row_ids, &stats)?;

    let class_of = row_ids
        .iter()
        .map(|&i| {
            if table.labels[i] == table.schema.normal_class {
                Class::Normal
            } else {
                Class::Anomaly(class_id[table.labels[i].as_str()])
            }
        })
        .collect();
    let partition = retained.iter().map(|&(_, p)| p).collect();

    Ok(Dataset {
        features,
        class_of,
        partition,
        class_names,
        stats,
        spec: spec.clone(),
    })
}

/// Rebuild the scenario with contamination rate `n * 2%`, keeping the
/// labeled set and test split unchanged.
pub fn apply_pollution(table: &RawTable, spec: &ScenarioSpec, n: u32) -> Result<Dataset> {
    make_scenario(table, &spec.with_pollution_factor(n)?)
}

// Scenario persistence: a flat CSV feature matrix next to a JSON sidecar
// with partitions, classes, preprocessing stats and the generating spec.

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    class_names: Vec<String>,
    class_of: Vec<Class>,
    partition: Vec<Partition>,
    stats: PreprocessStats,
    spec: ScenarioSpec,
}

pub fn save_scenario(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = String::new();
    for row in &dataset.features {
        // Display prints the shortest representation that round-trips.
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(dir.join("features.csv"), out)?;
    let sidecar = Sidecar {
        format_version: 1,
        class_names: dataset.class_names.clone(),
        class_of: dataset.class_of.clone(),
        partition: dataset.partition.clone(),
        stats: dataset.stats.clone(),
        spec: dataset.spec.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(dir.join("scenario.json"), json)?;
    Ok(())
}

pub fn load_scenario(dir: &Path) -> Result<Dataset> {
    let sidecar_path = dir.join("scenario.json");
    if !sidecar_path.exists() {
        return Err(Error::Config(format!(
            "no scenario at {}: scenario.json missing",
            dir.display()
        )));
    }
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
    let text = std::fs::read_to_string(dir.join("features.csv"))?;
    let mut features = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.parse::<f64>()).collect();
        features.push(row.map_err(|e| Error::Parse {
            row: ln + 1,
            message: e.to_string(),
        })?);
    }
    if features.len() != sidecar.partition.len() || features.len() != sidecar.class_of.len() {
        return Err(Error::Config(format!(
            "scenario row count mismatch: {} feature rows vs {} sidecar entries",
            features.len(),
            sidecar.partition.len()
        )));
    }
    Ok(Dataset {
        features,
        class_of: sidecar.class_of,
        partition: sidecar.partition,
        class_names: sidecar.class_names,
        stats: sidecar.stats,
        spec: sidecar.spec,
    })
}
