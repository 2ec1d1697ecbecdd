//! Connection records, datasets, CSV ingestion and preprocessing.
//!
//! Files are comma separated, UTF-8, with an optional header row. A [`Schema`]
//! names every column's role (numeric feature, dropped nominal, ordinal or
//! one-hot encoded nominal, label) and the raw-label to class mapping. ARFF
//! files are read by giving the schema a `data_marker` (usually `@data`); all
//! lines up to and including the marker are skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnKind {
    Numeric,
    NominalEncoded,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub mean: f64,
    /// Sample standard deviation (divisor N-1) over the records of the owning dataset.
    pub stddev: f64,
}

/// One network connection: raw feature values plus an optional class index.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionRecord {
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

impl ConnectionRecord {
    pub fn new(features: Vec<f64>, label: Option<usize>) -> Self {
        Self { features, label }
    }
}

/// Ordered class names. `normal` is the benign class; binary tasks also set
/// `positive`, the class mapped to y = +1 (abnormal).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
    normal: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    positive: Option<usize>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>, normal: usize) -> Result<Self> {
        let space = Self {
            names,
            normal,
            positive: None,
        };
        space.validate()?;
        Ok(space)
    }

    /// Two-class space `[normal, abnormal]` with the abnormal class positive.
    pub fn binary(normal: impl Into<String>, abnormal: impl Into<String>) -> Self {
        Self {
            names: vec![normal.into(), abnormal.into()],
            normal: 0,
            positive: Some(1),
        }
    }

    pub fn with_positive(mut self, positive: usize) -> Result<Self> {
        self.positive = Some(positive);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() < 2 {
            return Err(Error::Schema(format!(
                "label space needs at least 2 classes, got {}",
                self.names.len()
            )));
        }
        let unique: BTreeSet<&str> = self.names.iter().map(String::as_str).collect();
        if unique.len() != self.names.len() {
            return Err(Error::Schema("duplicate class names".into()));
        }
        if self.normal >= self.names.len() {
            return Err(Error::LabelRange(self.normal));
        }
        if let Some(p) = self.positive {
            if self.names.len() != 2 || p >= 2 || p == self.normal {
                return Err(Error::Schema(
                    "positive class requires a two-class space and must differ from normal".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.names[class]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn normal(&self) -> usize {
        self.normal
    }

    pub fn positive(&self) -> Option<usize> {
        self.positive
    }

    pub fn is_binary(&self) -> bool {
        self.names.len() == 2
    }
}

/// Per-column mean and standard deviation fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizationRecipe {
    #[serde(serialize_with = "crate::floatfmt::vec")]
    pub means: Vec<f64>,
    #[serde(serialize_with = "crate::floatfmt::vec")]
    pub stddevs: Vec<f64>,
}

impl StandardizationRecipe {
    pub fn identity(m: usize) -> Self {
        Self {
            means: vec![0.0; m],
            stddevs: vec![1.0; m],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn is_constant(&self, column: usize) -> bool {
        self.stddevs[column] == 0.0
    }

    /// Writes the standardized form of `x` into `out`; constant columns become 0.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.means.len() {
            return Err(Error::Dimension {
                expected: self.means.len(),
                found: x.len(),
            });
        }
        for ((o, &v), (&mean, &sd)) in out
            .iter_mut()
            .zip(x)
            .zip(self.means.iter().zip(&self.stddevs))
        {
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            *o = if sd > 0.0 { (v - mean) / sd } else { 0.0 };
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ConnectionRecord>,
    columns: Vec<ColumnMeta>,
    labels: LabelSpace,
}

impl Dataset {
    /// Builds a dataset and computes column statistics. Kinds given as
    /// `NominalEncoded` are kept; every other column is numeric or constant
    /// depending on its spread.
    pub fn new(
        records: Vec<ConnectionRecord>,
        names: Vec<String>,
        kinds: Vec<ColumnKind>,
        labels: LabelSpace,
    ) -> Result<Self> {
        if names.len() != kinds.len() {
            return Err(Error::Dimension {
                expected: names.len(),
                found: kinds.len(),
            });
        }
        labels.validate()?;
        let m = names.len();
        for r in &records {
            if r.features.len() != m {
                return Err(Error::Dimension {
                    expected: m,
                    found: r.features.len(),
                });
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
            if let Some(l) = r.label {
                if l >= labels.len() {
                    return Err(Error::LabelRange(l));
                }
            }
        }
        let columns = names
            .into_iter()
            .zip(kinds)
            .map(|(name, kind)| ColumnMeta {
                name,
                kind,
                mean: 0.0,
                stddev: 0.0,
            })
            .collect();
        let mut ds = Self {
            records,
            columns,
            labels,
        };
        ds.refresh_stats();
        Ok(ds)
    }

    /// Convenience constructor for all-numeric data.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        names: Vec<String>,
        space: LabelSpace,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Dimension {
                expected: rows.len(),
                found: labels.len(),
            });
        }
        let kinds = vec![ColumnKind::Numeric; names.len()];
        let records = rows
            .into_iter()
            .zip(labels)
            .map(|(f, l)| ConnectionRecord::new(f, Some(l)))
            .collect();
        Self::new(records, names, kinds, space)
    }

    fn refresh_stats(&mut self) {
        let n = self.records.len();
        for (j, col) in self.columns.iter_mut().enumerate() {
            let (mean, sd) = mean_sd(self.records.iter().map(|r| r.features[j]), n);
            col.mean = mean;
            col.stddev = sd;
            if col.kind != ColumnKind::NominalEncoded {
                col.kind = if sd == 0.0 {
                    ColumnKind::Constant
                } else {
                    ColumnKind::Numeric
                };
            }
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn records(&self) -> &[ConnectionRecord] {
        &self.records
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(move |r| r.features[j])
    }

    /// Class index of every record; fails if any record is unlabeled.
    pub fn targets(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .map(|r| {
                r.label
                    .ok_or_else(|| Error::Degenerate("dataset contains unlabeled records".into()))
            })
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for r in &self.records {
            if let Some(l) = r.label {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        self.with_records(records)
    }

    fn with_records(&self, records: Vec<ConnectionRecord>) -> Dataset {
        let mut ds = Dataset {
            records,
            columns: self.columns.clone(),
            labels: self.labels.clone(),
        };
        ds.refresh_stats();
        ds
    }

    /// Columns at `columns`, in that order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_features()) {
            return Err(Error::Dimension {
                expected: self.n_features(),
                found: bad,
            });
        }
        let records = self
            .records
            .iter()
            .map(|r| ConnectionRecord::new(columns.iter().map(|&c| r.features[c]).collect(), r.label))
            .collect();
        Ok(Dataset {
            records,
            columns: columns.iter().map(|&c| self.columns[c].clone()).collect(),
            labels: self.labels.clone(),
        })
    }

    /// Columns by name, in the order given.
    pub fn select_named(&self, names: &[String]) -> Result<Dataset> {
        let idx = names
            .iter()
            .map(|n| {
                self.columns
                    .iter()
                    .position(|c| &c.name == n)
                    .ok_or_else(|| Error::Schema(format!("no column named {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.select_columns(&idx)
    }

    /// Replaces feature vectors (same row count), e.g. after a projection.
    pub fn map_features(&self, names: Vec<String>, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Dataset> {
        let records = self
            .records
            .iter()
            .map(|r| Ok(ConnectionRecord::new(f(&r.features)?, r.label)))
            .collect::<Result<Vec<_>>>()?;
        let kinds = vec![ColumnKind::Numeric; names.len()];
        Dataset::new(records, names, kinds, self.labels.clone())
    }

    /// Stratified split into (train, test); each class contributes
    /// `round(count * test_fraction)` records to the test side.
    pub fn split_stratified(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for members in self.class_members()? {
            let mut members = members;
            members.shuffle(&mut rng);
            let n_test = (members.len() as f64 * test_fraction).round() as usize;
            test.extend_from_slice(&members[..n_test]);
            train.extend_from_slice(&members[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    /// Record indices grouped by class, in record order.
    pub fn class_members(&self) -> Result<Vec<Vec<usize>>> {
        let mut members = vec![Vec::new(); self.labels.len()];
        for (i, y) in self.targets()?.into_iter().enumerate() {
            members[y].push(i);
        }
        Ok(members)
    }

    /// Writes the dataset as CSV with a header row; labels are written as class names.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.column_names();
        header.push("label".into());
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for r in &self.records {
            row.clear();
            row.extend(r.features.iter().map(|v| format_value(*v)));
            row.push(r.label.map(|l| self.labels.name(l).to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    // Rounding can leave a tiny spread on an exactly constant column.
    if sd <= f64::EPSILON * mean.abs() {
        (mean, 0.0)
    } else {
        (mean, sd)
    }
}

/// Fits per-column mean and standard deviation (divisor N-1).
pub fn standardize_fit(train: &Dataset) -> Result<StandardizationRecipe> {
    if train.len() < 2 {
        return Err(Error::Degenerate(format!(
            "standardization needs at least 2 records, got {}",
            train.len()
        )));
    }
    Ok(StandardizationRecipe {
        means: train.columns.iter().map(|c| c.mean).collect(),
        stddevs: train.columns.iter().map(|c| c.stddev).collect(),
    })
}

/// Applies `recipe` to every record, returning a new dataset.
pub fn standardize_apply(ds: &Dataset, recipe: &StandardizationRecipe) -> Result<Dataset> {
    if recipe.len() != ds.n_features() {
        return Err(Error::Dimension {
            expected: recipe.len(),
            found: ds.n_features(),
        });
    }
    let records = ds
        .records
        .iter()
        .map(|r| Ok(ConnectionRecord::new(recipe.apply(&r.features)?, r.label)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ds.with_records(records);
    // Keep the original column kinds; a constant training column stays constant.
    for (c, orig) in out.columns.iter_mut().zip(&ds.columns) {
        c.kind = orig.kind;
    }
    Ok(out)
}

/// Draws exactly `per_class[c]` records from each class `c` without
/// replacement. Classes missing from the map contribute nothing.
pub fn stratified_sample(ds: &Dataset, per_class: &BTreeMap<usize, usize>, seed: u64) -> Result<Dataset> {
    let members = ds.class_members()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for (&class, &count) in per_class {
        let pool = members.get(class).ok_or(Error::LabelRange(class))?;
        if count > pool.len() {
            return Err(Error::InsufficientClass {
                class: ds.labels.name(class).to_string(),
                requested: count,
                available: pool.len(),
            });
        }
        let mut pool = pool.clone();
        pool.shuffle(&mut rng);
        chosen.extend_from_slice(&pool[..count]);
    }
    chosen.shuffle(&mut rng);
    Ok(ds.subset(&chosen))
}

/// Same as [`stratified_sample`] with classes named instead of indexed.
pub fn stratified_sample_named(ds: &Dataset, per_class: &[(&str, usize)], seed: u64) -> Result<Dataset> {
    let mut map = BTreeMap::new();
    for &(name, count) in per_class {
        let idx = ds
            .labels
            .index_of(name)
            .ok_or_else(|| Error::Unmapped(name.to_string()))?;
        map.insert(idx, count);
    }
    stratified_sample(ds, &map, seed)
}

/// Target label space for [`relabel`] plus the old-name to new-name map.
#[derive(Debug, Clone)]
pub struct Relabeling {
    pub classes: Vec<String>,
    pub normal: String,
    pub positive: Option<String>,
    pub mapping: BTreeMap<String, String>,
}

impl Relabeling {
    /// Class `target` against everything else: `[not-target, target]`, target positive.
    pub fn one_vs_rest(ds: &Dataset, target: &str) -> Self {
        let rest = format!("not-{target}");
        let mapping = ds
            .labels
            .names()
            .iter()
            .map(|n| {
                let to = if n == target { target.to_string() } else { rest.clone() };
                (n.clone(), to)
            })
            .collect();
        Self {
            classes: vec![rest.clone(), target.to_string()],
            normal: rest,
            positive: Some(target.to_string()),
            mapping,
        }
    }

    /// Normal class kept, every other class merged into `abnormal`.
    pub fn normal_vs_abnormal(ds: &Dataset, abnormal: &str) -> Self {
        let normal = ds.labels.name(ds.labels.normal()).to_string();
        let mapping = ds
            .labels
            .names()
            .iter()
            .map(|n| {
                let to = if *n == normal { normal.clone() } else { abnormal.to_string() };
                (n.clone(), to)
            })
            .collect();
        Self {
            classes: vec![normal.clone(), abnormal.to_string()],
            normal,
            positive: Some(abnormal.to_string()),
            mapping,
        }
    }
}

pub fn relabel(ds: &Dataset, how: &Relabeling) -> Result<Dataset> {
    let lookup = |name: &str| -> Result<usize> {
        how.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Unmapped(name.to_string()))
    };
    let normal = lookup(&how.normal)?;
    let mut space = LabelSpace::new(how.classes.clone(), normal)?;
    if let Some(p) = &how.positive {
        space = space.with_positive(lookup(p)?)?;
    }
    let table = ds
        .labels
        .names()
        .iter()
        .map(|old| {
            let new = how
                .mapping
                .get(old)
                .ok_or_else(|| Error::Unmapped(old.clone()))?;
            lookup(new)
        })
        .collect::<Result<Vec<_>>>()?;
    let records = ds
        .records
        .iter()
        .map(|r| ConnectionRecord::new(r.features.clone(), r.label.map(|l| table[l])))
        .collect();
    Ok(Dataset {
        records,
        columns: ds.columns.clone(),
        labels: space,
    })
}

// ---------------------------------------------------------------------------
// Schemas and CSV loading

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnRole {
    Numeric,
    /// Nominal column that is not used.
    Drop,
    /// Nominal column encoded as the index of its value in `categories`.
    Ordinal,
    /// Nominal column expanded into one 0/1 column per category.
    OneHot,
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
    /// Category vocabulary for ordinal/one-hot columns. When absent, the
    /// sorted distinct values of the file being loaded are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            role,
            categories: None,
        }
    }
}

/// Declarative description of a CSV layout (TOML on disk).
///
/// ```toml
/// name = "my-data"
/// header = true
/// classes = ["Normal", "Attack"]
/// normal = "Normal"
/// positive = "Attack"
/// strip_label_suffix = "."
/// default_class = "Attack"
///
/// [[columns]]
/// name = "duration"
/// role = "numeric"
///
/// [[columns]]
/// name = "label"
/// role = "label"
///
/// [label_map]
/// "normal" = "Normal"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub name: String,
    #[serde(default)]
    pub header: bool,
    /// Lines up to and including the first line starting with this marker are skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_marker: Option<String>,
    pub columns: Vec<ColumnSpec>,
    pub classes: Vec<String>,
    pub normal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strip_label_suffix: Option<String>,
    /// Class for raw labels absent from `label_map` and `classes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_class: Option<String>,
    #[serde(default)]
    pub label_map: BTreeMap<String, String>,
}

/// Feature columns of the KDD Cup 1999 files, in file order.
pub const KDD_COLUMNS: [&str; 41] = [
    "duration",
    "protocol_type",
    "service",
    "flag",
    "src_bytes",
    "dst_bytes",
    "land",
    "wrong_fragment",
    "urgent",
    "hot",
    "num_failed_logins",
    "logged_in",
    "num_compromised",
    "root_shell",
    "su_attempted",
    "num_root",
    "num_file_creations",
    "num_shells",
    "num_access_files",
    "num_outbound_cmds",
    "is_host_login",
    "is_guest_login",
    "count",
    "srv_count",
    "serror_rate",
    "srv_serror_rate",
    "rerror_rate",
    "srv_rerror_rate",
    "same_srv_rate",
    "diff_srv_rate",
    "srv_diff_host_rate",
    "dst_host_count",
    "dst_host_srv_count",
    "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate",
    "dst_host_srv_serror_rate",
    "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
];

const KDD_NOMINAL: [&str; 3] = ["protocol_type", "service", "flag"];

/// Attack name to top-level category, covering the training and test files.
pub const KDD_CATEGORIES: [(&str, &str); 39] = [
    ("back", "DOS"),
    ("land", "DOS"),
    ("neptune", "DOS"),
    ("pod", "DOS"),
    ("smurf", "DOS"),
    ("teardrop", "DOS"),
    ("apache2", "DOS"),
    ("mailbomb", "DOS"),
    ("processtable", "DOS"),
    ("udpstorm", "DOS"),
    ("ipsweep", "Probe"),
    ("nmap", "Probe"),
    ("portsweep", "Probe"),
    ("satan", "Probe"),
    ("mscan", "Probe"),
    ("saint", "Probe"),
    ("ftp_write", "R2L"),
    ("guess_passwd", "R2L"),
    ("imap", "R2L"),
    ("multihop", "R2L"),
    ("phf", "R2L"),
    ("spy", "R2L"),
    ("warezclient", "R2L"),
    ("warezmaster", "R2L"),
    ("named", "R2L"),
    ("sendmail", "R2L"),
    ("snmpgetattack", "R2L"),
    ("snmpguess", "R2L"),
    ("worm", "R2L"),
    ("xlock", "R2L"),
    ("xsnoop", "R2L"),
    ("buffer_overflow", "U2R"),
    ("loadmodule", "U2R"),
    ("perl", "U2R"),
    ("rootkit", "U2R"),
    ("ps", "U2R"),
    ("sqlattack", "U2R"),
    ("xterm", "U2R"),
    ("httptunnel", "U2R"),
];

/// Numeric columns of the gas-pipeline command-injection layout written by
/// [`crate::synth::ics_command_injection`].
pub const ICS_COLUMNS: [&str; 17] = [
    "invalid_function_code",
    "pump_state",
    "pid_cycle_time",
    "pid_deadband",
    "pid_gain",
    "pid_rate",
    "pid_reset",
    "pipeline_psi",
    "solenoid_state",
    "setpoint",
    "delta_pid_cycle_time",
    "delta_pid_deadband",
    "delta_pid_gain",
    "delta_pid_rate",
    "delta_pid_reset",
    "delta_pipeline_psi",
    "crc_rate",
];

pub const ICS_CLASSES: [&str; 5] = [
    "Good",
    "AddressScan",
    "FuncCodeScan",
    "IllegalSetpoint",
    "PIDModification",
];

impl Schema {
    pub const BUILTIN: [&'static str; 6] = [
        "kdd-binary",
        "kdd-5class",
        "kdd-4class",
        "ics-multi",
        "ics-multi-address",
        "ics-binary",
    ];

    pub fn builtin(name: &str) -> Option<Schema> {
        match name {
            "kdd-binary" | "kdd-5class" | "kdd-4class" => Some(Self::kdd(name)),
            "ics-multi" | "ics-multi-address" | "ics-binary" => Some(Self::ics(name)),
            _ => None,
        }
    }

    /// A built-in schema name, or a path to a TOML schema file.
    pub fn resolve(name_or_path: &str) -> Result<Schema> {
        if let Some(s) = Self::builtin(name_or_path) {
            return Ok(s);
        }
        let text = fs::read_to_string(name_or_path).map_err(|e| Error::io(name_or_path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Schema> {
        let schema: Schema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    fn kdd(name: &str) -> Schema {
        let mut columns: Vec<ColumnSpec> = KDD_COLUMNS
            .iter()
            .map(|c| {
                let role = if KDD_NOMINAL.contains(c) {
                    ColumnRole::Drop
                } else {
                    ColumnRole::Numeric
                };
                ColumnSpec::new(*c, role)
            })
            .collect();
        columns.push(ColumnSpec::new("label", ColumnRole::Label));
        let (classes, positive, default_class, label_map): (Vec<&str>, _, _, BTreeMap<String, String>) =
            match name {
                "kdd-binary" => (
                    vec!["Normal", "Attack"],
                    Some("Attack".to_string()),
                    Some("Attack".to_string()),
                    BTreeMap::new(),
                ),
                "kdd-4class" => (
                    vec!["Normal", "Smurf", "Neptune", "Others"],
                    None,
                    Some("Others".to_string()),
                    [("smurf", "Smurf"), ("neptune", "Neptune")]
                        .iter()
                        .map(|(a, b)| (a.to_string(), b.to_string()))
                        .collect(),
                ),
                _ => (
                    vec!["Normal", "DOS", "Probe", "R2L", "U2R"],
                    None,
                    None,
                    KDD_CATEGORIES
                        .iter()
                        .map(|(a, b)| (a.to_string(), b.to_string()))
                        .collect(),
                ),
            };
        let mut label_map = label_map;
        label_map.insert("normal".into(), "Normal".into());
        Schema {
            name: name.to_string(),
            header: false,
            data_marker: None,
            columns,
            classes: classes.into_iter().map(String::from).collect(),
            normal: "Normal".into(),
            positive,
            strip_label_suffix: Some(".".into()),
            default_class,
            label_map,
        }
    }

    fn ics(name: &str) -> Schema {
        let address_role = if name == "ics-multi-address" {
            ColumnRole::Ordinal
        } else {
            ColumnRole::Drop
        };
        let mut columns = vec![ColumnSpec::new("address", address_role)];
        columns.extend(ICS_COLUMNS.iter().map(|c| ColumnSpec::new(*c, ColumnRole::Numeric)));
        columns.push(ColumnSpec::new("label", ColumnRole::Label));
        let (classes, positive, label_map) = if name == "ics-binary" {
            let map = ICS_CLASSES
                .iter()
                .map(|c| {
                    let to = if *c == "Good" { "Good" } else { "Attack" };
                    (c.to_string(), to.to_string())
                })
                .collect();
            (vec!["Good".to_string(), "Attack".to_string()], Some("Attack".to_string()), map)
        } else {
            (ICS_CLASSES.iter().map(|c| c.to_string()).collect(), None, BTreeMap::new())
        };
        Schema {
            name: name.to_string(),
            header: true,
            data_marker: None,
            columns,
            classes,
            normal: "Good".into(),
            positive,
            strip_label_suffix: None,
            default_class: None,
            label_map,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let labels = self.columns.iter().filter(|c| c.role == ColumnRole::Label).count();
        if labels > 1 {
            return Err(Error::Schema("more than one label column".into()));
        }
        if !self.classes.contains(&self.normal) {
            return Err(Error::Schema(format!("normal class {:?} not in classes", self.normal)));
        }
        for target in self
            .label_map
            .values()
            .chain(self.default_class.iter())
            .chain(self.positive.iter())
        {
            if !self.classes.contains(target) {
                return Err(Error::Schema(format!("class {target:?} not in classes")));
            }
        }
        self.label_space().map(|_| ())
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        let idx = |n: &str| self.classes.iter().position(|c| c == n);
        let normal = idx(&self.normal)
            .ok_or_else(|| Error::Schema(format!("normal class {:?} not in classes", self.normal)))?;
        let mut space = LabelSpace::new(self.classes.clone(), normal)?;
        if let Some(p) = &self.positive {
            let p = idx(p).ok_or_else(|| Error::Schema(format!("positive class {p:?} not in classes")))?;
            space = space.with_positive(p)?;
        }
        Ok(space)
    }

    fn map_label(&self, raw: &str, space: &LabelSpace) -> Option<usize> {
        let mut raw = raw.trim();
        if let Some(suffix) = &self.strip_label_suffix {
            raw = raw.strip_suffix(suffix.as_str()).unwrap_or(raw);
        }
        let name = self
            .label_map
            .get(raw)
            .map(String::as_str)
            .or_else(|| space.index_of(raw).map(|_| raw))
            .or(self.default_class.as_deref())?;
        space.index_of(name)
    }
}

/// Outcome of [`load_csv`] besides the dataset itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    /// Rows dropped for missing, non-numeric or non-finite values.
    pub rejected: usize,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (ds, report) = parse_csv(&text, schema)?;
    if ds.is_empty() && report.rows_read == 0 {
        return Err(Error::EmptyInput { path: path.into() });
    }
    Ok((ds, report))
}

/// Parses CSV text already in memory; see [`load_csv`].
pub fn parse_csv(text: &str, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    schema.validate()?;
    let space = schema.label_space()?;

    let (body, line_offset) = match &schema.data_marker {
        Some(marker) => {
            let marker = marker.to_ascii_lowercase();
            let mut offset = 0usize;
            let mut rest = None;
            for (i, line) in text.split_inclusive('\n').enumerate() {
                offset += line.len();
                if line.trim_start().to_ascii_lowercase().starts_with(&marker) {
                    rest = Some((&text[offset..], i as u64 + 1));
                    break;
                }
            }
            rest.ok_or_else(|| Error::Schema(format!("data marker {marker:?} not found")))?
        }
        None => (text, 0),
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .flexible(true)
        .comment(schema.data_marker.as_ref().map(|_| b'%'))
        .from_reader(body.as_bytes());

    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        let line = rec.position().map(|p| p.line()).unwrap_or(0) + line_offset;
        if rec.len() != schema.columns.len() {
            return Err(Error::Arity {
                line,
                expected: schema.columns.len(),
                found: rec.len(),
            });
        }
        rows.push((line, rec));
    }

    // Category vocabularies for encoded nominal columns.
    let mut vocab: HashMap<usize, Vec<String>> = HashMap::new();
    for (j, spec) in schema.columns.iter().enumerate() {
        if matches!(spec.role, ColumnRole::Ordinal | ColumnRole::OneHot) {
            let cats = match &spec.categories {
                Some(c) => c.clone(),
                None => rows
                    .iter()
                    .map(|(_, r)| r[j].trim().to_string())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            };
            vocab.insert(j, cats);
        }
    }

    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for (j, spec) in schema.columns.iter().enumerate() {
        match spec.role {
            ColumnRole::Numeric => {
                names.push(spec.name.clone());
                kinds.push(ColumnKind::Numeric);
            }
            ColumnRole::Ordinal => {
                names.push(spec.name.clone());
                kinds.push(ColumnKind::NominalEncoded);
            }
            ColumnRole::OneHot => {
                for cat in &vocab[&j] {
                    names.push(format!("{}={}", spec.name, cat));
                    kinds.push(ColumnKind::NominalEncoded);
                }
            }
            ColumnRole::Drop | ColumnRole::Label => {}
        }
    }

    let mut report = LoadReport {
        rows_read: rows.len(),
        rejected: 0,
    };
    let mut records = Vec::with_capacity(rows.len());
    'rows: for (line, rec) in &rows {
        let mut features = Vec::with_capacity(names.len());
        let mut label = None;
        for (j, spec) in schema.columns.iter().enumerate() {
            let field = rec[j].trim();
            match spec.role {
                ColumnRole::Numeric => match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => features.push(v),
                    _ => {
                        report.rejected += 1;
                        continue 'rows;
                    }
                },
                ColumnRole::Ordinal => match vocab[&j].iter().position(|c| c == field) {
                    Some(i) => features.push(i as f64),
                    None => {
                        report.rejected += 1;
                        continue 'rows;
                    }
                },
                ColumnRole::OneHot => {
                    let cats = &vocab[&j];
                    if !cats.iter().any(|c| c == field) {
                        report.rejected += 1;
                        continue 'rows;
                    }
                    features.extend(cats.iter().map(|c| if c == field { 1.0 } else { 0.0 }));
                }
                ColumnRole::Label => {
                    label = Some(schema.map_label(field, &space).ok_or_else(|| Error::UnknownLabel {
                        line: *line,
                        label: field.to_string(),
                    })?);
                }
                ColumnRole::Drop => {}
            }
        }
        records.push(ConnectionRecord::new(features, label));
    }
    let ds = Dataset::new(records, names, kinds, space)?;
    Ok((ds, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space2() -> LabelSpace {
        LabelSpace::binary("normal", "attack")
    }

    fn one_col(values: &[f64]) -> Dataset {
        Dataset::from_rows(
            values.iter().map(|v| vec![*v]).collect(),
            vec![0; values.len()],
            vec!["x".into()],
            space2(),
        )
        .unwrap()
    }

    #[test]
    fn fit_two_points() {
        let r = standardize_fit(&one_col(&[0.0, 2.0])).unwrap();
        assert_eq!(r.means, vec![1.0]);
        assert!((r.stddevs[0] - 2f64.sqrt()).abs() < 1e-15);
        let out = standardize_apply(&one_col(&[0.0, 2.0]), &r).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((out.records()[0].features[0] + h).abs() < 1e-15);
        assert!((out.records()[1].features[0] - h).abs() < 1e-15);
    }

    #[test]
    fn constant_column() {
        let ds = one_col(&[5.0, 5.0, 5.0]);
        assert_eq!(ds.columns()[0].kind, ColumnKind::Constant);
        let r = standardize_fit(&ds).unwrap();
        assert_eq!((r.means[0], r.stddevs[0]), (5.0, 0.0));
        let out = standardize_apply(&ds, &r).unwrap();
        assert!(out.records().iter().all(|x| x.features[0] == 0.0));
    }

    #[test]
    fn fit_rejects_single_row() {
        assert!(matches!(standardize_fit(&one_col(&[1.0])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn apply_checks_arity() {
        let r = StandardizationRecipe::identity(2);
        assert!(matches!(
            standardize_apply(&one_col(&[1.0, 2.0]), &r),
            Err(Error::Dimension { .. })
        ));
    }

    fn three_class() -> Dataset {
        let space = LabelSpace::new(vec!["a".into(), "b".into(), "c".into()], 0).unwrap();
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        Dataset::from_rows(rows, vec![0, 0, 0, 0, 1, 1, 1, 2, 2], vec!["x".into()], space).unwrap()
    }

    #[test]
    fn sample_counts_and_errors() {
        let ds = three_class();
        let s = stratified_sample_named(&ds, &[("a", 2), ("b", 3), ("c", 1)], 7).unwrap();
        assert_eq!(s.class_counts(), vec![2, 3, 1]);
        let again = stratified_sample_named(&ds, &[("a", 2), ("b", 3), ("c", 1)], 7).unwrap();
        assert_eq!(s, again);
        let err = stratified_sample_named(&ds, &[("c", 3)], 7).unwrap_err();
        assert!(matches!(err, Error::InsufficientClass { requested: 3, available: 2, .. }));
    }

    #[test]
    fn full_sample_is_permutation() {
        let ds = three_class();
        let s = stratified_sample_named(&ds, &[("a", 4), ("b", 3), ("c", 2)], 1).unwrap();
        let mut got: Vec<i64> = s.records().iter().map(|r| r.features[0] as i64).collect();
        got.sort_unstable();
        assert_eq!(got, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn relabel_identity_and_one_vs_rest() {
        let ds = three_class();
        let id = Relabeling {
            classes: vec!["a".into(), "b".into(), "c".into()],
            normal: "a".into(),
            positive: None,
            mapping: ["a", "b", "c"].iter().map(|c| (c.to_string(), c.to_string())).collect(),
        };
        assert_eq!(relabel(&ds, &id).unwrap().targets().unwrap(), ds.targets().unwrap());

        let ovr = relabel(&ds, &Relabeling::one_vs_rest(&ds, "b")).unwrap();
        assert_eq!(ovr.labels().len(), 2);
        assert_eq!(ovr.labels().positive(), Some(1));
        assert_eq!(ovr.class_counts(), vec![6, 3]);
        assert_eq!((ovr.len(), ovr.n_features()), (ds.len(), ds.n_features()));

        let mut partial = id.clone();
        partial.mapping.remove("c");
        assert!(matches!(relabel(&ds, &partial), Err(Error::Unmapped(c)) if c == "c"));
    }

    fn tiny_schema() -> Schema {
        Schema::from_toml(
            r#"
            name = "tiny"
            header = true
            classes = ["ok", "bad"]
            normal = "ok"
            positive = "bad"
            [[columns]]
            name = "a"
            role = "numeric"
            [[columns]]
            name = "proto"
            role = "one-hot"
            [[columns]]
            name = "y"
            role = "label"
            [label_map]
            "evil" = "bad"
            "#,
        )
        .unwrap()
    }

    #[test]
    fn parse_with_one_hot_and_rejects() {
        let text = "a,proto,y\n1.5,tcp,ok\nx,udp,evil\n2,udp,evil\nNaN,tcp,ok\n";
        let (ds, rep) = parse_csv(text, &tiny_schema()).unwrap();
        assert_eq!(rep, LoadReport { rows_read: 4, rejected: 2 });
        assert_eq!(ds.column_names(), vec!["a", "proto=tcp", "proto=udp"]);
        assert_eq!(ds.records()[1].features, vec![2.0, 0.0, 1.0]);
        assert_eq!(ds.targets().unwrap(), vec![0, 1]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_csv("a,proto,y\n1,tcp,ok\n2,tcp,weird\n", &tiny_schema()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { line: 3, ref label } if label == "weird"));
        let err = parse_csv("a,proto,y\n1,tcp\n", &tiny_schema()).unwrap_err();
        assert!(matches!(err, Error::Arity { line: 2, expected: 3, found: 2 }));
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        std::fs::write(&p, "").unwrap();
        assert!(matches!(load_csv(&p, &tiny_schema()), Err(Error::EmptyInput { .. })));
    }

    #[test]
    fn kdd_rows() {
        let schema = Schema::builtin("kdd-5class").unwrap();
        let row = |label: &str| {
            let mut f: Vec<String> = (0..41).map(|i| i.to_string()).collect();
            f[1] = "tcp".into();
            f[2] = "http".into();
            f[3] = "SF".into();
            format!("{},{label}\n", f.join(","))
        };
        let text = [row("normal."), row("smurf."), row("httptunnel."), row("guess_passwd.")].concat();
        let (ds, _) = parse_csv(&text, &schema).unwrap();
        assert_eq!(ds.n_features(), 38);
        assert_eq!(ds.targets().unwrap(), vec![0, 1, 4, 3]);

        let (ds4, _) = parse_csv(&text, &Schema::builtin("kdd-4class").unwrap()).unwrap();
        assert_eq!(ds4.targets().unwrap(), vec![0, 1, 3, 3]);
        let (bin, _) = parse_csv(&text, &Schema::builtin("kdd-binary").unwrap()).unwrap();
        assert_eq!(bin.targets().unwrap(), vec![0, 1, 1, 1]);
    }

    #[test]
    fn arff_marker_skips_header() {
        let mut schema = tiny_schema();
        schema.header = false;
        schema.data_marker = Some("@data".into());
        let text = "@relation x\n@attribute a numeric\n% comment\n@DATA\n1,tcp,ok\n2,tcp,bad\n";
        let (ds, _) = parse_csv(text, &schema).unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn csv_export_roundtrip() {
        let ds = three_class();
        let mut buf = Vec::new();
        ds.write_csv_to(&mut buf).unwrap();
        let schema = Schema {
            name: "t".into(),
            header: true,
            data_marker: None,
            columns: vec![ColumnSpec::new("x", ColumnRole::Numeric), ColumnSpec::new("label", ColumnRole::Label)],
            classes: vec!["a".into(), "b".into(), "c".into()],
            normal: "a".into(),
            positive: None,
            strip_label_suffix: None,
            default_class: None,
            label_map: BTreeMap::new(),
        };
        let (back, _) = parse_csv(std::str::from_utf8(&buf).unwrap(), &schema).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn builtin_schemas_validate_and_serialize() {
        for name in Schema::BUILTIN {
            let s = Schema::builtin(name).unwrap();
            s.validate().unwrap();
            assert_eq!(Schema::from_toml(&s.to_toml()).unwrap(), s);
        }
    }
}
