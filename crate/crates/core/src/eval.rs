//! Confusion matrices, recall/precision, error rates, repeated stratified
//! k-fold cross-validation and Student-t confidence intervals.
//!
//! Two counting conventions are supported. `Mode::Binary` is the usual one
//! with the abnormal class positive. `Mode::Multi` treats every non-normal
//! class as an intrusion type:
//!
//! * TP: intrusions predicted as their own type
//! * FN: intrusions predicted normal
//! * FP: normal records predicted as any intrusion, plus intrusions predicted
//!   as a different intrusion type
//! * TN: normal records predicted normal
//!
//! Recall is `TP / (TP + FN)` and precision `TP / (TP + FP)`; a ratio with a
//! zero denominator is reported as `None`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{Dataset, LabelSpace};
use crate::error::{Error, Result};
use crate::model::Classifier;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[actual][predicted]`.
    counts: Vec<Vec<u64>>,
    labels: LabelSpace,
    normal: usize,
}

impl ConfusionMatrix {
    pub fn new(labels: LabelSpace, normal: usize) -> Result<Self> {
        if normal >= labels.len() {
            return Err(Error::LabelRange(normal));
        }
        let k = labels.len();
        Ok(Self {
            counts: vec![vec![0; k]; k],
            labels,
            normal,
        })
    }

    pub fn from_counts(counts: Vec<Vec<u64>>, labels: LabelSpace, normal: usize) -> Result<Self> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension {
                expected: k,
                found: counts.len(),
            });
        }
        let mut cm = Self::new(labels, normal)?;
        cm.counts = counts;
        Ok(cm)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        let k = self.labels.len();
        if actual >= k {
            return Err(Error::LabelRange(actual));
        }
        if predicted >= k {
            return Err(Error::LabelRange(predicted));
        }
        self.counts[actual][predicted] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.labels != self.labels {
            return Err(Error::Config("cannot merge confusion matrices over different label spaces".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual][predicted]
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn normal(&self) -> usize {
        self.normal
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Misclassified fraction; `None` for an empty matrix.
    pub fn error_rate(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| (total - self.correct()) as f64 / total as f64)
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let names = self.labels.names();
        let width = names.iter().map(|n| n.len()).max().unwrap_or(4).max(9);
        write!(out, "{:>width$}", "actual\\pred")?;
        for n in names {
            write!(out, " {n:>width$}")?;
        }
        writeln!(out, " {:>width$}", "recall")?;
        let rates = self.per_class();
        for (i, row) in self.counts.iter().enumerate() {
            write!(out, "{:>width$}", names[i])?;
            for c in row {
                write!(out, " {c:>width$}")?;
            }
            writeln!(out, " {:>width$}", fmt_opt(rates[i].recall))?;
        }
        write!(out, "{:>width$}", "precision")?;
        for r in &rates {
            write!(out, " {:>width$}", fmt_opt(r.precision))?;
        }
        writeln!(out)
    }

    /// Per-class recall (diagonal over row sum) and precision (diagonal over column sum).
    pub fn per_class(&self) -> Vec<ClassRates> {
        let k = self.counts.len();
        (0..k)
            .map(|c| {
                let row: u64 = self.counts[c].iter().sum();
                let col: u64 = self.counts.iter().map(|r| r[c]).sum();
                let d = self.counts[c][c];
                ClassRates {
                    recall: ratio(d, row),
                    precision: ratio(d, col),
                }
            })
            .collect()
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Binary,
    Multi,
}

impl Mode {
    pub fn for_labels(labels: &LabelSpace) -> Mode {
        if labels.is_binary() {
            Mode::Binary
        } else {
            Mode::Multi
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPrecision {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
    pub per_class: Vec<ClassRates>,
}

pub fn confusion(actual: &[usize], predicted: &[usize], labels: &LabelSpace, normal: usize) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            found: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(labels.clone(), normal)?;
    for (&a, &p) in actual.iter().zip(predicted) {
        cm.record(a, p)?;
    }
    Ok(cm)
}

pub fn recall_precision(cm: &ConfusionMatrix, mode: Mode) -> Result<RecallPrecision> {
    let k = cm.counts.len();
    let n = cm.normal;
    let (tp, fn_, fp, tn) = match mode {
        Mode::Binary => {
            if k != 2 {
                return Err(Error::Config(format!("binary recall/precision needs 2 classes, got {k}")));
            }
            let a = 1 - n;
            (cm.counts[a][a], cm.counts[a][n], cm.counts[n][a], cm.counts[n][n])
        }
        Mode::Multi => {
            let mut tp = 0;
            let mut fn_ = 0;
            let mut fp = 0;
            for a in (0..k).filter(|&a| a != n) {
                for p in 0..k {
                    let c = cm.counts[a][p];
                    if p == a {
                        tp += c;
                    } else if p == n {
                        fn_ += c;
                    } else {
                        fp += c;
                    }
                }
                fp += cm.counts[n][a];
            }
            (tp, fn_, fp, cm.counts[n][n])
        }
    };
    Ok(RecallPrecision {
        recall: ratio(tp, tp + fn_),
        precision: ratio(tp, tp + fp),
        tp,
        fn_,
        fp,
        tn,
        per_class: cm.per_class(),
    })
}

/// Fraction of positions where `predicted` differs from `actual`.
pub fn error_rate<T: PartialEq>(actual: &[T], predicted: &[T]) -> Result<f64> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            found: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::Degenerate("error rate of an empty sample".into()));
    }
    let wrong = actual.iter().zip(predicted).filter(|(a, p)| a != p).count();
    Ok(wrong as f64 / actual.len() as f64)
}

/// Two-sided Student-t quantile `t_{(1-confidence)/2}(dof)`.
pub fn t_quantile(confidence: f64, dof: f64) -> Result<f64> {
    if confidence.is_nan() || confidence <= 0.0 || confidence >= 1.0 || dof.is_nan() || dof <= 0.0 {
        return Err(Error::Config(format!("bad t quantile arguments ({confidence}, {dof})")));
    }
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Config(e.to_string()))?;
    Ok(t.inverse_cdf(0.5 + confidence / 2.0))
}

/// `mean -/+ t_{a/2}(n-1) s / sqrt(n)` with `s` the sample standard deviation.
pub fn confidence_interval(samples: &[f64], confidence: f64) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("confidence interval needs 2 samples, got {n}")));
    }
    if samples.iter().all(|&x| x == samples[0]) {
        return Ok((samples[0], samples[0]));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    let s = (ss / (n - 1) as f64).sqrt();
    if s == 0.0 {
        return Ok((mean, mean));
    }
    let half = t_quantile(confidence, (n - 1) as f64)? * s / (n as f64).sqrt();
    Ok((mean - half, mean + half))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub repeats: usize,
    pub folds: usize,
    pub seed: u64,
    pub confidence: f64,
    /// Counting convention; defaults to binary for two classes, multi otherwise.
    pub mode: Option<Mode>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            repeats: 10,
            folds: 10,
            seed: 0,
            confidence: 0.95,
            mode: None,
        }
    }
}

/// Assigns every record to one of `folds` folds: records are shuffled within
/// each class, classes are laid end to end, and positions are dealt
/// round-robin. Each fold therefore gets a near-proportional share of every
/// class, and fold sizes differ by at most one.
pub fn fold_partition(targets: &[usize], classes: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || targets.len() < folds {
        return Err(Error::Degenerate(format!(
            "{} records cannot be split into {folds} folds",
            targets.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); classes];
    for (i, &y) in targets.iter().enumerate() {
        by_class.get_mut(y).ok_or(Error::LabelRange(y))?.push(i);
    }
    let mut out = vec![Vec::with_capacity(targets.len() / folds + 1); folds];
    let mut slot = 0usize;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            out[slot % folds].push(i);
            slot += 1;
        }
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub n: usize,
    pub confidence: f64,
    pub mode: Mode,
    pub per_run_recall: Vec<Option<f64>>,
    pub per_run_precision: Vec<Option<f64>>,
    pub per_run_class: Vec<Vec<ClassRates>>,
    pub mean_r: Option<f64>,
    pub mean_p: Option<f64>,
    pub ci_r: Option<(f64, f64)>,
    pub ci_p: Option<(f64, f64)>,
    /// Runs whose recall / precision was undefined and left out of the mean.
    pub skipped_r: usize,
    pub skipped_p: usize,
    /// Sum of the held-out confusion matrices over all runs.
    pub pooled: ConfusionMatrix,
}

fn summarize(values: &[Option<f64>], confidence: f64) -> (Option<f64>, Option<(f64, f64)>, usize) {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = values.len() - present.len();
    if present.is_empty() {
        return (None, None, skipped);
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    let ci = confidence_interval(&present, confidence).ok();
    (Some(mean), ci, skipped)
}

impl CvResult {
    /// Mean recall and precision of class `c` over the runs where they are defined.
    pub fn class_means(&self, c: usize) -> ClassRates {
        let mean = |f: &dyn Fn(&ClassRates) -> Option<f64>| {
            let v: Vec<f64> = self.per_run_class.iter().filter_map(|r| f(&r[c])).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        ClassRates {
            recall: mean(&|r| r.recall),
            precision: mean(&|r| r.precision),
        }
    }

    pub const CSV_HEADER: &'static str = "feature_set,n,mean_r,ci_r_low,ci_r_high,mean_p,ci_p_low,ci_p_high";

    /// One CSV row in the [`CvResult::CSV_HEADER`] layout; undefined values are empty.
    pub fn csv_row(&self, feature_set: &str) -> String {
        let f = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        format!(
            "{feature_set},{},{},{},{},{},{},{}",
            self.n,
            f(self.mean_r),
            f(self.ci_r.map(|c| c.0)),
            f(self.ci_r.map(|c| c.1)),
            f(self.mean_p),
            f(self.ci_p.map(|c| c.0)),
            f(self.ci_p.map(|c| c.1)),
        )
    }
}

/// A training procedure as used by [`cross_validate`].
pub type TrainFn<'a> = dyn Fn(&Dataset) -> Result<Box<dyn Classifier + Send + Sync>> + Sync + 'a;

/// Repeated stratified k-fold cross-validation.
///
/// Runs are evaluated in parallel but always reported in (repeat, fold) order.
pub fn cross_validate(ds: &Dataset, train: &TrainFn<'_>, cfg: &CvConfig) -> Result<CvResult> {
    if cfg.repeats == 0 {
        return Err(Error::Config("cross-validation needs at least one repeat".into()));
    }
    let targets = ds.targets()?;
    let labels = ds.labels().clone();
    let mode = cfg.mode.unwrap_or_else(|| Mode::for_labels(&labels));
    let mut jobs = Vec::with_capacity(cfg.repeats * cfg.folds);
    for r in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let folds = fold_partition(&targets, labels.len(), cfg.folds, seed)?;
        for f in 0..cfg.folds {
            let test = folds[f].clone();
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            jobs.push((train_idx, test));
        }
    }

    let runs: Vec<Result<ConfusionMatrix>> = jobs
        .par_iter()
        .map(|(train_idx, test_idx)| {
            let model = train(&ds.subset(train_idx))?;
            let mut cm = ConfusionMatrix::new(labels.clone(), labels.normal())?;
            for &i in test_idx {
                let p = model.predict(&ds.records()[i].features)?;
                cm.record(targets[i], p.class)?;
            }
            Ok(cm)
        })
        .collect();

    let mut pooled = ConfusionMatrix::new(labels.clone(), labels.normal())?;
    let mut per_run_recall = Vec::with_capacity(runs.len());
    let mut per_run_precision = Vec::with_capacity(runs.len());
    let mut per_run_class = Vec::with_capacity(runs.len());
    for cm in runs {
        let cm = cm?;
        let rp = recall_precision(&cm, mode)?;
        per_run_recall.push(rp.recall);
        per_run_precision.push(rp.precision);
        per_run_class.push(rp.per_class);
        pooled.merge(&cm)?;
    }
    let (mean_r, ci_r, skipped_r) = summarize(&per_run_recall, cfg.confidence);
    let (mean_p, ci_p, skipped_p) = summarize(&per_run_precision, cfg.confidence);
    Ok(CvResult {
        n: per_run_recall.len(),
        confidence: cfg.confidence,
        mode,
        per_run_recall,
        per_run_precision,
        per_run_class,
        mean_r,
        mean_p,
        ci_r,
        ci_p,
        skipped_r,
        skipped_p,
        pooled,
    })
}
