//! Feature-reduction sweeps: cross-validate with one column fewer at a time.

use std::fmt;
use std::io::Write;

use anyhow::{bail, Result};
use clap::ValueEnum;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ids_core::data::{relabel, Relabeling};
use ids_core::eval::cross_validate;
use ids_core::featsel::rank_features;
use ids_core::{Binning, Classifier, CvConfig, CvResult, Dataset, LogBase, Pipeline, QnConfig, Selection, Trainer};

/// Which columns go first when the feature set shrinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    /// Drop the lowest-information-gain column first.
    LowIg,
    /// Drop the highest-information-gain column first.
    HighIg,
    /// Drop columns in a seeded random order.
    Random,
    /// Keep the leading k principal components, fitted per training fold.
    Pca,
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Order::LowIg => "low-ig",
            Order::HighIg => "high-ig",
            Order::Random => "random",
            Order::Pca => "pca",
        };
        f.write_str(s)
    }
}

pub struct SweepRow {
    pub order: Order,
    pub k: usize,
    pub features: Vec<String>,
    pub result: CvResult,
}

pub const CSV_HEADER: &str = "order,k,features,n,mean_r,ci_r_low,ci_r_high,mean_p,ci_p_low,ci_p_high";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        // CvResult rows start with the feature-set column.
        let row = self.result.csv_row(&self.features.join(";"));
        format!("{},{},{row}", self.order, self.k)
    }
}

/// Binary trainers need two-class data for the confusion matrix to line up.
pub fn prepare(ds: &Dataset, trainer: Trainer) -> Result<Dataset> {
    Ok(match trainer {
        Trainer::Binary if ds.labels().len() > 2 => relabel(ds, &Relabeling::normal_vs_abnormal(ds, Pipeline::ABNORMAL))?,
        _ => ds.clone(),
    })
}

/// Column order in which features are kept: the first k are the k-feature set.
pub fn keep_order(ds: &Dataset, order: Order, seed: u64) -> Result<Vec<usize>> {
    let m = ds.n_features();
    Ok(match order {
        Order::LowIg => rank_features(ds, Binning::default(), LogBase::E)?.order,
        Order::HighIg => {
            let mut o = rank_features(ds, Binning::default(), LogBase::E)?.order;
            o.reverse();
            o
        }
        Order::Random => {
            let mut o: Vec<usize> = (0..m).collect();
            o.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            o
        }
        Order::Pca => (0..m).collect(),
    })
}

/// Cross-validates every feature count from `M` down to `min_k`.
pub fn sweep(
    ds: &Dataset,
    order: Order,
    trainer: Trainer,
    optimizer: &QnConfig,
    min_k: usize,
    cv: &CvConfig,
    mut progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    let ds = prepare(ds, trainer)?;
    let m = ds.n_features();
    if min_k == 0 || min_k > m {
        bail!("--min-features must be in 1..={m}");
    }
    let keep = keep_order(&ds, order, cv.seed)?;
    let names = ds.column_names();
    let mut rows = Vec::new();
    for k in (min_k..=m).rev() {
        let (subset, selection, features) = if order == Order::Pca {
            let f = (1..=k).map(|i| format!("pc{i}")).collect();
            (ds.clone(), Selection::PcaComponents { k }, f)
        } else {
            let mut cols = keep[..k].to_vec();
            cols.sort_unstable();
            let f = cols.iter().map(|&j| names[j].clone()).collect();
            (ds.select_columns(&cols)?, Selection::Full, f)
        };
        let pipeline = Pipeline {
            optimizer: *optimizer,
            ..Pipeline::new(selection, trainer)
        };
        let train = |d: &Dataset| -> ids_core::Result<Box<dyn Classifier + Send + Sync>> { Ok(Box::new(pipeline.fit(d)?.0)) };
        let result = cross_validate(&subset, &train, cv)?;
        let row = SweepRow {
            order,
            k,
            features,
            result,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}
