//! Scripted experiments over the KDD Cup 1999 files and the gas-pipeline
//! command-injection capture.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use log::info;
use serde::Serialize;

use ids_core::data::{load_csv, stratified_sample_named, LoadReport, ICS_COLUMNS};
use ids_core::eval::{confusion, cross_validate, error_rate};
use ids_core::featsel::{label_entropy, prune_correlated, rank_features};
use ids_core::model::{one_vs_all_train, train_multi};
use ids_core::synth::{ics_command_injection, ICS_COUNTS};
use ids_core::{Binning, Classifier, CvConfig, Dataset, LogBase, Pipeline, QnConfig, Schema, Selection, Trainer};

use crate::sweep::{self, Order};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Multinomial model on the full 10% training file, per-class rates on `corrected`.
    KddTable1,
    /// 4000/5000 stratified samples, one-vs-all against multinomial.
    KddSampled,
    /// Entropy, information gain and feature-reduction CV curves.
    IcsIgcurves,
    /// Per-class CV rates for 7 features, 6 principal components, and 7 features plus address.
    IcsPerclass,
}

pub const KDD_TRAIN: &str = "kddcup.data_10_percent";
pub const KDD_TEST: &str = "corrected";
pub const KDD_TRAIN_ROWS: usize = 494_021;
pub const KDD_TEST_ROWS: usize = 311_029;
pub const ICS_FILE: &str = "ics_gas_pipeline.csv";

pub const SAMPLED_TRAIN: [(&str, usize); 4] = [("Normal", 800), ("Smurf", 2320), ("Neptune", 800), ("Others", 80)];
pub const SAMPLED_TEST: [(&str, usize); 4] = [("Normal", 1000), ("Smurf", 2900), ("Neptune", 1000), ("Others", 100)];

/// Correlation above which ICS columns are treated as duplicates.
pub const ICS_PRUNE_THRESHOLD: f64 = 0.95;

pub struct ReproOptions {
    pub data_dir: Option<PathBuf>,
    pub ics_file: Option<PathBuf>,
    pub synthetic: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub repeats: usize,
    pub folds: usize,
    pub optimizer: QnConfig,
}

impl ReproOptions {
    fn cv(&self) -> CvConfig {
        CvConfig {
            repeats: self.repeats,
            folds: self.folds,
            seed: self.seed,
            ..CvConfig::default()
        }
    }

    fn write(&self, name: &str, body: &[u8]) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn run(exp: Experiment, opts: &ReproOptions, out: &mut dyn Write) -> Result<()> {
    match exp {
        Experiment::KddTable1 => kdd_table1(opts, out),
        Experiment::KddSampled => kdd_sampled(opts, out),
        Experiment::IcsIgcurves => ics_igcurves(opts, out),
        Experiment::IcsPerclass => ics_perclass(opts, out),
    }
}

fn kdd_paths(opts: &ReproOptions) -> Result<(PathBuf, PathBuf)> {
    let Some(dir) = &opts.data_dir else {
        bail!(
            "no data directory: pass --data-dir or set IDS_DATA_DIR to a directory holding {KDD_TRAIN} and {KDD_TEST} \
             (KDD Cup 1999 data, decompressed)"
        );
    };
    let train = dir.join(KDD_TRAIN);
    let test = dir.join(KDD_TEST);
    for p in [&train, &test] {
        if !p.is_file() {
            bail!(
                "{} not found; download kddcup.data_10_percent.gz and corrected.gz from the UCI KDD archive and decompress them into {}",
                p.display(),
                dir.display()
            );
        }
    }
    Ok((train, test))
}

fn load_checked(path: &Path, schema: &Schema, expected_rows: usize) -> Result<Dataset> {
    let (ds, LoadReport { rows_read, rejected }) = load_csv(path, schema)?;
    if rows_read != expected_rows {
        bail!(
            "{} has {rows_read} rows, expected {expected_rows}; re-download the original file",
            path.display()
        );
    }
    info!("{}: {} records ({rejected} rejected)", path.display(), ds.len());
    Ok(ds)
}

fn kdd_table1(opts: &ReproOptions, out: &mut dyn Write) -> Result<()> {
    let (train_path, test_path) = kdd_paths(opts)?;
    let schema = Schema::builtin("kdd-5class").expect("builtin");
    let train = load_checked(&train_path, &schema, KDD_TRAIN_ROWS)?;
    let test = load_checked(&test_path, &schema, KDD_TEST_ROWS)?;
    let (model, trace) = train_multi(&train, &opts.optimizer)?;
    writeln!(out, "trained on {} records, {} iterations", train.len(), trace.iterations)?;
    let predicted: Vec<usize> = test
        .records()
        .iter()
        .map(|r| model.predict(&r.features).map(|p| p.class))
        .collect::<ids_core::Result<_>>()?;
    let cm = confusion(&test.targets()?, &predicted, test.labels(), test.labels().normal())?;
    cm.write_text(&mut *out)?;
    let mut csv = String::from("class,recall,precision\n");
    for (name, r) in test.labels().names().iter().zip(cm.per_class()) {
        csv.push_str(&format!("{name},{},{}\n", opt(r.recall), opt(r.precision)));
    }
    let path = opts.write("kdd_table1.csv", csv.as_bytes())?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

fn kdd_sampled(opts: &ReproOptions, out: &mut dyn Write) -> Result<()> {
    let (train_path, test_path) = kdd_paths(opts)?;
    let schema = Schema::builtin("kdd-4class").expect("builtin");
    let full_train = load_checked(&train_path, &schema, KDD_TRAIN_ROWS)?;
    let full_test = load_checked(&test_path, &schema, KDD_TEST_ROWS)?;
    let train = stratified_sample_named(&full_train, &SAMPLED_TRAIN, opts.seed)?;
    let test = stratified_sample_named(&full_test, &SAMPLED_TEST, opts.seed.wrapping_add(1))?;
    let (multi, _) = train_multi(&train, &opts.optimizer)?;
    let (ova, _) = one_vs_all_train(&train, &opts.optimizer)?;
    let rate = |m: &dyn Classifier, ds: &Dataset| -> Result<f64> {
        let p: Vec<usize> = ds
            .records()
            .iter()
            .map(|r| m.predict(&r.features).map(|p| p.class))
            .collect::<ids_core::Result<_>>()?;
        Ok(error_rate(&ds.targets()?, &p)?)
    };
    let rows = [
        ("one-vs-all", rate(&ova, &train)?, rate(&ova, &test)?),
        ("multinomial", rate(&multi, &train)?, rate(&multi, &test)?),
    ];
    writeln!(out, "{:<12} {:>8} {:>8}", "model", "E_in", "E_out")?;
    let mut csv = String::from("model,e_in,e_out\n");
    for (name, e_in, e_out) in rows {
        writeln!(out, "{name:<12} {e_in:>8.4} {e_out:>8.4}")?;
        csv.push_str(&format!("{name},{e_in:.6},{e_out:.6}\n"));
    }
    let path = opts.write("kdd_sampled.csv", csv.as_bytes())?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

/// The command-injection data with the `address` column kept (ordinal).
fn ics_dataset(opts: &ReproOptions, out: &mut dyn Write) -> Result<Dataset> {
    if opts.synthetic {
        writeln!(out, "data: synthetic command-injection surrogate (seed {})", opts.seed)?;
        return Ok(ics_command_injection(&ICS_COUNTS, opts.seed)?);
    }
    let path = match (&opts.ics_file, &opts.data_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.join(ICS_FILE),
        (None, None) => bail!("no ICS data: pass --ics-file, --data-dir (with {ICS_FILE}) or --synthetic"),
    };
    if !path.is_file() {
        bail!("{} not found; export the command-injection capture as CSV or use --synthetic", path.display());
    }
    let schema = Schema::builtin("ics-multi-address").expect("builtin");
    let (ds, _) = load_csv(&path, &schema)?;
    writeln!(out, "data: {} ({} records)", path.display(), ds.len())?;
    Ok(ds)
}

/// The 17 numeric columns with constant and near-duplicate ones removed.
fn ics_pruned(ds: &Dataset, out: &mut dyn Write) -> Result<Dataset> {
    let names: Vec<String> = ICS_COLUMNS.iter().map(|s| s.to_string()).collect();
    let (pruned, report) = prune_correlated(&ds.select_named(&names)?, ICS_PRUNE_THRESHOLD)?;
    writeln!(out, "constant columns dropped: {}", report.constant.join(", "))?;
    for g in &report.groups {
        writeln!(out, "correlated group (first kept): {}", g.join(", "))?;
    }
    writeln!(out, "kept {} features: {}", pruned.n_features(), report.kept.join(", "))?;
    Ok(pruned)
}

fn ics_igcurves(opts: &ReproOptions, out: &mut dyn Write) -> Result<()> {
    let ds = ics_dataset(opts, out)?;
    let pruned = ics_pruned(&ds, out)?;
    let h = label_entropy(&pruned, LogBase::Two);
    writeln!(out, "label entropy {h:.4} bits")?;
    let ig = rank_features(&pruned, Binning::default(), LogBase::Two)?;
    let mut ig_csv = Vec::new();
    ig.write_csv(&mut ig_csv)?;
    let path = opts.write("ics_ig.csv", &ig_csv)?;
    writeln!(out, "wrote {}", path.display())?;

    let cv = opts.cv();
    let mut rows = Vec::new();
    for order in [Order::LowIg, Order::HighIg, Order::Random, Order::Pca] {
        let got = sweep::sweep(&pruned, order, Trainer::Multi, &opts.optimizer, 1, &cv, |r| {
            info!("{} k={} r={:?} p={:?}", r.order, r.k, r.result.mean_r, r.result.mean_p);
        })?;
        rows.extend(got);
    }
    let mut csv = Vec::new();
    sweep::write_csv(&rows, &mut csv)?;
    let path = opts.write("ics_igcurves.csv", &csv)?;
    writeln!(out, "{:<8} {:>2} {:>8} {:>8}", "order", "k", "mean_r", "mean_p")?;
    for r in &rows {
        writeln!(out, "{:<8} {:>2} {:>8} {:>8}", r.order, r.k, opt(r.result.mean_r), opt(r.result.mean_p))?;
    }
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

fn ics_perclass(opts: &ReproOptions, out: &mut dyn Write) -> Result<()> {
    let ds = ics_dataset(opts, out)?;
    let pruned = ics_pruned(&ds, out)?;
    let mut with_address = vec!["address".to_string()];
    with_address.extend(pruned.column_names());
    let eight = ds.select_named(&with_address)?;
    let variants = [
        ("7-features", &pruned, Selection::Full),
        ("pca-6", &pruned, Selection::PcaComponents { k: 6 }),
        ("8-features-address", &eight, Selection::Full),
    ];
    let cv = opts.cv();
    let labels = ds.labels().names().to_vec();
    let mut csv = String::from("variant,class,mean_recall,mean_precision\n");
    write!(out, "{:<20}", "variant")?;
    for l in &labels {
        write!(out, " {:>17}", format!("{l} r/p"))?;
    }
    writeln!(out)?;
    for (name, data, selection) in variants {
        let pipeline = Pipeline {
            optimizer: opts.optimizer,
            ..Pipeline::new(selection, Trainer::Multi)
        };
        let train = |d: &Dataset| -> ids_core::Result<Box<dyn Classifier + Send + Sync>> { Ok(Box::new(pipeline.fit(d)?.0)) };
        let result = cross_validate(data, &train, &cv)?;
        write!(out, "{name:<20}")?;
        for (c, l) in labels.iter().enumerate() {
            let m = result.class_means(c);
            write!(out, " {:>17}", format!("{}/{}", opt3(m.recall), opt3(m.precision)))?;
            csv.push_str(&format!("{name},{l},{},{}\n", opt(m.recall), opt(m.precision)));
        }
        writeln!(out)?;
    }
    let path = opts.write("ics_perclass.csv", csv.as_bytes())?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn opt3(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}
