//! `ids`: train, evaluate and deploy logistic-regression intrusion detectors.

mod repro;
mod sweep;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use ids_core::data::load_csv;
use ids_core::eval::{cross_validate, recall_precision};
use ids_core::featsel::{pca_fit, prune_correlated, rank_features};
use ids_core::protocol::Level;
use ids_core::runtime::{replay_records, simulate, ClientConfig, ClientCore, ClientRunner, Connection, Scenario, Server, ServerConfig};
use ids_core::{
    Binning, Classifier, ConfusionMatrix, CvConfig, Dataset, Detector, LogBase, Mode, Model, Pipeline, QnConfig, QnTrace, Schema,
    Selection, Trainer,
};

use crate::repro::{Experiment, ReproOptions};
use crate::sweep::Order;

#[derive(Debug, Parser, Serialize)]
#[command(name = "ids", version, about = "Logistic-regression intrusion detection: training, evaluation and principle distribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Train a binary, multinomial or one-vs-all model.
    Train(TrainArgs),
    /// Classify every record of a CSV file.
    Predict(PredictArgs),
    /// Confusion matrix and recall/precision of a model on labeled data.
    Eval(EvalArgs),
    /// Label entropy and per-feature information gain.
    Ig(IgArgs),
    /// Principal components and the variance they retain.
    Pca(PcaArgs),
    /// Repeated k-fold cross validation, optionally over a feature-reduction sweep.
    Cv(CvArgs),
    /// Run the detection server over TCP.
    Serve(ServeArgs),
    /// Run a detection client replaying a CSV file against a server.
    Client(ClientArgs),
    /// Run a server and its clients in one process from a scenario file.
    Simulate(SimulateArgs),
    /// Reproduce one of the benchmark experiments.
    Repro(ReproArgs),
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Built-in schema name (kdd-binary, kdd-5class, kdd-4class, ics-multi, ics-multi-address, ics-binary) or a schema TOML file.
    #[arg(long)]
    schema: String,
}

#[derive(Debug, Args, Serialize)]
struct OptimizerArgs {
    /// Stop when the step norm falls below this.
    #[arg(long, default_value_t = QnConfig::default().epsilon)]
    epsilon: f64,
    /// Iteration cap for each optimizer run.
    #[arg(long, default_value_t = QnConfig::default().max_iters)]
    max_iters: usize,
}

impl OptimizerArgs {
    fn config(&self) -> Result<QnConfig> {
        let cfg = QnConfig {
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            ..QnConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// binary (normal vs. the rest), multi, or ova (one-vs-all).
    #[arg(long, default_value = "multi")]
    mode: Trainer,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Optimizer trace CSV [default: <out>.trace.csv].
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    optimizer: OptimizerArgs,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    /// Model file written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Per-class recall/precision CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct IgArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Logarithm base: e (nats) or 2 (bits).
    #[arg(long, default_value = "e")]
    base: LogBase,
    /// Drop constant columns and near-duplicates above this |correlation| first.
    #[arg(long)]
    prune: Option<f64>,
    /// Ranking CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct PcaArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Fraction of variance to retain, in (0, 1].
    #[arg(long, default_value_t = 0.95)]
    rho: f64,
    /// Eigenvalue spectrum CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    /// binary, multi, or ova.
    #[arg(long, default_value = "multi")]
    mode: Trainer,
    /// Shrink the feature set one column at a time in this order; one CSV row per feature count.
    #[arg(long, value_enum)]
    order: Option<Order>,
    /// Smallest feature count in a sweep.
    #[arg(long, default_value_t = 1)]
    min_features: usize,
    /// Drop constant columns and near-duplicates above this |correlation| first.
    #[arg(long)]
    prune: Option<f64>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Confidence level of the reported intervals.
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Results CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    optimizer: OptimizerArgs,
}

#[derive(Debug, Args, Serialize)]
struct ServeArgs {
    /// Server TOML file; relative paths in it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `listen` from the config.
    #[arg(long)]
    listen: Option<String>,
    /// Exit after this many seconds instead of running until killed.
    #[arg(long)]
    run_for: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct ClientArgs {
    /// Server address, host:port.
    #[arg(long)]
    connect: String,
    #[arg(long)]
    id: String,
    /// control-centre, substation, or field.
    #[arg(long)]
    level: Level,
    /// CSV replayed as this client's traffic.
    #[arg(long)]
    replay: PathBuf,
    #[arg(long)]
    schema: String,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Seconds before a partial feature-report batch is sent.
    #[arg(long, default_value_t = 5.0)]
    batch_timeout: f64,
    /// Seconds to wait for the first principle before reading input.
    #[arg(long, default_value_t = 10.0)]
    wait_for_principle: f64,
    /// Append one line per alert to this file.
    #[arg(long)]
    alert_log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// Scenario TOML file; relative paths in it resolve against its directory.
    #[arg(long)]
    scenario: PathBuf,
    /// Report file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReproArgs {
    #[arg(long, value_enum)]
    experiment: Experiment,
    /// Directory holding the benchmark files.
    #[arg(long, env = "IDS_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Command-injection CSV [default: <data-dir>/ics_gas_pipeline.csv].
    #[arg(long)]
    ics_file: Option<PathBuf>,
    /// Use a generated surrogate of the command-injection data.
    #[arg(long)]
    synthetic: bool,
    /// Directory for report CSVs.
    #[arg(long, default_value = "repro-out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CV repeats for the ICS experiments.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[command(flatten)]
    optimizer: OptimizerArgs,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = echo_config(&cli).and_then(|_| run(cli.command)) {
        eprintln!("error: {}", describe(&e));
        std::process::exit(1);
    }
}

/// Joins the error chain, skipping causes already quoted by the message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !prev.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        prev = text;
    }
    out
}

/// Prints the fully resolved arguments to stderr as TOML comments.
fn echo_config(cli: &Cli) -> Result<()> {
    let text = toml::to_string(&cli.command).context("serializing configuration")?;
    let mut err = io::stderr().lock();
    writeln!(err, "# effective configuration")?;
    for line in text.lines().filter(|l| !l.is_empty()) {
        writeln!(err, "# {line}")?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Ig(a) => ig(a),
        Command::Pca(a) => pca(a),
        Command::Cv(a) => cv(a),
        Command::Serve(a) => serve(a),
        Command::Client(a) => client(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Repro(a) => repro_cmd(a),
    }
}

fn load(args: &DataArgs) -> Result<Dataset> {
    let schema = Schema::resolve(&args.schema)?;
    let (ds, report) = load_csv(&args.data, &schema)?;
    if report.rejected > 0 {
        eprintln!("{}: skipped {} malformed rows", args.data.display(), report.rejected);
    }
    if ds.is_empty() {
        bail!("{}: no usable records", args.data.display());
    }
    info!("{}: {} records, {} features", args.data.display(), ds.len(), ds.n_features());
    Ok(ds)
}

/// Output file, or stdout when none is given.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn predictions(model: &dyn Classifier, ds: &Dataset) -> Result<Vec<usize>> {
    Ok(ds
        .records()
        .iter()
        .map(|r| model.predict(&r.features).map(|p| p.class))
        .collect::<ids_core::Result<_>>()?)
}

fn write_traces(path: &Path, traces: &[QnTrace]) -> Result<()> {
    let mut out = String::from("model,iteration,objective,step_norm\n");
    for (m, t) in traces.iter().enumerate() {
        for (i, v) in t.values.iter().enumerate() {
            let step = if i == 0 { 0.0 } else { t.step_norms[i - 1] };
            out.push_str(&format!("{m},{i},{v:.17e},{step:.17e}\n"));
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = sweep::prepare(&load(&a.data)?, a.mode)?;
    let pipeline = Pipeline {
        optimizer: a.optimizer.config()?,
        ..Pipeline::new(Selection::Full, a.mode)
    };
    let (det, traces) = pipeline.fit(&ds)?;
    for (i, t) in traces.iter().enumerate() {
        if let Some(d) = &t.diagnostic {
            eprintln!("warning: model {i}: {d}");
        }
    }
    let e_in = ids_core::eval::error_rate(&ds.targets()?, &predictions(&det, &ds)?)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".trace.csv");
        PathBuf::from(p)
    });
    det.model().save(&a.out)?;
    write_traces(&trace_path, &traces)?;
    let iters: Vec<String> = traces.iter().map(|t| t.iterations.to_string()).collect();
    println!("model      {}", det.model().kind());
    println!("records    {}", ds.len());
    println!("iterations {}", iters.join(" "));
    println!("E_in       {e_in:.4}");
    println!("wrote {} and {}", a.out.display(), trace_path.display());
    Ok(())
}

fn check_arity(model: &Model, ds: &Dataset) -> Result<()> {
    if model.input_dim() != ds.n_features() {
        bail!(
            "model expects {} features, data has {} (wrong schema?)",
            model.input_dim(),
            ds.n_features()
        );
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let ds = load(&a.data)?;
    check_arity(&model, &ds)?;
    let labels = model.labels().clone();
    let mut rows = Vec::with_capacity(ds.len());
    for (i, r) in ds.records().iter().enumerate() {
        let p = model.predict(&r.features)?;
        let truth = r.label.map(|l| ds.labels().name(l).to_string()).unwrap_or_default();
        rows.push(format!("{i},{},{},{truth}", labels.name(p.class), p.score));
    }
    let mut out = sink(a.out.as_deref())?;
    writeln!(out, "record,predicted,score,truth")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    out.flush()?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let ds = load(&a.data)?;
    check_arity(&model, &ds)?;
    let det = Detector::from_model(model);
    let labels = det.labels().clone();
    let normal_name = ds.labels().name(ds.labels().normal()).to_string();
    let mut cm = ConfusionMatrix::new(labels.clone(), labels.normal())?;
    for r in ds.records() {
        let Some(l) = r.label else { bail!("eval needs labeled data") };
        let name = ds.labels().name(l);
        let actual = det
            .map_class(name, &normal_name)
            .with_context(|| format!("class {name:?} is unknown to the model"))?;
        cm.record(actual, det.predict(&r.features)?.class)?;
    }
    let mode = Mode::for_labels(&labels);
    let rp = recall_precision(&cm, mode)?;
    let mut out = io::stdout().lock();
    writeln!(out, "records   {}", cm.total())?;
    writeln!(out, "error     {}", fmt(cm.error_rate()))?;
    writeln!(out, "recall    {} ({mode:?})", fmt(rp.recall))?;
    writeln!(out, "precision {}", fmt(rp.precision))?;
    writeln!(out)?;
    cm.write_text(&mut out)?;
    if let Some(path) = &a.report {
        let mut csv = String::from("class,recall,precision\n");
        for (name, r) in labels.names().iter().zip(cm.per_class()) {
            csv.push_str(&format!("{name},{},{}\n", csv_opt(r.recall), csv_opt(r.precision)));
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn maybe_prune(ds: Dataset, threshold: Option<f64>) -> Result<Dataset> {
    let Some(t) = threshold else { return Ok(ds) };
    let (pruned, report) = prune_correlated(&ds, t)?;
    eprintln!(
        "pruned {} constant and {} correlated columns; kept {}",
        report.constant.len(),
        ds.n_features() - report.constant.len() - pruned.n_features(),
        report.kept.join(", ")
    );
    Ok(pruned)
}

fn ig(a: IgArgs) -> Result<()> {
    let ds = maybe_prune(load(&a.data)?, a.prune)?;
    let report = rank_features(&ds, Binning::default(), a.base)?;
    let mut out = io::stdout().lock();
    writeln!(out, "label entropy {:.6} {}", report.label_entropy, a.base.unit())?;
    let width = report.names.iter().map(String::len).max().unwrap_or(7).max(7);
    writeln!(out, "{:>4} {:<width$} {:>12}", "rank", "feature", "gain")?;
    for (rank, &j) in report.order.iter().enumerate() {
        writeln!(out, "{:>4} {:<width$} {:>12.6}", rank + 1, report.names[j], report.gains[j])?;
    }
    if let Some(path) = &a.out {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn pca(a: PcaArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let recipe = pca_fit(&ds, a.rho)?;
    println!("features  {}", recipe.dim());
    println!("k         {}", recipe.k());
    println!("retained  {:.6}", recipe.retained(recipe.k()));
    if let Some(path) = &a.out {
        let mut buf = Vec::new();
        recipe.write_spectrum_csv(&mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cv(a: CvArgs) -> Result<()> {
    let ds = maybe_prune(load(&a.data)?, a.prune)?;
    let cfg = CvConfig {
        repeats: a.repeats,
        folds: a.folds,
        seed: a.seed,
        confidence: a.confidence,
        ..CvConfig::default()
    };
    let optimizer = a.optimizer.config()?;
    let mut out = sink(a.out.as_deref())?;
    match a.order {
        Some(order) => {
            let rows = sweep::sweep(&ds, order, a.mode, &optimizer, a.min_features, &cfg, |r| {
                eprintln!("{} k={} recall {} precision {}", r.order, r.k, fmt(r.result.mean_r), fmt(r.result.mean_p));
            })?;
            sweep::write_csv(&rows, &mut out)?;
        }
        None => {
            let ds = sweep::prepare(&ds, a.mode)?;
            let pipeline = Pipeline {
                optimizer,
                ..Pipeline::new(Selection::Full, a.mode)
            };
            let train = |d: &Dataset| -> ids_core::Result<Box<dyn Classifier + Send + Sync>> { Ok(Box::new(pipeline.fit(d)?.0)) };
            let result = cross_validate(&ds, &train, &cfg)?;
            writeln!(out, "{}", ids_core::CvResult::CSV_HEADER)?;
            writeln!(out, "{}", result.csv_row("all"))?;
            eprintln!("pooled confusion over {} runs:", result.n);
            result.pooled.write_text(io::stderr().lock())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn base_dir(file: &Path) -> PathBuf {
    file.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn serve(a: ServeArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg = ServerConfig::from_toml(&text)?;
    if let Some(l) = &a.listen {
        cfg.listen = l.clone();
    }
    let base = base_dir(&a.config);
    if let Some(dir) = &cfg.state_dir {
        if dir.is_relative() {
            cfg.state_dir = Some(base.join(dir));
        }
    }
    cfg.validate()?;
    eprintln!("# server configuration");
    for line in cfg.to_toml().lines().filter(|l| !l.is_empty()) {
        eprintln!("# {line}");
    }
    let bootstrap = cfg.load_bootstrap(&base)?;
    let listener = TcpListener::bind(&cfg.listen).with_context(|| format!("binding {}", cfg.listen))?;
    let server = Server::new(cfg, bootstrap)?;
    println!("listening on {}", listener.local_addr()?);
    let scheduler = server.spawn_scheduler();
    if let Some(secs) = a.run_for {
        let s = server.clone();
        thread::spawn(move || {
            thread::sleep(Duration::from_secs_f64(secs));
            s.shutdown();
        });
    }
    server.serve_tcp(listener)?;
    let _ = scheduler.join();
    let stats = server.stats();
    println!(
        "retrain cycles {}, stored records {}, evicted {}",
        stats.retrain_cycles, stats.stored_records, stats.evicted_records
    );
    Ok(())
}

fn client(a: ClientArgs) -> Result<()> {
    let schema = Schema::resolve(&a.schema)?;
    let (ds, _) = load_csv(&a.replay, &schema)?;
    let (columns, records) = replay_records(&ds);
    let cfg = ClientConfig {
        batch_size: a.batch_size,
        batch_timeout_s: a.batch_timeout,
        wait_for_principle_s: a.wait_for_principle,
        alert_log: a.alert_log.clone(),
        ..ClientConfig::new(a.id.clone(), a.level)
    };
    let core = ClientCore::new(cfg, columns)?;
    let addr = a.connect.clone();
    let connect = move || TcpStream::connect(&addr).and_then(Connection::tcp);
    let core = ClientRunner::new(core, connect).run(records)?;
    let s = core.stats();
    println!("records    {}", s.records_in);
    println!("classified {}", s.classified);
    println!("dropped    {}", s.buffered_dropped);
    println!("rejected   {}", s.rejected);
    println!("alerts     {}", s.alerts);
    println!("principles {}", s.principles_applied);
    println!("reports    {} sent, {} dropped", s.reports_sent, s.reports_dropped);
    println!("reconnects {}", s.reconnects);
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let scenario = Scenario::load(&a.scenario)?;
    let report = simulate(&scenario, &base_dir(&a.scenario))?;
    let mut out = sink(a.out.as_deref())?;
    report.write_text(&mut out)?;
    out.flush()?;
    Ok(())
}

fn repro_cmd(a: ReproArgs) -> Result<()> {
    let opts = ReproOptions {
        data_dir: a.data_dir.clone(),
        ics_file: a.ics_file.clone(),
        synthetic: a.synthetic,
        out_dir: a.out_dir.clone(),
        seed: a.seed,
        repeats: a.repeats,
        folds: a.folds,
        optimizer: a.optimizer.config()?,
    };
    let mut out = io::stdout().lock();
    repro::run(a.experiment, &opts, &mut out)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}
