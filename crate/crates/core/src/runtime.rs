//! Server and client processes.
//!
//! The server keeps one active [`PrinciplePacket`] per [`Level`], pushes it
//! to connected clients of that level, retrains on a schedule and collects
//! feature reports. Clients apply the latest principle to incoming records,
//! raise alerts for non-normal predictions and report features back in
//! batches. [`simulate`] wires one server and several clients together over
//! in-memory pipes carrying the same frames as TCP.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, ColumnKind, ConnectionRecord, Dataset, Schema};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::model::Classifier;
use crate::pipeline::{Pipeline, Selection, Trainer};
use crate::protocol::{
    read_message, write_message, AlertBody, Body, ErrorBody, FeatureReportBody, HelloBody, Level, Message,
    PrinciplePacket, ProtocolError, ReportRecord, PROTOCOL_VERSION,
};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn seconds(name: &str, s: f64) -> Result<Duration> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Config(format!("{name} must be a positive number of seconds, got {s}")));
    }
    Ok(Duration::from_secs_f64(s))
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

// ---------------------------------------------------------------------------
// Transport

/// A reliable ordered byte stream, split into halves.
pub struct Connection {
    pub reader: Box<dyn Read + Send>,
    pub writer: Box<dyn Write + Send>,
}

impl Connection {
    pub fn tcp(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: Box::new(stream.try_clone()?),
            writer: Box::new(stream),
        })
    }
}

struct PipeReader {
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.buf.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

struct PipeWriter {
    tx: Sender<Vec<u8>>,
}

impl Write for PipeWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Two connected in-memory endpoints. Dropping one side's writer ends the
/// other side's reader.
pub fn duplex() -> (Connection, Connection) {
    let (a_tx, a_rx) = mpsc::channel();
    let (b_tx, b_rx) = mpsc::channel();
    let a = Connection {
        reader: Box::new(PipeReader {
            rx: b_rx,
            buf: Vec::new(),
            pos: 0,
        }),
        writer: Box::new(PipeWriter { tx: a_tx }),
    };
    let b = Connection {
        reader: Box::new(PipeReader {
            rx: a_rx,
            buf: Vec::new(),
            pos: 0,
        }),
        writer: Box::new(PipeWriter { tx: b_tx }),
    };
    (a, b)
}

enum Inbound {
    Message(Message),
    Rejected(ProtocolError),
    Closed,
}

/// Reads frames on a separate thread and hands them over in order.
fn spawn_reader(mut reader: Box<dyn Read + Send>, tx: Sender<Inbound>) -> JoinHandle<()> {
    thread::spawn(move || loop {
        match read_message(&mut reader) {
            Ok(Some(m)) => {
                if tx.send(Inbound::Message(m)).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = tx.send(Inbound::Closed);
                return;
            }
            Err(e @ (ProtocolError::Malformed(_) | ProtocolError::UnsupportedVersion { .. })) => {
                if tx.send(Inbound::Rejected(e)).is_err() {
                    return;
                }
            }
            Err(e) => {
                debug!("connection ended: {e}");
                let _ = tx.send(Inbound::Closed);
                return;
            }
        }
    })
}

// ---------------------------------------------------------------------------
// Server

fn default_push() -> f64 {
    60.0
}
fn default_retrain() -> f64 {
    600.0
}
fn default_store_cap() -> usize {
    10_000
}
fn default_listen() -> String {
    "127.0.0.1:7070".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    /// CSV with the bootstrap training data.
    pub bootstrap: PathBuf,
    /// Builtin schema name or path to a schema TOML.
    pub schema: String,
    /// Defaults to [`LevelConfig::default_pipeline`].
    #[serde(default)]
    pub pipeline: Option<Pipeline>,
}

impl LevelConfig {
    pub fn default_pipeline(level: Level) -> Pipeline {
        match level {
            Level::ControlCentre => Pipeline::new(Selection::Full, Trainer::Multi),
            Level::Substation => Pipeline::new(Selection::IgTopK { k: 4 }, Trainer::Multi),
            Level::Field => Pipeline::new(Selection::Pca { rho: 0.95 }, Trainer::Binary),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_push")]
    pub push_period_s: f64,
    #[serde(default = "default_retrain")]
    pub retrain_period_s: f64,
    /// Stored feature-report records per client; oldest evicted first.
    #[serde(default = "default_store_cap")]
    pub store_cap_per_client: usize,
    /// Retrain on clients' predicted labels as well as the bootstrap data.
    #[serde(default)]
    pub feedback: bool,
    /// Directory for the append-only audit and principle logs.
    #[serde(default)]
    pub state_dir: Option<PathBuf>,
    #[serde(default)]
    pub levels: BTreeMap<Level, LevelConfig>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            push_period_s: default_push(),
            retrain_period_s: default_retrain(),
            store_cap_per_client: default_store_cap(),
            feedback: false,
            state_dir: None,
            levels: BTreeMap::new(),
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("server config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        seconds("push_period_s", self.push_period_s)?;
        seconds("retrain_period_s", self.retrain_period_s)?;
        if self.levels.is_empty() {
            return Err(Error::Config("no levels configured".into()));
        }
        Ok(())
    }

    pub fn pipeline(&self, level: Level) -> Pipeline {
        self.levels
            .get(&level)
            .and_then(|l| l.pipeline.clone())
            .unwrap_or_else(|| LevelConfig::default_pipeline(level))
    }

    /// Loads every level's bootstrap CSV; relative paths resolve against `base`.
    pub fn load_bootstrap(&self, base: &Path) -> Result<BTreeMap<Level, Dataset>> {
        self.levels
            .iter()
            .map(|(&level, lc)| {
                let schema = Schema::resolve(&resolve_path(base, Path::new(&lc.schema)).to_string_lossy())
                    .or_else(|_| Schema::resolve(&lc.schema))?;
                let (ds, _) = load_csv(resolve_path(base, &lc.bootstrap), &schema)?;
                Ok((level, ds))
            })
            .collect()
    }
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Trained,
    Resumed,
    RetrainFailed,
    Push,
    Ack,
    Alert,
    Connected,
    Disconnected,
    Rejected,
    FeedbackSkipped,
    /// Hook point for adjusting other clients' feature sets after an alert.
    AlertHook,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Milliseconds since server start.
    pub at_ms: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principle_id: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Serialize, Deserialize)]
struct PersistedPrinciple {
    level: Level,
    packet: PrinciplePacket,
}

struct Journal {
    events: Vec<Event>,
    audit: Option<File>,
    principles: Option<File>,
}

impl Journal {
    fn append(file: &mut Option<File>, line: &str) {
        if let Some(f) = file {
            if let Err(e) = writeln!(f, "{line}").and_then(|_| f.sync_data()) {
                warn!("state log write failed: {e}");
            }
        }
    }
}

struct StoredRecord {
    level: Level,
    feature_list: Arc<Vec<String>>,
    features: Vec<f64>,
    label: String,
}

/// Feature reports per client, each capped, oldest evicted first.
#[derive(Default)]
struct TrainingStore {
    cap: usize,
    per_client: BTreeMap<String, VecDeque<StoredRecord>>,
    evicted: u64,
}

impl TrainingStore {
    fn push(&mut self, client: &str, rec: StoredRecord) {
        if self.cap == 0 {
            self.evicted += 1;
            return;
        }
        let q = self.per_client.entry(client.to_string()).or_default();
        if q.len() == self.cap {
            q.pop_front();
            self.evicted += 1;
        }
        q.push_back(rec);
    }

    fn len(&self) -> usize {
        self.per_client.values().map(VecDeque::len).sum()
    }
}

struct ClientSlot {
    client_id: String,
    level: Option<Level>,
    writer: Arc<Mutex<Box<dyn Write + Send>>>,
}

pub struct Server {
    cfg: ServerConfig,
    pipelines: Mutex<BTreeMap<Level, Pipeline>>,
    bootstrap: BTreeMap<Level, Dataset>,
    active: RwLock<BTreeMap<Level, Arc<PrinciplePacket>>>,
    history: Mutex<HashMap<String, Arc<PrinciplePacket>>>,
    store: Mutex<TrainingStore>,
    clients: Mutex<BTreeMap<u64, ClientSlot>>,
    journal: Mutex<Journal>,
    next_conn: AtomicU64,
    sequence: AtomicU64,
    generation: AtomicU64,
    last_generated: Mutex<u64>,
    retrains: AtomicU64,
    shutdown: AtomicBool,
    started: Instant,
}

/// Server-side counters for reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ServerStats {
    pub retrain_cycles: u64,
    pub stored_records: usize,
    pub evicted_records: u64,
    pub connected: usize,
}

impl Server {
    /// Builds the server, resuming persisted principles from `state_dir` and
    /// training the remaining levels from their bootstrap data.
    pub fn new(cfg: ServerConfig, bootstrap: BTreeMap<Level, Dataset>) -> Result<Arc<Self>> {
        cfg.validate()?;
        for level in cfg.levels.keys() {
            if !bootstrap.contains_key(level) {
                return Err(Error::Config(format!("no bootstrap data for level {level}")));
            }
        }
        let (audit, principles_file, persisted) = match &cfg.state_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let persisted = read_persisted(&dir.join("principles.jsonl"))?;
                let open = |name: &str| {
                    let p = dir.join(name);
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(&p)
                        .map_err(|e| Error::io(p, e))
                };
                (Some(open("audit.jsonl")?), Some(open("principles.jsonl")?), persisted)
            }
            None => (None, None, (Vec::new(), 0)),
        };
        let pipelines = cfg.levels.keys().map(|&l| (l, cfg.pipeline(l))).collect();
        let server = Arc::new(Self {
            store: Mutex::new(TrainingStore {
                cap: cfg.store_cap_per_client,
                ..TrainingStore::default()
            }),
            cfg,
            pipelines: Mutex::new(pipelines),
            bootstrap,
            active: RwLock::new(BTreeMap::new()),
            history: Mutex::new(HashMap::new()),
            clients: Mutex::new(BTreeMap::new()),
            journal: Mutex::new(Journal {
                events: Vec::new(),
                audit,
                principles: principles_file,
            }),
            next_conn: AtomicU64::new(0),
            sequence: AtomicU64::new(0),
            generation: AtomicU64::new(persisted.0.len() as u64),
            last_generated: Mutex::new(0),
            retrains: AtomicU64::new(0),
            shutdown: AtomicBool::new(false),
            started: Instant::now(),
        });
        let (packets, skipped) = persisted;
        if skipped > 0 {
            server.event(EventKind::Rejected, None, None, None, format!("{skipped} unreadable principle log lines"));
        }
        for (level, packet) in packets {
            if server.cfg.levels.contains_key(&level) {
                let packet = Arc::new(packet);
                {
                    let mut last = lock(&server.last_generated);
                    *last = (*last).max(packet.generated_at);
                }
                lock(&server.history).insert(packet.principle_id.clone(), packet.clone());
                server.active.write().unwrap_or_else(|p| p.into_inner()).insert(level, packet);
            }
        }
        let levels: Vec<Level> = server.cfg.levels.keys().copied().collect();
        for level in levels {
            if let Some(p) = server.active(level) {
                server.event(EventKind::Resumed, Some(level), None, Some(p.principle_id.clone()), String::new());
            } else {
                server.retrain_level(level)?;
            }
        }
        Ok(server)
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    fn event(
        &self,
        kind: EventKind,
        level: Option<Level>,
        client_id: Option<String>,
        principle_id: Option<String>,
        detail: String,
    ) {
        let ev = Event {
            at_ms: self.started.elapsed().as_millis() as u64,
            kind,
            level,
            client_id,
            principle_id,
            detail,
        };
        let mut j = lock(&self.journal);
        if j.audit.is_some() {
            let line = serde_json::to_string(&ev).expect("event serializes");
            Journal::append(&mut j.audit, &line);
        }
        j.events.push(ev);
    }

    /// Snapshot of the audit events so far.
    pub fn events(&self) -> Vec<Event> {
        lock(&self.journal).events.clone()
    }

    pub fn active(&self, level: Level) -> Option<Arc<PrinciplePacket>> {
        self.active.read().unwrap_or_else(|p| p.into_inner()).get(&level).cloned()
    }

    /// Any principle this server has issued or resumed.
    pub fn principle(&self, id: &str) -> Option<Arc<PrinciplePacket>> {
        lock(&self.history).get(id).cloned()
    }

    pub fn stats(&self) -> ServerStats {
        let store = lock(&self.store);
        ServerStats {
            retrain_cycles: self.retrains.load(Ordering::SeqCst),
            stored_records: store.len(),
            evicted_records: store.evicted,
            connected: lock(&self.clients).len(),
        }
    }

    /// Replaces a level's pipeline; takes effect at the next retrain.
    pub fn set_pipeline(&self, level: Level, pipeline: Pipeline) {
        lock(&self.pipelines).insert(level, pipeline);
    }

    fn training_set(&self, level: Level) -> Result<Dataset> {
        let base = &self.bootstrap[&level];
        if !self.cfg.feedback {
            return Ok(base.clone());
        }
        let names = base.column_names();
        let mut records = base.records().to_vec();
        let mut skipped = 0usize;
        {
            let store = lock(&self.store);
            for rec in store.per_client.values().flatten().filter(|r| r.level == level) {
                match base.labels().index_of(&rec.label) {
                    Some(c) if *rec.feature_list == names => {
                        records.push(ConnectionRecord::new(rec.features.clone(), Some(c)));
                    }
                    _ => skipped += 1,
                }
            }
        }
        if skipped > 0 {
            self.event(
                EventKind::FeedbackSkipped,
                Some(level),
                None,
                None,
                format!("{skipped} records with other columns or labels"),
            );
        }
        let kinds = base
            .columns()
            .iter()
            .map(|c| match c.kind {
                ColumnKind::NominalEncoded => ColumnKind::NominalEncoded,
                _ => ColumnKind::Numeric,
            })
            .collect();
        Dataset::new(records, names, kinds, base.labels().clone())
    }

    /// Trains `level` and swaps in the new principle. On failure the previous
    /// principle stays active and the failure is logged.
    pub fn retrain_level(&self, level: Level) -> Result<Arc<PrinciplePacket>> {
        let pipeline = lock(&self.pipelines)
            .get(&level)
            .cloned()
            .ok_or_else(|| Error::Config(format!("level {level} not configured")))?;
        let fitted = self.training_set(level).and_then(|ds| pipeline.fit(&ds));
        let detector = match fitted {
            Ok((d, _)) => d,
            Err(e) => {
                warn!("retraining {level} failed: {e}");
                self.event(EventKind::RetrainFailed, Some(level), None, None, e.to_string());
                return Err(e);
            }
        };
        let n = self.generation.fetch_add(1, Ordering::SeqCst) + 1;
        let generated_at = {
            let mut last = lock(&self.last_generated);
            *last = now_ms().max(*last + 1);
            *last
        };
        let packet = Arc::new(PrinciplePacket {
            principle_id: format!("{level}-{n:05}"),
            generated_at,
            detector,
        });
        {
            let mut j = lock(&self.journal);
            if j.principles.is_some() {
                let line = serde_json::to_string(&PersistedPrinciple {
                    level,
                    packet: (*packet).clone(),
                })
                .map_err(|e| Error::ModelFormat(e.to_string()))?;
                Journal::append(&mut j.principles, &line);
            }
        }
        lock(&self.history).insert(packet.principle_id.clone(), packet.clone());
        self.active
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(level, packet.clone());
        info!("level {level}: principle {} active", packet.principle_id);
        self.event(
            EventKind::Trained,
            Some(level),
            None,
            Some(packet.principle_id.clone()),
            format!("{} inputs", packet.feature_list().len()),
        );
        Ok(packet)
    }

    /// One scheduled retrain cycle over all levels.
    pub fn retrain_all(&self) {
        self.retrains.fetch_add(1, Ordering::SeqCst);
        let levels: Vec<Level> = self.cfg.levels.keys().copied().collect();
        for level in levels {
            let _ = self.retrain_level(level);
        }
    }

    fn send_to(&self, writer: &Mutex<Box<dyn Write + Send>>, body: Body) -> Result<()> {
        let seq = self.sequence.fetch_add(1, Ordering::SeqCst) + 1;
        let msg = Message::new("server", seq, body);
        write_message(&mut **lock(writer), &msg)?;
        Ok(())
    }

    fn push_to(&self, conn: u64) {
        let target = {
            let clients = lock(&self.clients);
            clients
                .get(&conn)
                .and_then(|c| c.level.map(|l| (l, c.client_id.clone(), c.writer.clone())))
        };
        let Some((level, client_id, writer)) = target else {
            return;
        };
        let Some(packet) = self.active(level) else {
            return;
        };
        let id = packet.principle_id.clone();
        match self.send_to(&writer, Body::PrinciplePush(Box::new((*packet).clone()))) {
            Ok(()) => self.event(EventKind::Push, Some(level), Some(client_id), Some(id), String::new()),
            Err(e) => {
                debug!("push to {client_id} failed: {e}");
                lock(&self.clients).remove(&conn);
            }
        }
    }

    /// Sends every registered client its level's active principle.
    pub fn push_all(&self) {
        let conns: Vec<u64> = lock(&self.clients).keys().copied().collect();
        for c in conns {
            self.push_to(c);
        }
    }

    fn ingest(&self, client_id: &str, level: Option<Level>, report: FeatureReportBody) {
        let Some(level) = level else {
            self.event(
                EventKind::Rejected,
                None,
                Some(client_id.into()),
                None,
                "feature report before hello".into(),
            );
            return;
        };
        let Some(packet) = self.principle(&report.principle_id) else {
            self.event(
                EventKind::Rejected,
                Some(level),
                Some(client_id.into()),
                Some(report.principle_id),
                "unknown principle".into(),
            );
            return;
        };
        let names = Arc::new(packet.feature_list().to_vec());
        let mut rejected = 0usize;
        let mut store = lock(&self.store);
        for r in report.records {
            if r.features.len() != names.len() {
                rejected += 1;
                continue;
            }
            store.push(
                client_id,
                StoredRecord {
                    level,
                    feature_list: names.clone(),
                    features: r.features,
                    label: r.predicted,
                },
            );
        }
        drop(store);
        if rejected > 0 {
            self.event(
                EventKind::Rejected,
                Some(level),
                Some(client_id.into()),
                Some(report.principle_id),
                format!("{rejected} report records with wrong arity"),
            );
        }
    }

    /// Serves one connection on a new thread until the peer disconnects.
    pub fn attach(self: &Arc<Self>, conn: Connection) -> JoinHandle<()> {
        let id = self.next_conn.fetch_add(1, Ordering::SeqCst);
        let writer = Arc::new(Mutex::new(conn.writer));
        let server = Arc::clone(self);
        let (tx, rx) = mpsc::channel();
        let reader = spawn_reader(conn.reader, tx);
        thread::spawn(move || {
            server.handle(id, writer, rx);
            let _ = reader.join();
        })
    }

    fn handle(&self, conn: u64, writer: Arc<Mutex<Box<dyn Write + Send>>>, rx: Receiver<Inbound>) {
        let mut client_id = String::new();
        let mut level = None;
        for inbound in rx {
            let msg = match inbound {
                Inbound::Message(m) => m,
                Inbound::Rejected(e) => {
                    let supported_version = matches!(e, ProtocolError::UnsupportedVersion { .. }).then_some(PROTOCOL_VERSION);
                    let code = if supported_version.is_some() { "unsupported-version" } else { "malformed" };
                    self.event(EventKind::Rejected, level, Some(client_id.clone()), None, e.to_string());
                    let _ = self.send_to(
                        &writer,
                        Body::Error(ErrorBody {
                            code: code.into(),
                            message: e.to_string(),
                            supported_version,
                        }),
                    );
                    continue;
                }
                Inbound::Closed => break,
            };
            match msg.body {
                Body::Hello(hello) => {
                    client_id = msg.client_id.clone();
                    level = Some(hello.level);
                    lock(&self.clients).insert(
                        conn,
                        ClientSlot {
                            client_id: client_id.clone(),
                            level,
                            writer: writer.clone(),
                        },
                    );
                    self.event(EventKind::Connected, level, Some(client_id.clone()), hello.principle_id.clone(), String::new());
                    let current = self.active(hello.level).map(|p| p.principle_id.clone());
                    if current.is_some() && current != hello.principle_id {
                        self.push_to(conn);
                    }
                }
                Body::PrincipleAck { principle_id } => {
                    self.event(EventKind::Ack, level, Some(msg.client_id), Some(principle_id), String::new());
                }
                Body::FeatureReport(report) => self.ingest(&msg.client_id, level, report),
                Body::Alert(alert) => {
                    self.event(
                        EventKind::Alert,
                        level,
                        Some(msg.client_id.clone()),
                        Some(alert.principle_id.clone()),
                        format!("{} score={:e}", alert.predicted, alert.score),
                    );
                    self.event(EventKind::AlertHook, level, Some(msg.client_id), Some(alert.principle_id), String::new());
                }
                Body::Heartbeat => {}
                Body::Error(e) => warn!("client {} reported error {}: {}", msg.client_id, e.code, e.message),
                Body::PrinciplePush(_) => {
                    self.event(
                        EventKind::Rejected,
                        level,
                        Some(msg.client_id),
                        None,
                        "clients may not push principles".into(),
                    );
                }
            }
        }
        lock(&self.clients).remove(&conn);
        self.event(EventKind::Disconnected, level, Some(client_id), None, String::new());
    }

    /// Runs the push and retrain timers until [`Server::shutdown`].
    pub fn spawn_scheduler(self: &Arc<Self>) -> JoinHandle<()> {
        let server = Arc::clone(self);
        thread::spawn(move || {
            let push = Duration::from_secs_f64(server.cfg.push_period_s);
            let retrain = Duration::from_secs_f64(server.cfg.retrain_period_s);
            let start = Instant::now();
            let mut next_push = start + push;
            let mut next_retrain = start + retrain;
            while !server.shutdown.load(Ordering::SeqCst) {
                let now = Instant::now();
                if now >= next_retrain {
                    server.retrain_all();
                    next_retrain += retrain;
                }
                if now >= next_push {
                    server.push_all();
                    next_push += push;
                }
                let wake = next_push.min(next_retrain);
                let nap = wake.saturating_duration_since(Instant::now()).min(Duration::from_millis(20));
                thread::sleep(nap);
            }
        })
    }

    /// Accepts TCP clients until shutdown.
    pub fn serve_tcp(self: &Arc<Self>, listener: TcpListener) -> Result<()> {
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::Runtime(format!("listener: {e}")))?;
        while !self.shutdown.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, addr)) => {
                    debug!("connection from {addr}");
                    stream
                        .set_nonblocking(false)
                        .and_then(|_| Connection::tcp(stream))
                        .map(|c| self.attach(c))
                        .map_err(|e| Error::Runtime(format!("accept: {e}")))?;
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
                Err(e) => return Err(Error::Runtime(format!("accept: {e}"))),
            }
        }
        Ok(())
    }

    pub fn shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        lock(&self.clients).clear();
    }
}

fn read_persisted(path: &Path) -> Result<(Vec<(Level, PrinciplePacket)>, usize)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    let mut skipped = 0;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PersistedPrinciple>(&line) {
            Ok(p) if p.packet.validate().is_ok() => out.push((p.level, p.packet)),
            _ => skipped += 1,
        }
    }
    Ok((out, skipped))
}

// ---------------------------------------------------------------------------
// Client

fn default_batch() -> usize {
    256
}
fn default_batch_timeout() -> f64 {
    5.0
}
fn default_buffer_cap() -> usize {
    10_000
}
fn default_wait() -> f64 {
    10.0
}
fn default_backoff_initial() -> f64 {
    0.1
}
fn default_backoff_max() -> f64 {
    10.0
}
fn default_attempts() -> u32 {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub client_id: String,
    pub level: Level,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_batch_timeout")]
    pub batch_timeout_s: f64,
    /// Records held while no principle is active; later ones are dropped.
    #[serde(default = "default_buffer_cap")]
    pub buffer_cap: usize,
    /// Unsent messages held while disconnected; oldest reports dropped first.
    #[serde(default = "default_buffer_cap")]
    pub outbox_cap: usize,
    /// How long a replay waits for the first principle before reading input.
    #[serde(default = "default_wait")]
    pub wait_for_principle_s: f64,
    #[serde(default = "default_backoff_initial")]
    pub backoff_initial_s: f64,
    #[serde(default = "default_backoff_max")]
    pub backoff_max_s: f64,
    #[serde(default = "default_attempts")]
    pub reconnect_attempts: u32,
    #[serde(default)]
    pub alert_log: Option<PathBuf>,
}

impl ClientConfig {
    pub fn new(client_id: impl Into<String>, level: Level) -> Self {
        Self {
            client_id: client_id.into(),
            level,
            batch_size: default_batch(),
            batch_timeout_s: default_batch_timeout(),
            buffer_cap: default_buffer_cap(),
            outbox_cap: default_buffer_cap(),
            wait_for_principle_s: default_wait(),
            backoff_initial_s: default_backoff_initial(),
            backoff_max_s: default_backoff_max(),
            reconnect_attempts: default_attempts(),
            alert_log: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        seconds("batch_timeout_s", self.batch_timeout_s)?;
        seconds("backoff_initial_s", self.backoff_initial_s)?;
        seconds("backoff_max_s", self.backoff_max_s)?;
        if self.wait_for_principle_s < 0.0 || !self.wait_for_principle_s.is_finite() {
            return Err(Error::Config("wait_for_principle_s must be non-negative".into()));
        }
        Ok(())
    }
}

/// One input record: values in the source's column order.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRecord {
    pub features: Vec<f64>,
    /// Ground-truth class name, when the replay carries one.
    pub truth: Option<String>,
}

/// Records from a labeled dataset, with its column names.
pub fn replay_records(ds: &Dataset) -> (Vec<String>, Vec<InputRecord>) {
    let records = ds
        .records()
        .iter()
        .map(|r| InputRecord {
            features: r.features.clone(),
            truth: r.label.map(|l| ds.labels().name(l).to_string()),
        })
        .collect();
    (ds.column_names(), records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub principle_id: String,
    pub predicted: String,
    pub truth: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClientStats {
    pub records_in: u64,
    pub classified: u64,
    pub buffered_dropped: u64,
    pub rejected: u64,
    pub alerts: u64,
    pub principles_applied: u64,
    pub reports_sent: u64,
    pub reports_dropped: u64,
    pub reconnects: u64,
    pub per_principle: BTreeMap<String, u64>,
}

impl ClientStats {
    /// `records_in = classified + buffered_dropped + rejected` once nothing
    /// is left in the buffer.
    pub fn conserved(&self, still_buffered: usize) -> bool {
        self.records_in == self.classified + self.buffered_dropped + self.rejected + still_buffered as u64
    }
}

/// Client logic without any I/O: principle handling, classification,
/// buffering and report batching. Outgoing messages queue in an outbox.
pub struct ClientCore {
    cfg: ClientConfig,
    columns: Vec<String>,
    principle: Option<Arc<PrinciplePacket>>,
    mapping: Option<Vec<usize>>,
    buffer: VecDeque<InputRecord>,
    batch: Vec<ReportRecord>,
    batch_started: Option<Instant>,
    outbox: VecDeque<Body>,
    alert_sink: Option<Box<dyn Write + Send>>,
    outcomes: Vec<Outcome>,
    stats: ClientStats,
}

impl ClientCore {
    /// `columns` names the values of every [`InputRecord`] this client sees.
    pub fn new(cfg: ClientConfig, columns: Vec<String>) -> Result<Self> {
        cfg.validate()?;
        let alert_sink: Option<Box<dyn Write + Send>> = match &cfg.alert_log {
            Some(p) => {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?;
                Some(Box::new(f))
            }
            None => None,
        };
        Ok(Self {
            cfg,
            columns,
            principle: None,
            mapping: None,
            buffer: VecDeque::new(),
            batch: Vec::new(),
            batch_started: None,
            outbox: VecDeque::new(),
            alert_sink,
            outcomes: Vec::new(),
            stats: ClientStats::default(),
        })
    }

    pub fn with_alert_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.alert_sink = Some(sink);
        self
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn principle(&self) -> Option<&Arc<PrinciplePacket>> {
        self.principle.as_ref()
    }

    pub fn stats(&self) -> &ClientStats {
        &self.stats
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn hello(&self) -> Body {
        Body::Hello(HelloBody {
            level: self.cfg.level,
            principle_id: self.principle.as_ref().map(|p| p.principle_id.clone()),
        })
    }

    /// Applies `packet` unless it is already active or older than the active
    /// one. Returns whether it was applied.
    pub fn apply_principle(&mut self, packet: Arc<PrinciplePacket>) -> bool {
        if let Some(cur) = &self.principle {
            if cur.principle_id == packet.principle_id || packet.generated_at < cur.generated_at {
                return false;
            }
        }
        self.flush_batch();
        self.mapping = packet.detector.input_indices(&self.columns);
        if self.mapping.is_none() {
            warn!(
                "{}: principle {} needs columns this input lacks",
                self.cfg.client_id, packet.principle_id
            );
        }
        self.outbox.push_back(Body::PrincipleAck {
            principle_id: packet.principle_id.clone(),
        });
        self.principle = Some(packet);
        self.stats.principles_applied += 1;
        while let Some(rec) = self.buffer.pop_front() {
            self.classify(rec);
        }
        true
    }

    pub fn process(&mut self, rec: InputRecord) {
        self.stats.records_in += 1;
        if self.principle.is_none() {
            if self.buffer.len() < self.cfg.buffer_cap {
                self.buffer.push_back(rec);
            } else {
                self.stats.buffered_dropped += 1;
            }
            return;
        }
        self.classify(rec);
    }

    fn classify(&mut self, rec: InputRecord) {
        let packet = self.principle.clone().expect("principle present");
        let x: Vec<f64> = match &self.mapping {
            Some(idx) if rec.features.len() == self.columns.len() => idx.iter().map(|&j| rec.features[j]).collect(),
            _ => {
                self.stats.rejected += 1;
                return;
            }
        };
        let det = &packet.detector;
        let pred = match det.predict(&x) {
            Ok(p) => p,
            Err(_) => {
                self.stats.rejected += 1;
                return;
            }
        };
        let name = det.labels().name(pred.class).to_string();
        let ts = now_ms();
        self.stats.classified += 1;
        *self.stats.per_principle.entry(packet.principle_id.clone()).or_default() += 1;
        if pred.class != det.labels().normal() {
            self.stats.alerts += 1;
            if let Some(sink) = &mut self.alert_sink {
                let line = format!(
                    "{ts}\t{}\t{}\t{name}\t{:e}\n",
                    self.cfg.client_id, packet.principle_id, pred.score
                );
                if let Err(e) = sink.write_all(line.as_bytes()).and_then(|_| sink.flush()) {
                    warn!("alert log write failed: {e}");
                }
            }
            self.outbox.push_back(Body::Alert(AlertBody {
                timestamp: ts,
                principle_id: packet.principle_id.clone(),
                predicted: name.clone(),
                score: pred.score,
            }));
        }
        self.outcomes.push(Outcome {
            principle_id: packet.principle_id.clone(),
            predicted: name.clone(),
            truth: rec.truth,
        });
        if self.batch.is_empty() {
            self.batch_started = Some(Instant::now());
        }
        self.batch.push(ReportRecord {
            features: x,
            predicted: name,
            score: pred.score,
            timestamp: ts,
        });
        if self.batch.len() >= self.cfg.batch_size {
            self.flush_batch();
        }
    }

    fn flush_batch(&mut self) {
        if self.batch.is_empty() {
            return;
        }
        let principle_id = self
            .principle
            .as_ref()
            .map(|p| p.principle_id.clone())
            .unwrap_or_default();
        self.outbox.push_back(Body::FeatureReport(FeatureReportBody {
            principle_id,
            records: std::mem::take(&mut self.batch),
        }));
        self.batch_started = None;
        self.stats.reports_sent += 1;
        while self.outbox.len() > self.cfg.outbox_cap {
            let Some(i) = self.outbox.iter().position(|b| matches!(b, Body::FeatureReport(_))) else {
                break;
            };
            self.outbox.remove(i);
            self.stats.reports_dropped += 1;
        }
    }

    /// Flushes the report batch if it has waited past the batch timeout.
    pub fn tick(&mut self, now: Instant) {
        if let Some(t) = self.batch_started {
            if now.duration_since(t).as_secs_f64() >= self.cfg.batch_timeout_s {
                self.flush_batch();
            }
        }
    }

    /// Ends input: flushes the batch and drops anything still waiting for a
    /// principle.
    pub fn finish(&mut self) {
        self.flush_batch();
        self.stats.buffered_dropped += self.buffer.len() as u64;
        self.buffer.clear();
    }

    pub fn take_outbox(&mut self) -> VecDeque<Body> {
        std::mem::take(&mut self.outbox)
    }

    fn requeue_front(&mut self, mut pending: VecDeque<Body>) {
        pending.append(&mut self.outbox);
        self.outbox = pending;
    }
}

struct Link {
    writer: Box<dyn Write + Send>,
    rx: Receiver<Inbound>,
    open: bool,
}

/// Drives a [`ClientCore`] over a connection, reconnecting with exponential
/// backoff through `connect` when the link drops.
pub struct ClientRunner<C> {
    core: ClientCore,
    connect: C,
    link: Option<Link>,
    sequence: u64,
}

impl<C: FnMut() -> io::Result<Connection>> ClientRunner<C> {
    pub fn new(core: ClientCore, connect: C) -> Self {
        Self {
            core,
            connect,
            link: None,
            sequence: 0,
        }
    }

    pub fn core(&self) -> &ClientCore {
        &self.core
    }

    fn connect_once(&mut self) -> Result<()> {
        let cfg = self.core.config().clone();
        let mut delay = cfg.backoff_initial_s;
        let mut attempt = 0;
        loop {
            match (self.connect)() {
                Ok(conn) => {
                    let (tx, rx) = mpsc::channel();
                    spawn_reader(conn.reader, tx);
                    self.link = Some(Link {
                        writer: conn.writer,
                        rx,
                        open: true,
                    });
                    let hello = self.core.hello();
                    self.core.requeue_front(VecDeque::from([hello]));
                    return Ok(());
                }
                Err(e) => {
                    attempt += 1;
                    if attempt > cfg.reconnect_attempts {
                        return Err(Error::Runtime(format!("{}: server unreachable: {e}", cfg.client_id)));
                    }
                    warn!("{}: connect failed ({e}); retrying in {delay:.2}s", cfg.client_id);
                    thread::sleep(Duration::from_secs_f64(delay));
                    delay = (delay * 2.0).min(cfg.backoff_max_s);
                }
            }
        }
    }

    fn ensure_link(&mut self) -> Result<()> {
        if self.link.as_ref().is_some_and(|l| l.open) {
            return Ok(());
        }
        if self.link.is_some() {
            self.core.stats.reconnects += 1;
        }
        self.connect_once()
    }

    fn send_outbox(&mut self) -> Result<()> {
        loop {
            self.ensure_link()?;
            let mut pending = self.core.take_outbox();
            let link = self.link.as_mut().expect("link open");
            while let Some(body) = pending.pop_front() {
                self.sequence += 1;
                let msg = Message::new(self.core.config().client_id.clone(), self.sequence, body);
                match write_message(&mut link.writer, &msg) {
                    Ok(()) => {}
                    Err(ProtocolError::Io(e)) => {
                        warn!("{}: send failed: {e}", msg.client_id);
                        link.open = false;
                        pending.push_front(msg.body);
                        break;
                    }
                    Err(e) => warn!("{}: dropping unencodable {}: {e}", msg.client_id, msg.kind()),
                }
            }
            let open = link.open;
            self.core.requeue_front(pending);
            if open {
                return Ok(());
            }
        }
    }

    fn handle(&mut self, inbound: Inbound) {
        match inbound {
            Inbound::Message(m) => match m.body {
                Body::PrinciplePush(p) => {
                    self.core.apply_principle(Arc::new(*p));
                }
                Body::Error(e) => warn!("{}: server error {}: {}", self.core.config().client_id, e.code, e.message),
                _ => {}
            },
            Inbound::Rejected(e) => warn!("{}: bad frame from server: {e}", self.core.config().client_id),
            Inbound::Closed => {
                if let Some(l) = &mut self.link {
                    l.open = false;
                }
            }
        }
    }

    /// Handles everything already received; waits up to `timeout` for the
    /// first message if nothing is queued.
    fn pump(&mut self, timeout: Duration) {
        let Some(link) = &self.link else {
            return;
        };
        let first = if timeout.is_zero() {
            link.rx.try_recv().ok()
        } else {
            match link.rx.recv_timeout(timeout) {
                Ok(m) => Some(m),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => Some(Inbound::Closed),
            }
        };
        let mut next = first;
        while let Some(m) = next {
            self.handle(m);
            next = self.link.as_ref().and_then(|l| l.rx.try_recv().ok());
        }
    }

    /// Connects, waits for a principle, then processes `input` to the end.
    pub fn run(mut self, input: impl IntoIterator<Item = InputRecord>) -> Result<ClientCore> {
        self.send_outbox()?;
        let wait = Duration::from_secs_f64(self.core.config().wait_for_principle_s);
        let deadline = Instant::now() + wait;
        while self.core.principle().is_none() {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            self.pump(left.min(Duration::from_millis(50)));
            if !self.link.as_ref().is_some_and(|l| l.open) {
                self.send_outbox()?;
            }
        }
        for rec in input {
            self.pump(Duration::ZERO);
            self.core.process(rec);
            self.core.tick(Instant::now());
            if !self.core.outbox.is_empty() {
                self.send_outbox()?;
            }
        }
        self.pump(Duration::ZERO);
        self.core.finish();
        self.send_outbox()?;
        Ok(self.core)
    }
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub id: String,
    pub level: Level,
    /// CSV replayed as this client's traffic.
    pub replay: PathBuf,
    /// Defaults to the level's bootstrap schema.
    #[serde(default)]
    pub schema: Option<String>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub batch_timeout_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub server: ServerConfig,
    #[serde(default)]
    pub clients: Vec<ClientSpec>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// One simulated client: configuration, input columns and records.
pub struct SimClient {
    pub cfg: ClientConfig,
    pub columns: Vec<String>,
    pub records: Vec<InputRecord>,
    /// Name of the normal class in the replay's own labels.
    pub normal_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientReport {
    pub client_id: String,
    pub level: Level,
    pub stats: ClientStats,
    /// Replay records whose true class has no counterpart in the detector.
    pub unmapped_truth: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineEntry {
    pub at_ms: u64,
    pub kind: EventKind,
    pub client_id: String,
    pub principle_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub clients: Vec<ClientReport>,
    /// Ground truth against predictions, pooled per level.
    pub confusion: BTreeMap<Level, ConfusionMatrix>,
    pub timeline: Vec<TimelineEntry>,
    pub retrain_cycles: u64,
    pub principles_trained: u64,
    pub elapsed_ms: u64,
    /// Every principle some client classified with, by id.
    #[serde(skip)]
    pub principles: BTreeMap<String, Arc<PrinciplePacket>>,
}

impl SimReport {
    pub fn pushes_to(&self, client_id: &str) -> usize {
        self.timeline
            .iter()
            .filter(|t| t.kind == EventKind::Push && t.client_id == client_id)
            .count()
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "elapsed_ms {}", self.elapsed_ms)?;
        writeln!(out, "retrain_cycles {}", self.retrain_cycles)?;
        writeln!(out, "principles_trained {}", self.principles_trained)?;
        writeln!(out)?;
        writeln!(
            out,
            "{:<12} {:<15} {:>9} {:>10} {:>8} {:>8} {:>7} {:>10}",
            "client", "level", "records", "classified", "dropped", "rejected", "alerts", "principles"
        )?;
        for c in &self.clients {
            let s = &c.stats;
            writeln!(
                out,
                "{:<12} {:<15} {:>9} {:>10} {:>8} {:>8} {:>7} {:>10}",
                c.client_id, c.level, s.records_in, s.classified, s.buffered_dropped, s.rejected, s.alerts, s.principles_applied
            )?;
        }
        for (level, cm) in &self.confusion {
            writeln!(out, "\nconfusion ({level}; rows actual, columns predicted)")?;
            cm.write_text(&mut out)?;
        }
        writeln!(out, "\ntimeline")?;
        for t in &self.timeline {
            let kind = match t.kind {
                EventKind::Push => "push",
                _ => "ack",
            };
            writeln!(out, "{:>8} {kind:<5} {:<12} {}", t.at_ms, t.client_id, t.principle_id)?;
        }
        Ok(())
    }
}

/// Runs a server and `clients` in one process over in-memory pipes.
pub fn simulate_in_memory(cfg: ServerConfig, bootstrap: BTreeMap<Level, Dataset>, clients: Vec<SimClient>) -> Result<SimReport> {
    let started = Instant::now();
    let server = Server::new(cfg, bootstrap)?;
    let scheduler = server.spawn_scheduler();
    let mut handles = Vec::new();
    let mut meta = Vec::new();
    for c in clients {
        meta.push((c.cfg.client_id.clone(), c.cfg.level, c.normal_name.clone()));
        let core = ClientCore::new(c.cfg, c.columns)?;
        let srv = Arc::clone(&server);
        let connect = move || {
            let (client_end, server_end) = duplex();
            srv.attach(server_end);
            Ok(client_end)
        };
        let records = c.records;
        handles.push(thread::spawn(move || ClientRunner::new(core, connect).run(records)));
    }
    let mut cores = Vec::new();
    for h in handles {
        let core = h.join().map_err(|_| Error::Runtime("client thread panicked".into()))??;
        cores.push(core);
    }
    // Let the server drain what the clients sent before it saw them leave.
    let deadline = Instant::now() + Duration::from_secs(10);
    while server.stats().connected > 0 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(5));
    }
    server.shutdown();
    let _ = scheduler.join();

    let mut confusion: BTreeMap<Level, ConfusionMatrix> = BTreeMap::new();
    let mut principles = BTreeMap::new();
    let mut reports = Vec::new();
    for (core, (client_id, level, normal_name)) in cores.into_iter().zip(meta) {
        let mut unmapped = 0u64;
        for o in core.outcomes() {
            let packet = server
                .principle(&o.principle_id)
                .ok_or_else(|| Error::Runtime(format!("client used unknown principle {}", o.principle_id)))?;
            principles.entry(o.principle_id.clone()).or_insert_with(|| packet.clone());
            let det = &packet.detector;
            let cm = match confusion.entry(level) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(ConfusionMatrix::new(det.labels().clone(), det.labels().normal())?)
                }
            };
            let actual = o.truth.as_deref().and_then(|t| det.map_class(t, &normal_name));
            let predicted = cm.labels().index_of(&o.predicted);
            match (actual, predicted) {
                (Some(a), Some(p)) => cm.record(a, p)?,
                _ => unmapped += 1,
            }
        }
        reports.push(ClientReport {
            client_id,
            level,
            stats: core.stats().clone(),
            unmapped_truth: unmapped,
        });
    }
    let events = server.events();
    let timeline = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Push | EventKind::Ack))
        .map(|e| TimelineEntry {
            at_ms: e.at_ms,
            kind: e.kind,
            client_id: e.client_id.clone().unwrap_or_default(),
            principle_id: e.principle_id.clone().unwrap_or_default(),
        })
        .collect();
    Ok(SimReport {
        clients: reports,
        confusion,
        timeline,
        retrain_cycles: server.stats().retrain_cycles,
        principles_trained: events.iter().filter(|e| e.kind == EventKind::Trained).count() as u64,
        elapsed_ms: started.elapsed().as_millis() as u64,
        principles,
    })
}

/// Loads a scenario's files (paths relative to `base`) and simulates it.
pub fn simulate(scenario: &Scenario, base: &Path) -> Result<SimReport> {
    let bootstrap = scenario.server.load_bootstrap(base)?;
    let mut cfg = scenario.server.clone();
    if let Some(dir) = &cfg.state_dir {
        cfg.state_dir = Some(resolve_path(base, dir));
    }
    let mut clients = Vec::new();
    for spec in &scenario.clients {
        let schema_name = match &spec.schema {
            Some(s) => s.clone(),
            None => cfg
                .levels
                .get(&spec.level)
                .map(|l| l.schema.clone())
                .ok_or_else(|| Error::Config(format!("client {}: level {} not configured", spec.id, spec.level)))?,
        };
        let schema = Schema::resolve(&resolve_path(base, Path::new(&schema_name)).to_string_lossy())
            .or_else(|_| Schema::resolve(&schema_name))?;
        let path = resolve_path(base, &spec.replay);
        let ds = match load_csv(&path, &schema) {
            Ok((ds, _)) => ds,
            Err(Error::EmptyInput { .. }) => Dataset::new(
                Vec::new(),
                Vec::new(),
                Vec::new(),
                schema.label_space()?,
            )?,
            Err(e) => return Err(e),
        };
        let normal_name = ds.labels().name(ds.labels().normal()).to_string();
        let (columns, records) = replay_records(&ds);
        let mut ccfg = ClientConfig::new(spec.id.clone(), spec.level);
        if let Some(b) = spec.batch_size {
            ccfg.batch_size = b;
        }
        if let Some(t) = spec.batch_timeout_s {
            ccfg.batch_timeout_s = t;
        }
        clients.push(SimClient {
            cfg: ccfg,
            columns,
            records,
            normal_name,
        });
    }
    simulate_in_memory(cfg, bootstrap, clients)
}
