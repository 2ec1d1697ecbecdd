//! Wire messages between the IDS server and its clients.
//!
//! Every message travels as one frame:
//!
//! ```text
//! [u32 big-endian body length N][N bytes of UTF-8 JSON]
//! ```
//!
//! The body is a JSON object with the keys `version`, `kind`, `client_id`,
//! `sequence` and `payload`, always in that order. Floats are written with
//! 17 significant digits so that every `f64` survives the trip bit for bit.
//! See `PROTOCOL.md` at the repository root for worked examples.

use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::floatfmt;
use crate::model::Classifier;
use crate::pipeline::Detector;

pub const PROTOCOL_VERSION: u32 = 1;

/// Largest accepted frame body, in bytes.
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame body of {0} bytes exceeds the limit of {MAX_FRAME} bytes")]
    Oversize(usize),

    #[error("incomplete frame: have {have} bytes, need {need}")]
    Incomplete { have: usize, need: usize },

    #[error("malformed message: {0}")]
    Malformed(String),

    #[error("unsupported protocol version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("cannot encode message: {0}")]
    Encode(String),

    #[error("transport: {0}")]
    Io(#[from] io::Error),
}

type PResult<T> = std::result::Result<T, ProtocolError>;

/// Tier of the SCADA hierarchy a client sits at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    ControlCentre,
    Substation,
    Field,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::ControlCentre, Level::Substation, Level::Field];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::ControlCentre => "control-centre",
            Level::Substation => "substation",
            Level::Field => "field",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Level::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| crate::Error::Config(format!("unknown level {s:?} (control-centre, substation, field)")))
    }
}

/// A trained detector plus the identity the server gave it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrinciplePacket {
    pub principle_id: String,
    /// Milliseconds since the Unix epoch.
    pub generated_at: u64,
    pub detector: Detector,
}

impl PrinciplePacket {
    pub fn feature_list(&self) -> &[String] {
        self.detector.inputs()
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.detector.validate()?;
        debug_assert_eq!(self.feature_list().len(), self.detector.input_dim());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    #[serde(serialize_with = "floatfmt::vec")]
    pub features: Vec<f64>,
    pub predicted: String,
    #[serde(serialize_with = "floatfmt::f64")]
    pub score: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureReportBody {
    pub principle_id: String,
    pub records: Vec<ReportRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertBody {
    pub timestamp: u64,
    pub principle_id: String,
    pub predicted: String,
    #[serde(serialize_with = "floatfmt::f64")]
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloBody {
    pub level: Level,
    /// Principle the client already runs, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principle_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supported_version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello(HelloBody),
    PrinciplePush(Box<PrinciplePacket>),
    PrincipleAck { principle_id: String },
    FeatureReport(FeatureReportBody),
    Alert(AlertBody),
    Heartbeat,
    Error(ErrorBody),
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::Hello(_) => "Hello",
            Body::PrinciplePush(_) => "PrinciplePush",
            Body::PrincipleAck { .. } => "PrincipleAck",
            Body::FeatureReport(_) => "FeatureReport",
            Body::Alert(_) => "Alert",
            Body::Heartbeat => "Heartbeat",
            Body::Error(_) => "Error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub version: u32,
    pub client_id: String,
    pub sequence: u64,
    pub body: Body,
}

impl Message {
    pub fn new(client_id: impl Into<String>, sequence: u64, body: Body) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            client_id: client_id.into(),
            sequence,
            body,
        }
    }

    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }
}

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    version: u32,
    kind: &'static str,
    client_id: &'a str,
    sequence: u64,
    payload: Box<RawValue>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeIn {
    version: u32,
    kind: String,
    client_id: String,
    sequence: u64,
    payload: Box<RawValue>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AckPayload {
    principle_id: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmptyPayload {}

fn to_raw<T: Serialize>(v: &T) -> PResult<Box<RawValue>> {
    serde_json::value::to_raw_value(v).map_err(|e| ProtocolError::Encode(e.to_string()))
}

/// Serializes `msg` into one frame.
pub fn encode(msg: &Message) -> PResult<Vec<u8>> {
    let payload = match &msg.body {
        Body::Hello(b) => to_raw(b)?,
        Body::PrinciplePush(p) => to_raw(p)?,
        Body::PrincipleAck { principle_id } => to_raw(&AckPayload {
            principle_id: principle_id.clone(),
        })?,
        Body::FeatureReport(b) => to_raw(b)?,
        Body::Alert(b) => to_raw(b)?,
        Body::Heartbeat => to_raw(&EmptyPayload {})?,
        Body::Error(b) => to_raw(b)?,
    };
    let env = EnvelopeOut {
        version: msg.version,
        kind: msg.kind(),
        client_id: &msg.client_id,
        sequence: msg.sequence,
        payload,
    };
    let body = serde_json::to_vec(&env).map_err(|e| ProtocolError::Encode(e.to_string()))?;
    if body.len() > MAX_FRAME {
        return Err(ProtocolError::Oversize(body.len()));
    }
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

fn parse<'a, T: Deserialize<'a>>(raw: &'a RawValue, kind: &str) -> PResult<T> {
    serde_json::from_str(raw.get()).map_err(|e| ProtocolError::Malformed(format!("{kind} payload: {e}")))
}

/// Parses a frame body (without the length prefix).
pub fn decode_body(body: &[u8]) -> PResult<Message> {
    let text = std::str::from_utf8(body).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if probe.version != PROTOCOL_VERSION {
        return Err(ProtocolError::UnsupportedVersion {
            found: probe.version,
            supported: PROTOCOL_VERSION,
        });
    }
    let env: EnvelopeIn = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let kind = env.kind.as_str();
    let body = match kind {
        "Hello" => Body::Hello(parse(&env.payload, kind)?),
        "PrinciplePush" => {
            let p: PrinciplePacket = parse(&env.payload, kind)?;
            p.validate()
                .map_err(|e| ProtocolError::Malformed(format!("PrinciplePush payload: {e}")))?;
            Body::PrinciplePush(Box::new(p))
        }
        "PrincipleAck" => {
            let a: AckPayload = parse(&env.payload, kind)?;
            Body::PrincipleAck {
                principle_id: a.principle_id,
            }
        }
        "FeatureReport" => Body::FeatureReport(parse(&env.payload, kind)?),
        "Alert" => Body::Alert(parse(&env.payload, kind)?),
        "Heartbeat" => {
            let _: EmptyPayload = parse(&env.payload, kind)?;
            Body::Heartbeat
        }
        "Error" => Body::Error(parse(&env.payload, kind)?),
        other => return Err(ProtocolError::Malformed(format!("unknown kind {other:?}"))),
    };
    Ok(Message {
        version: env.version,
        client_id: env.client_id,
        sequence: env.sequence,
        body,
    })
}

/// Body length announced by a frame header, if 4 bytes are available.
fn announced(buf: &[u8]) -> PResult<Option<usize>> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let n = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if n > MAX_FRAME {
        return Err(ProtocolError::Oversize(n));
    }
    Ok(Some(n))
}

/// Decodes exactly one complete frame.
pub fn decode(frame: &[u8]) -> PResult<Message> {
    let n = announced(frame)?.ok_or(ProtocolError::Incomplete {
        have: frame.len(),
        need: 4,
    })?;
    if frame.len() < 4 + n {
        return Err(ProtocolError::Incomplete {
            have: frame.len(),
            need: 4 + n,
        });
    }
    if frame.len() > 4 + n {
        return Err(ProtocolError::Malformed(format!(
            "{} trailing bytes after frame",
            frame.len() - 4 - n
        )));
    }
    decode_body(&frame[4..])
}

/// Reassembles frames from an arbitrarily chunked byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet consumed.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    /// Next complete message, or `None` until more bytes arrive. A frame that
    /// fails to parse is consumed so the stream can continue.
    pub fn next_message(&mut self) -> PResult<Option<Message>> {
        let Some(n) = announced(&self.buf)? else {
            return Ok(None);
        };
        if self.buf.len() < 4 + n {
            return Ok(None);
        }
        let frame: Vec<u8> = self.buf.drain(..4 + n).collect();
        decode_body(&frame[4..]).map(Some)
    }
}

pub fn write_message<W: Write + ?Sized>(w: &mut W, msg: &Message) -> PResult<()> {
    let frame = encode(msg)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

/// Blocking read of one message. `Ok(None)` on a clean end of stream at a
/// frame boundary.
pub fn read_message<R: Read + ?Sized>(r: &mut R) -> PResult<Option<Message>> {
    let mut header = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Incomplete { have: got, need: 4 }),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let n = announced(&header)?.unwrap_or_default();
    let mut body = vec![0u8; n];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Incomplete { have: 4, need: 4 + n },
        _ => e.into(),
    })?;
    decode_body(&body).map(Some)
}
