//! Input traces.
//!
//! Text traces are JSON lines, one transmitter change per line:
//!
//! ```text
//! {"t_ms":0,"sticks":{"throttle":1.0,"steering":0.0,"switches":[false,false,false,false]}}
//! {"t_ms":4000,"channels":[992,992,...]}
//! {"t_ms":8000,"silent":true}
//! {"t_ms":8500,"crsf":"yBgW..."}
//! ```
//!
//! `sticks` and `channels` are held until the next line; `crsf` bytes are
//! delivered once. Binary captures hold timestamped raw link bytes.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use overrow_core::crsf::{ChannelMap, NUM_CHANNELS};
use overrow_core::field::{stick_channels, StickInput, StickScript, TraceEntry};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sticks {
    #[serde(default)]
    pub throttle: f64,
    #[serde(default)]
    pub steering: f64,
    #[serde(default)]
    pub switches: [bool; 4],
}

/// One line of a text trace. Exactly one input field is set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceLine {
    pub t_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<[u16; NUM_CHANNELS]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sticks: Option<Sticks>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub silent: bool,
    /// Raw link bytes, base64.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crsf: Option<String>,
}

impl TraceLine {
    pub fn from_entry(e: &TraceEntry) -> Self {
        let mut line = TraceLine { t_ms: e.t, ..Default::default() };
        match &e.input {
            StickInput::Channels(ch) => line.channels = Some(*ch),
            StickInput::Silent => line.silent = true,
            StickInput::Raw(bytes) => line.crsf = Some(B64.encode(bytes)),
        }
        line
    }

    pub fn to_entry(&self, map: &ChannelMap) -> Result<TraceEntry, String> {
        let set = self.channels.is_some() as u8 + self.sticks.is_some() as u8 + self.silent as u8 + self.crsf.is_some() as u8;
        if set != 1 {
            return Err("give exactly one of channels, sticks, silent or crsf".into());
        }
        let input = if let Some(ch) = self.channels {
            StickInput::Channels(ch)
        } else if let Some(s) = self.sticks {
            if !(s.throttle.abs() <= 1.0 && s.steering.abs() <= 1.0) {
                return Err(format!("stick values must lie in [-1, 1], got throttle {} steering {}", s.throttle, s.steering));
            }
            StickInput::Channels(stick_channels(map, s.throttle, s.steering, s.switches))
        } else if let Some(data) = &self.crsf {
            StickInput::Raw(B64.decode(data).map_err(|e| format!("crsf: {e}"))?)
        } else {
            StickInput::Silent
        };
        Ok(TraceEntry { t: self.t_ms, input })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceFileError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{} problem(s):\n  {}", .0.len(), .0.join("\n  "))]
    Invalid(Vec<String>),
}

pub fn lines_to_script(lines: &[TraceLine], map: &ChannelMap) -> Result<StickScript, TraceFileError> {
    let mut errs = Vec::new();
    let mut entries = Vec::new();
    for (i, l) in lines.iter().enumerate() {
        match l.to_entry(map) {
            Ok(e) => entries.push(e),
            Err(msg) => errs.push(format!("entry {i}: {msg}")),
        }
    }
    if !errs.is_empty() {
        return Err(TraceFileError::Invalid(errs));
    }
    StickScript::new(entries).map_err(|es| TraceFileError::Invalid(es.iter().map(ToString::to_string).collect()))
}

/// Parses a text trace. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_trace(text: &str, map: &ChannelMap) -> Result<StickScript, TraceFileError> {
    let mut errs = Vec::new();
    let mut lines = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceLine>(raw) {
            Ok(l) => match l.to_entry(map) {
                Ok(_) => lines.push(l),
                Err(msg) => errs.push(format!("line {}: {msg}", n + 1)),
            },
            Err(e) => errs.push(format!("line {}: {e}", n + 1)),
        }
    }
    if !errs.is_empty() {
        return Err(TraceFileError::Invalid(errs));
    }
    lines_to_script(&lines, map)
}

pub fn write_trace(entries: &[TraceEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(&TraceLine::from_entry(e)).expect("trace lines serialize") + "\n")
        .collect()
}

pub const CAPTURE_MAGIC: &[u8; 8] = b"CRSFCAP1";

/// Link bytes observed at one instant of a capture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRecord {
    pub t_ms: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CaptureError {
    #[error("missing capture header")]
    BadMagic,
    #[error("record at byte {offset} is truncated")]
    Truncated { offset: usize },
    #[error("record at byte {offset} goes back in time")]
    OutOfOrder { offset: usize },
}

/// Capture layout: the magic, then records of `t_ms: u64 LE`, `len: u16 LE`, bytes.
pub fn write_capture(records: &[CaptureRecord]) -> Vec<u8> {
    let mut out = CAPTURE_MAGIC.to_vec();
    for r in records {
        out.extend_from_slice(&r.t_ms.to_le_bytes());
        out.extend_from_slice(&(r.bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(&r.bytes);
    }
    out
}

pub fn read_capture(data: &[u8]) -> Result<Vec<CaptureRecord>, CaptureError> {
    let body = data.strip_prefix(CAPTURE_MAGIC.as_slice()).ok_or(CaptureError::BadMagic)?;
    let mut records: Vec<CaptureRecord> = Vec::new();
    let mut at = 0;
    while at < body.len() {
        let offset = at + CAPTURE_MAGIC.len();
        let head = body.get(at..at + 10).ok_or(CaptureError::Truncated { offset })?;
        let t_ms = u64::from_le_bytes(head[..8].try_into().expect("8 bytes"));
        let len = u16::from_le_bytes([head[8], head[9]]) as usize;
        let bytes = body.get(at + 10..at + 10 + len).ok_or(CaptureError::Truncated { offset })?.to_vec();
        if records.last().is_some_and(|r| r.t_ms > t_ms) {
            return Err(CaptureError::OutOfOrder { offset });
        }
        records.push(CaptureRecord { t_ms, bytes });
        at += 10 + len;
    }
    Ok(records)
}

/// Turns a capture into a script for a stepper ticking every `dt_ms`.
/// Bytes that arrive within one tick are delivered together on that tick.
pub fn capture_to_script(records: &[CaptureRecord], dt_ms: u64) -> StickScript {
    let mut entries: Vec<TraceEntry> = Vec::new();
    for r in records {
        let tick = r.t_ms.div_ceil(dt_ms) * dt_ms;
        match entries.last_mut() {
            Some(TraceEntry { t, input: StickInput::Raw(bytes) }) if *t == tick => bytes.extend_from_slice(&r.bytes),
            _ => entries.push(TraceEntry { t: tick, input: StickInput::Raw(r.bytes.clone()) }),
        }
    }
    StickScript::new(entries).expect("ticks are ordered and raw entries carry no channel values")
}

/// Loads a text trace or a binary capture, told apart by the capture header.
pub fn load_trace(path: &Path, map: &ChannelMap, dt_ms: u64) -> Result<StickScript, TraceFileError> {
    let io = |source| TraceFileError::Io { path: path.display().to_string(), source };
    let data = std::fs::read(path).map_err(io)?;
    if data.starts_with(CAPTURE_MAGIC) {
        let records = read_capture(&data).map_err(|e| TraceFileError::Invalid(vec![e.to_string()]))?;
        return Ok(capture_to_script(&records, dt_ms));
    }
    let text = String::from_utf8(data).map_err(|e| TraceFileError::Invalid(vec![e.to_string()]))?;
    parse_trace(&text, map)
}
