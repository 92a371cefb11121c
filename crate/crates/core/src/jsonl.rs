//! Canonical JSONL schemas: `events.jsonl`, `spans.jsonl`, and
//! `trajectories.jsonl`, one record per line.
//!
//! Two schema modes: `Strict` rejects unknown fields anywhere in a record;
//! `Lenient` preserves unknown top-level fields across a read/write round
//! trip (nested unknowns are dropped).

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::types::{RawEvent, Trajectory, TypedSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchemaMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: unknown fields {keys:?} rejected in strict mode")]
    UnknownFields { line: usize, keys: Vec<String> },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One `events.jsonl` line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    #[serde(flatten)]
    pub event: RawEvent,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// One `spans.jsonl` line. `clip_id` is present for clip-local spans and
/// absent for video-global ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_id: Option<String>,
    #[serde(flatten)]
    pub span: TypedSpan,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// One `trajectories.jsonl` line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    #[serde(flatten)]
    pub trajectory: Trajectory,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

pub trait Record: Serialize + DeserializeOwned {
    fn extra(&self) -> &Map<String, Value>;

    /// Per-record structural validation applied after parsing.
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

impl Record for EventRecord {
    fn extra(&self) -> &Map<String, Value> {
        &self.extra
    }

    fn validate(&self) -> Result<(), String> {
        self.event.check()
    }
}

impl Record for SpanRecord {
    fn extra(&self) -> &Map<String, Value> {
        &self.extra
    }

    fn validate(&self) -> Result<(), String> {
        if self.video_id.is_empty() {
            return Err("video_id is empty".into());
        }
        if self.span.t_start_s < 0.0 || self.span.t_start_s >= self.span.t_end_s {
            return Err(format!(
                "span [{}, {}] is not a forward interval",
                self.span.t_start_s, self.span.t_end_s
            ));
        }
        Ok(())
    }
}

impl Record for TrajectoryRecord {
    fn extra(&self) -> &Map<String, Value> {
        &self.extra
    }
}

/// Every key path present in `input` must also exist in `canon` (the
/// re-serialized typed record). Reports the paths that do not.
fn unknown_paths(input: &Value, canon: &Value, prefix: &str, out: &mut Vec<String>) {
    match (input, canon) {
        (Value::Object(im), Value::Object(cm)) => {
            for (k, iv) in im {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match cm.get(k) {
                    Some(cv) => unknown_paths(iv, cv, &path, out),
                    None => out.push(path),
                }
            }
        }
        (Value::Array(ia), Value::Array(ca)) => {
            for (i, iv) in ia.iter().enumerate() {
                if let Some(cv) = ca.get(i) {
                    unknown_paths(iv, cv, &format!("{prefix}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

/// Parses one JSONL line in the given mode. `line` is 1-based and only used
/// for error reporting.
pub fn parse_line<T: Record>(raw: &str, line: usize, mode: SchemaMode) -> Result<T, JsonlError> {
    let record: T =
        serde_json::from_str(raw).map_err(|source| JsonlError::Parse { line, source })?;
    if mode == SchemaMode::Strict {
        let mut keys: Vec<String> = record.extra().keys().cloned().collect();
        // Top-level extras are caught by the flatten map; nested unknowns
        // need a key-path comparison against the canonical serialization.
        let input: Value =
            serde_json::from_str(raw).map_err(|source| JsonlError::Parse { line, source })?;
        let canon = serde_json::to_value(&record).expect("record serializes");
        let mut nested = Vec::new();
        unknown_paths(&input, &canon, "", &mut nested);
        for p in nested {
            if !keys.contains(&p) {
                keys.push(p);
            }
        }
        if !keys.is_empty() {
            keys.sort();
            return Err(JsonlError::UnknownFields { line, keys });
        }
    }
    record
        .validate()
        .map_err(|message| JsonlError::Invalid { line, message })?;
    Ok(record)
}

/// Reads a whole JSONL stream, failing on the first bad line. Blank lines
/// are skipped.
pub fn read_jsonl<T: Record>(reader: impl BufRead, mode: SchemaMode) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1, mode)?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Record>(mut writer: impl Write, records: &[T]) -> Result<(), JsonlError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(|source| JsonlError::Parse {
            line: 0,
            source,
        })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
