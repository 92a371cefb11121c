//! The single run configuration: one human-editable TOML file with an
//! explicit schema version. Secrets (API keys, tokens) come from the
//! environment variables the config names, never from the file itself.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::idm::AdapterConfig;
use crate::llm::HttpLlmConfig;
use crate::logconv::MergePolicy;
use crate::screenfilter::GateConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {found} (expected {CONFIG_SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("missing required path {name}: {path}")]
    MissingPath { name: &'static str, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Oracle,
    Diff,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterizerKind {
    Oracle,
    Heuristic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MonologueClientKind {
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    /// Frame directory (`frame_%06d.png` + `manifest.json`).
    pub frames: PathBuf,
    /// Raw demonstration log, `events.jsonl`. Required for the oracle
    /// detector/parameterizer, optional otherwise.
    #[serde(default)]
    pub events: Option<PathBuf>,
    /// Optional externally produced cursor detections.
    #[serde(default)]
    pub detections: Option<PathBuf>,
    /// Optional transcript track (JSON, `TranscriptTrack`).
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    /// Output directory for all stage artifacts and the run manifest.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdmConfig {
    pub detector: DetectorKind,
    pub parameterizer: ParameterizerKind,
    #[serde(default)]
    pub adapter: Option<AdapterConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonologueConfig {
    pub client: MonologueClientKind,
    #[serde(default)]
    pub http: Option<HttpLlmConfig>,
    #[serde(default = "default_instruction")]
    pub instruction: String,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
}

fn default_instruction() -> String {
    "Complete the demonstrated task in the application shown on screen.".into()
}

fn default_concurrency() -> usize {
    4
}

impl Default for MonologueConfig {
    fn default() -> Self {
        MonologueConfig {
            client: MonologueClientKind::Stub,
            http: None,
            instruction: default_instruction(),
            max_concurrency: default_concurrency(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub video_id: String,
    pub paths: PathsConfig,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default = "default_gate_fps")]
    pub gate_fps: f64,
    #[serde(default)]
    pub merge: MergePolicy,
    pub idm: IdmConfig,
    #[serde(default)]
    pub monologue: MonologueConfig,
}

fn default_gate_fps() -> f64 {
    2.0
}

impl PipelineConfig {
    /// Loads a config and resolves its relative paths against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut config: PipelineConfig = toml::from_str(&raw)?;
        if config.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion { found: config.schema_version });
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &PathBuf| if p.is_relative() { base.join(p) } else { p.clone() };
        config.paths.frames = resolve(&config.paths.frames);
        config.paths.events = config.paths.events.as_ref().map(&resolve);
        config.paths.detections = config.paths.detections.as_ref().map(&resolve);
        config.paths.transcript = config.paths.transcript.as_ref().map(&resolve);
        config.paths.out = resolve(&config.paths.out);
        Ok(config)
    }

    /// Checks referenced inputs exist and component settings are coherent,
    /// before any stage runs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.paths.frames.is_dir() {
            return Err(ConfigError::MissingPath { name: "frames", path: self.paths.frames.clone() });
        }
        let needs_events = matches!(self.idm.detector, DetectorKind::Oracle)
            || matches!(self.idm.parameterizer, ParameterizerKind::Oracle);
        if needs_events && self.paths.events.is_none() {
            return Err(ConfigError::Invalid(
                "oracle detector/parameterizer requires paths.events".into(),
            ));
        }
        for (name, p) in [
            ("events", &self.paths.events),
            ("detections", &self.paths.detections),
            ("transcript", &self.paths.transcript),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(ConfigError::MissingPath { name, path: p.clone() });
                }
            }
        }
        if self.video_id.is_empty() {
            return Err(ConfigError::Invalid("video_id is empty".into()));
        }
        self.gate.check().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.merge.check().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if matches!(self.idm.detector, DetectorKind::External)
            || matches!(self.idm.parameterizer, ParameterizerKind::External)
        {
            if self.idm.adapter.is_none() {
                return Err(ConfigError::Invalid(
                    "external detector/parameterizer requires [idm.adapter]".into(),
                ));
            }
        }
        if matches!(self.monologue.client, MonologueClientKind::Http)
            && self.monologue.http.is_none()
        {
            return Err(ConfigError::Invalid(
                "monologue client \"http\" requires [monologue.http]".into(),
            ));
        }
        if self.monologue.instruction.trim().is_empty() {
            return Err(ConfigError::Invalid("monologue.instruction is empty".into()));
        }
        Ok(())
    }
}
