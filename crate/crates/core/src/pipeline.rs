//! End-to-end orchestration: screenfilter -> idm -> monologue -> assemble
//! -> stats, with a run manifest that records per-stage counts and makes
//! reruns resumable. Stage outputs are never silently overwritten: a rerun
//! either resumes from a matching manifest or requires `force`.
//!
//! Stages hand data to each other through files under the output directory,
//! so a resumed run can pick up exactly where the manifest says.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembler::{self, StepInput};
use crate::config::{
    DetectorKind, MonologueClientKind, ParameterizerKind, PipelineConfig,
};
use crate::discovery::Classifier;
use crate::idm::{
    ActionParameterizer, EventDetector, ExternalAdapter, HeuristicConfig, HeuristicDiffDetector,
    HeuristicParameterizer, OracleDetector, OracleParameterizer, ParamOutput,
};
use crate::jsonl::{self, SchemaMode, SpanRecord, TrajectoryRecord};
use crate::llm::{sha256_hex, HttpLlmClient, LlmClient};
use crate::logconv::{merge_events, parse_event_log};
use crate::monologue::{self, MonologueContext, StubLlmClient, TranscriptTrack};
use crate::sampling::DirectoryFrameSource;
use crate::screenfilter::{gate_segments, ingest_detections};
use crate::stats;
use crate::types::{ActionParams, FrameRef, FrameSource, TypedSpan};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const STAGE_NAMES: [&str; 5] = ["screenfilter", "idm", "monologue", "assemble", "stats"];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(
        "output dir {out} holds results from a different run; resume needs matching inputs, \
         or pass force to overwrite"
    )]
    ManifestConflict { out: PathBuf },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn stage_err<E: std::fmt::Display>(stage: &'static str, e: E) -> PipelineError {
    PipelineError::Stage { stage, message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    pub counts: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub video_id: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs_sha256: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    fn path(out: &Path) -> PathBuf {
        out.join("manifest.json")
    }

    fn save(&self, out: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(Self::path(out), json + "\n")?;
        Ok(())
    }
}

/// Hash of everything that determines a run's outputs: the resolved config
/// plus the raw bytes of each referenced input.
fn input_fingerprint(config: &PipelineConfig) -> Result<String, PipelineError> {
    let mut acc = toml::to_string(config).expect("config serializes");
    let mut eat = |path: &Path| -> Result<(), PipelineError> {
        let bytes = fs::read(path)?;
        acc.push_str(&sha256_hex(&String::from_utf8_lossy(&bytes)));
        Ok(())
    };
    if let Some(p) = &config.paths.events {
        eat(p)?;
    }
    eat(&config.paths.frames.join("manifest.json"))?;
    if let Some(p) = &config.paths.detections {
        eat(p)?;
    }
    if let Some(p) = &config.paths.transcript {
        eat(p)?;
    }
    Ok(sha256_hex(&acc))
}

// ---------------------------------------------------------------------------
// Stage output records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentRecord {
    video_id: String,
    t_start_s: f64,
    t_end_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawStepRecord {
    span: TypedSpan,
    output: ParamOutput,
}

fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    fs::write(path, out)
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    let raw = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| format!("{}: {e}", path.display())))
        .collect()
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

pub fn run_screenfilter(config: &PipelineConfig, out: &Path) -> Result<StageRecord, PipelineError> {
    let flags = match &config.paths.detections {
        Some(path) => {
            let file = fs::File::open(path)?;
            ingest_detections(BufReader::new(file), config.gate_fps).map_err(|e| stage_err("screenfilter", e))?
        }
        None => {
            let source = DirectoryFrameSource::open(&config.paths.frames).map_err(|e| stage_err("screenfilter", e))?;
            let sprites = [crate::synth::cursor_sprite()];
            crate::screenfilter::detect_flags(&source, &sprites, 0.75, config.gate_fps)
                .map_err(|e| stage_err("screenfilter", e))?
        }
    };
    let segments = gate_segments(&flags, &config.gate);
    let rows: Vec<SegmentRecord> = segments
        .iter()
        .map(|&(t_start_s, t_end_s)| SegmentRecord {
            video_id: config.video_id.clone(),
            t_start_s,
            t_end_s,
        })
        .collect();
    write_lines(&out.join("segments.jsonl"), &rows)?;
    let retained: f64 = segments.iter().map(|(s, e)| e - s).sum();
    Ok(StageRecord {
        name: "screenfilter".into(),
        status: "complete".into(),
        counts: BTreeMap::from([
            ("frames_flagged".into(), flags.flags.len() as u64),
            ("segments".into(), segments.len() as u64),
            ("retained_ms".into(), (retained * 1000.0).round() as u64),
        ]),
        outputs: vec!["segments.jsonl".into()],
    })
}

fn ground_truth(
    config: &PipelineConfig,
    dims: (u32, u32),
) -> Result<Vec<(TypedSpan, ActionParams)>, PipelineError> {
    let Some(events_path) = &config.paths.events else {
        return Ok(Vec::new());
    };
    let file = fs::File::open(events_path)?;
    let log = parse_event_log(BufReader::new(file), SchemaMode::Strict, 0.1).map_err(|e| stage_err("idm", e))?;
    Ok(merge_events(&log.events, &config.merge, dims.0, dims.1))
}

pub fn run_idm(config: &PipelineConfig, out: &Path) -> Result<StageRecord, PipelineError> {
    let source = DirectoryFrameSource::open(&config.paths.frames).map_err(|e| stage_err("idm", e))?;
    let dims = (source.manifest().width, source.manifest().height);
    let gt = ground_truth(config, dims)?;

    let adapter = match &config.idm.adapter {
        Some(cfg) => Some(ExternalAdapter::new(cfg.clone()).map_err(|e| stage_err("idm", e))?),
        None => None,
    };
    let oracle_detector;
    let diff_detector;
    let detector: &dyn EventDetector = match config.idm.detector {
        DetectorKind::Oracle => {
            oracle_detector = OracleDetector::new(gt.iter().map(|(s, _)| *s).collect());
            &oracle_detector
        }
        DetectorKind::Diff => {
            diff_detector = HeuristicDiffDetector::new(HeuristicConfig::default());
            &diff_detector
        }
        DetectorKind::External => adapter.as_ref().expect("validated adapter config"),
    };
    let oracle_params;
    let heuristic_params;
    let parameterizer: &dyn ActionParameterizer = match config.idm.parameterizer {
        ParameterizerKind::Oracle => {
            oracle_params = OracleParameterizer::new(gt.clone());
            &oracle_params
        }
        ParameterizerKind::Heuristic => {
            heuristic_params = HeuristicParameterizer::new(HeuristicConfig::default());
            &heuristic_params
        }
        ParameterizerKind::External => adapter.as_ref().expect("validated adapter config"),
    };

    let outcome =
        crate::idm::run_pipeline(&source, &config.video_id, detector, parameterizer)
            .map_err(|e| stage_err("idm", e))?;

    // Keep only steps inside cursor-gated segments. Without a gating
    // stage (standalone idm runs) everything is retained.
    let segments: Option<Vec<SegmentRecord>> = if out.join("segments.jsonl").is_file() {
        Some(read_lines(&out.join("segments.jsonl")).map_err(|e| stage_err("idm", e))?)
    } else {
        None
    };
    let gated = |span: &TypedSpan| {
        let mid = (span.t_start_s + span.t_end_s) / 2.0;
        segments
            .as_ref()
            .is_none_or(|segs| segs.iter().any(|s| mid >= s.t_start_s && mid <= s.t_end_s))
    };
    let total_steps = outcome.steps.len();
    let steps: Vec<RawStepRecord> = outcome
        .steps
        .into_iter()
        .filter(|(span, _)| gated(span))
        .map(|(span, output)| RawStepRecord { span, output })
        .collect();

    write_lines(&out.join("steps_raw.jsonl"), &steps)?;
    write_lines(&out.join("failures_idm.jsonl"), &outcome.failures)?;
    let pred_records: Vec<SpanRecord> = steps
        .iter()
        .map(|r| SpanRecord {
            video_id: config.video_id.clone(),
            clip_id: None,
            span: r.span,
            extra: Default::default(),
        })
        .collect();
    write_lines(&out.join("spans_pred.jsonl"), &pred_records)?;
    let gt_records: Vec<SpanRecord> = gt
        .iter()
        .map(|(span, _)| SpanRecord {
            video_id: config.video_id.clone(),
            clip_id: None,
            span: *span,
            extra: Default::default(),
        })
        .collect();
    write_lines(&out.join("spans_gt.jsonl"), &gt_records)?;

    Ok(StageRecord {
        name: "idm".into(),
        status: "complete".into(),
        counts: BTreeMap::from([
            ("clips".into(), outcome.clips_processed as u64),
            ("spans_detected".into(), outcome.spans_detected as u64),
            ("steps".into(), steps.len() as u64),
            ("steps_outside_gate".into(), (total_steps - steps.len()) as u64),
            ("failures".into(), outcome.failures.len() as u64),
            ("gt_spans".into(), gt.len() as u64),
        ]),
        outputs: vec![
            "steps_raw.jsonl".into(),
            "failures_idm.jsonl".into(),
            "spans_pred.jsonl".into(),
            "spans_gt.jsonl".into(),
        ],
    })
}

pub fn run_monologue(config: &PipelineConfig, out: &Path) -> Result<StageRecord, PipelineError> {
    let source = DirectoryFrameSource::open(&config.paths.frames).map_err(|e| stage_err("monologue", e))?;
    let raw: Vec<RawStepRecord> = read_lines(&out.join("steps_raw.jsonl")).map_err(|e| stage_err("monologue", e))?;
    let transcript: TranscriptTrack = match &config.paths.transcript {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| stage_err("monologue", e))?,
        None => TranscriptTrack::default(),
    };
    let duration = source.duration_s();

    let http_client;
    let stub_client;
    let client: &dyn LlmClient = match config.monologue.client {
        MonologueClientKind::Stub => {
            stub_client = StubLlmClient;
            &stub_client
        }
        MonologueClientKind::Http => {
            let cfg = config.monologue.http.clone().expect("validated http config");
            http_client = HttpLlmClient::new(cfg).map_err(|e| stage_err("monologue", e))?;
            &http_client
        }
    };

    let mut contexts = Vec::with_capacity(raw.len());
    let mut keyframes = Vec::with_capacity(raw.len());
    for r in &raw {
        let choice =
            assembler::select_keyframe(&r.span, &source, &config.video_id).map_err(|e| stage_err("monologue", e))?;
        let post = source
            .frame_at_time(r.span.t_end_s.min(duration))
            .ok()
            .map(|f| FrameRef {
                video_id: config.video_id.clone(),
                timestamp_s: f.timestamp_s,
                path: f.path.unwrap_or_else(|| "mem://post".into()),
            });
        contexts.push(MonologueContext::new(
            r.output.action,
            r.output.params.clone(),
            &r.span,
            choice.frame.clone(),
            post,
            &transcript,
            duration,
        ));
        keyframes.push(choice.frame);
    }
    let prompts: Vec<String> = contexts.iter().map(monologue::build_prompt).collect();
    let results = monologue::generate_batch(client, &prompts, config.monologue.max_concurrency);

    let mut steps = Vec::new();
    let mut failures = Vec::new();
    for ((r, keyframe), result) in raw.iter().zip(keyframes).zip(results) {
        match result {
            Ok(m) => steps.push(StepInput {
                span: r.span,
                params: r.output.params.clone(),
                monologue: m,
                keyframe,
            }),
            Err(e) => failures.push(serde_json::json!({
                "span": r.span,
                "error": e.to_string(),
            })),
        }
    }
    write_lines(&out.join("steps.jsonl"), &steps)?;
    write_lines(&out.join("failures_monologue.jsonl"), &failures)?;
    Ok(StageRecord {
        name: "monologue".into(),
        status: "complete".into(),
        counts: BTreeMap::from([
            ("steps".into(), steps.len() as u64),
            ("failures".into(), failures.len() as u64),
        ]),
        outputs: vec!["steps.jsonl".into(), "failures_monologue.jsonl".into()],
    })
}

pub fn run_assemble(config: &PipelineConfig, out: &Path) -> Result<StageRecord, PipelineError> {
    let steps: Vec<StepInput> = read_lines(&out.join("steps.jsonl")).map_err(|e| stage_err("assemble", e))?;
    let trajectory = assembler::assemble(steps, &config.video_id).map_err(|e| stage_err("assemble", e))?;

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut trajectories = Vec::new();
    match trajectory {
        Some(t) => {
            counts.insert("trajectories".into(), 1);
            counts.insert("steps".into(), t.steps.len() as u64);
            trajectories.push(t);
        }
        None => {
            counts.insert("trajectories".into(), 0);
            counts.insert("empty_videos".into(), 1);
        }
    }
    let records: Vec<TrajectoryRecord> = trajectories
        .iter()
        .map(|t| TrajectoryRecord { trajectory: t.clone(), extra: Default::default() })
        .collect();
    let mut buf = Vec::new();
    jsonl::write_jsonl(&mut buf, &records).map_err(|e| stage_err("assemble", e))?;
    fs::write(out.join("trajectories.jsonl"), buf)?;

    let stage1: Vec<_> = trajectories.iter().map(assembler::serialize_stage1).collect();
    let stage2: Vec<_> = trajectories
        .iter()
        .map(|t| assembler::serialize_stage2(t, &config.monologue.instruction))
        .collect::<Result<_, _>>()
        .map_err(|e| stage_err("assemble", e))?;
    let mut buf = Vec::new();
    assembler::write_corpus(&mut buf, &stage1).map_err(|e| stage_err("assemble", e))?;
    fs::write(out.join("stage1.jsonl"), buf)?;
    let mut buf = Vec::new();
    assembler::write_corpus(&mut buf, &stage2).map_err(|e| stage_err("assemble", e))?;
    fs::write(out.join("stage2.jsonl"), buf)?;

    let v1 = assembler::corpus_volume(&stage1);
    let v2 = assembler::corpus_volume(&stage2);
    counts.insert("stage1_text_bytes".into(), v1.text_bytes as u64);
    counts.insert("stage1_loss_segments".into(), v1.loss_segments as u64);
    counts.insert("stage2_text_bytes".into(), v2.text_bytes as u64);
    counts.insert("stage2_loss_segments".into(), v2.loss_segments as u64);

    Ok(StageRecord {
        name: "assemble".into(),
        status: "complete".into(),
        counts,
        outputs: vec!["trajectories.jsonl".into(), "stage1.jsonl".into(), "stage2.jsonl".into()],
    })
}

pub fn run_stats(_config: &PipelineConfig, out: &Path) -> Result<StageRecord, PipelineError> {
    let file = fs::File::open(out.join("trajectories.jsonl"))?;
    let records: Vec<TrajectoryRecord> =
        jsonl::read_jsonl(BufReader::new(file), SchemaMode::Strict).map_err(|e| stage_err("stats", e))?;
    let trajectories: Vec<_> = records.into_iter().map(|r| r.trajectory).collect();
    let mut counts: BTreeMap<String, u64> =
        BTreeMap::from([("trajectories".into(), trajectories.len() as u64)]);
    let mut outputs = Vec::new();
    if !trajectories.is_empty() {
        let report = stats::corpus_report(&trajectories, &[], &Classifier::Keyword)
            .map_err(|e| stage_err("stats", e))?;
        fs::write(
            out.join("report.json"),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        fs::write(out.join("report.md"), stats::report_markdown(&report))?;
        fs::write(out.join("histogram.csv"), stats::histogram_csv(&report.steps))?;
        fs::write(out.join("action_shares.csv"), stats::shares_csv(&report.actions))?;
        counts.insert("total_steps".into(), report.steps.total_steps as u64);
        outputs.extend(
            ["report.json", "report.md", "histogram.csv", "action_shares.csv"]
                .map(String::from),
        );
    }
    Ok(StageRecord { name: "stats".into(), status: "complete".into(), counts, outputs })
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// Runs all stages in order, resuming from the manifest when inputs match.
/// `force` discards a conflicting manifest and overwrites prior outputs.
pub fn run_all(config: &PipelineConfig, force: bool) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let out = config.paths.out.clone();
    fs::create_dir_all(&out)?;
    let config_sha256 = sha256_hex(&toml::to_string(config).expect("config serializes"));
    let inputs_sha256 = input_fingerprint(config)?;

    let manifest_path = RunManifest::path(&out);
    let mut manifest = if manifest_path.is_file() {
        let existing: RunManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
            .map_err(|e| PipelineError::Stage { stage: "manifest", message: e.to_string() })?;
        if existing.config_sha256 == config_sha256 && existing.inputs_sha256 == inputs_sha256 {
            existing
        } else if force {
            fresh_manifest(config, &config_sha256, &inputs_sha256)
        } else {
            return Err(PipelineError::ManifestConflict { out });
        }
    } else {
        let stale = STAGE_NAMES
            .iter()
            .any(|_| out.join("segments.jsonl").exists() || out.join("steps.jsonl").exists());
        if stale && !force {
            return Err(PipelineError::ManifestConflict { out });
        }
        fresh_manifest(config, &config_sha256, &inputs_sha256)
    };

    type StageFn = fn(&PipelineConfig, &Path) -> Result<StageRecord, PipelineError>;
    let stages: [(&str, StageFn); 5] = [
        ("screenfilter", run_screenfilter),
        ("idm", run_idm),
        ("monologue", run_monologue),
        ("assemble", run_assemble),
        ("stats", run_stats),
    ];
    for (name, stage) in stages {
        if manifest.stage(name).is_some_and(|s| s.status == "complete") {
            continue;
        }
        let record = stage(config, &out)?;
        manifest.stages.retain(|s| s.name != name);
        manifest.stages.push(record);
        manifest.save(&out)?;
    }
    manifest.save(&out)?;
    Ok(manifest)
}

fn fresh_manifest(config: &PipelineConfig, config_sha256: &str, inputs_sha256: &str) -> RunManifest {
    RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        video_id: config.video_id.clone(),
        seed: config.seed,
        config_sha256: config_sha256.to_string(),
        inputs_sha256: inputs_sha256.to_string(),
        stages: Vec::new(),
    }
}

/// Writes the bundled synthetic session to disk: frames, events,
/// detections, transcript, and a ready-to-run config. Returns the config
/// path.
pub fn write_demo_session(
    dir: &Path,
    seed: u64,
    duration_s: f64,
    n_events: usize,
) -> Result<PathBuf, PipelineError> {
    let session = crate::synth::synth_session(seed, "demo", duration_s, n_events, 320, 200);
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    let frames = crate::synth::render_session_frames(&session, 4.0);
    for (i, frame) in frames.iter().enumerate() {
        frame
            .save(frames_dir.join(crate::sampling::frame_file_name(i)))
            .map_err(|e| PipelineError::Stage { stage: "demo", message: e.to_string() })?;
    }
    crate::sampling::write_manifest(
        &frames_dir,
        &crate::sampling::FrameManifest {
            fps: 4.0,
            count: frames.len(),
            width: session.frame_w_px,
            height: session.frame_h_px,
        },
    )?;
    let events: Vec<jsonl::EventRecord> = session
        .events
        .iter()
        .map(|e| jsonl::EventRecord { event: e.clone(), extra: Default::default() })
        .collect();
    let mut buf = Vec::new();
    jsonl::write_jsonl(&mut buf, &events)
        .map_err(|e| PipelineError::Stage { stage: "demo", message: e.to_string() })?;
    fs::write(dir.join("events.jsonl"), buf)?;
    fs::write(
        dir.join("detections.jsonl"),
        crate::synth::synth_detections(duration_s, 2.0, None),
    )?;
    fs::write(
        dir.join("transcript.json"),
        serde_json::to_string_pretty(&session.transcript).expect("transcript serializes"),
    )?;
    let catalog = crate::synth::synth_catalog(seed, 30, 20);
    fs::write(
        dir.join("catalog.json"),
        serde_json::to_string_pretty(&catalog).expect("catalog serializes"),
    )?;

    let config_path = dir.join("run.toml");
    let config = format!(
        r#"schema_version = 1
seed = {seed}
video_id = "demo"

[paths]
frames = "frames"
events = "events.jsonl"
detections = "detections.jsonl"
transcript = "transcript.json"
out = "out"

[idm]
detector = "oracle"
parameterizer = "oracle"

[monologue]
client = "stub"
"#
    );
    fs::write(&config_path, config)?;
    Ok(config_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_run(dir: &Path) -> (PipelineConfig, RunManifest) {
        let config_path = write_demo_session(dir, 42, 40.0, 10).unwrap();
        let config = PipelineConfig::load(&config_path).unwrap();
        let manifest = run_all(&config, false).unwrap();
        (config, manifest)
    }

    #[test]
    fn oracle_demo_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let (config, manifest) = demo_run(dir.path());
        assert_eq!(manifest.stages.len(), 5);
        let idm = manifest.stage("idm").unwrap();
        assert_eq!(idm.counts["steps"], 10);
        assert_eq!(idm.counts["failures"], 0);
        let assemble = manifest.stage("assemble").unwrap();
        assert_eq!(assemble.counts["trajectories"], 1);
        assert_eq!(assemble.counts["steps"], 10);
        for f in ["segments.jsonl", "steps.jsonl", "trajectories.jsonl", "stage1.jsonl",
                  "stage2.jsonl", "report.json", "manifest.json"] {
            assert!(config.paths.out.join(f).is_file(), "{f} missing");
        }
    }

    #[test]
    fn rerun_resumes_and_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (config, first) = demo_run(dir.path());
        let manifest_bytes = fs::read(config.paths.out.join("manifest.json")).unwrap();
        // Rerun resumes every stage from the manifest.
        let second = run_all(&config, false).unwrap();
        assert_eq!(first, second);
        assert_eq!(fs::read(config.paths.out.join("manifest.json")).unwrap(), manifest_bytes);
    }

    #[test]
    fn conflicting_outputs_require_force() {
        let dir = tempfile::tempdir().unwrap();
        let (config, _) = demo_run(dir.path());
        // Changing the config invalidates the manifest.
        let mut changed = config.clone();
        changed.seed = 43;
        assert!(matches!(
            run_all(&changed, false),
            Err(PipelineError::ManifestConflict { .. })
        ));
        let manifest = run_all(&changed, true).unwrap();
        assert_eq!(manifest.seed, 43);
    }

    #[test]
    fn validation_fails_before_any_stage_runs() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = write_demo_session(dir.path(), 42, 20.0, 4).unwrap();
        let mut config = PipelineConfig::load(&config_path).unwrap();
        config.paths.frames = dir.path().join("missing");
        let err = run_all(&config, false).unwrap_err();
        assert!(matches!(err, PipelineError::Config(_)));
        assert!(!config.paths.out.join("manifest.json").exists());
    }
}
