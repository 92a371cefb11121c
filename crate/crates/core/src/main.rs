//! trajmine CLI: per-stage subcommands plus the end-to-end `run` driver.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 stage failure.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use trajmine::config::{DetectorKind, ParameterizerKind, PipelineConfig};
use trajmine::discovery::{self};
use trajmine::evalharness::{evaluate_records, MatchConfig};
use trajmine::idm::{AdapterConfig, AdapterTransport};
use trajmine::jsonl::{self, SchemaMode, SpanRecord, TrajectoryRecord};
use trajmine::logconv::{make_clips, merge_events, parse_event_log, MergePolicy};
use trajmine::pipeline::{self, PipelineError};
use trajmine::sampling::DirectoryFrameSource;
use trajmine::screenfilter::{detect_flags, gate_segments, ingest_detections, GateConfig};
use trajmine::stats;

#[derive(Parser)]
#[command(
    name = "trajmine",
    version,
    about = "Mines GUI-agent training trajectories from screen recordings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw demonstration log into typed spans and 10 s clips.
    Logconv(LogconvArgs),
    /// Cursor-gate a video into retained GUI segments.
    Screenfilter(ScreenfilterArgs),
    /// Run detection + parameterization over a frame directory.
    Idm(IdmArgs),
    /// Score predicted spans against ground truth.
    Eval(EvalArgs),
    /// Assemble monologue-annotated steps and serialize a training corpus.
    Assemble(AssembleArgs),
    /// Corpus analytics over assembled trajectories.
    Stats(StatsArgs),
    /// Expand a seed keyword list over a catalog.
    Discover(DiscoverArgs),
    /// Run every stage end-to-end from one config.
    Run(RunArgs),
    /// Generate the bundled synthetic demo session.
    Demo(DemoArgs),
    /// Show version and available component implementations.
    Info,
}

#[derive(Args)]
struct LogconvArgs {
    /// events.jsonl input.
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Merge-policy TOML overriding the defaults.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value = "video")]
    video: String,
    /// Recording width in pixels.
    #[arg(long, default_value_t = 1920)]
    width: u32,
    /// Recording height in pixels.
    #[arg(long, default_value_t = 1080)]
    height: u32,
    /// Video duration in seconds; inferred from the last event when absent.
    #[arg(long)]
    duration: Option<f64>,
    /// Accept unknown fields in event records.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct ScreenfilterArgs {
    /// Frame directory to run the built-in template detector over.
    #[arg(long, conflicts_with = "detections", required_unless_present = "detections")]
    frames: Option<PathBuf>,
    /// Pre-computed detections.jsonl.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    fps: f64,
    /// Template-match score threshold for the built-in detector.
    #[arg(long, default_value_t = 0.75)]
    threshold: f64,
    /// Directory of cursor sprite PNGs; the built-in sprite when absent.
    #[arg(long)]
    sprites: Option<PathBuf>,
    /// Output segments.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "video")]
    video: String,
}

#[derive(Args)]
struct IdmArgs {
    #[arg(long)]
    video: String,
    #[arg(long)]
    frames: PathBuf,
    /// events.jsonl, required for the oracle detector/parameterizer.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "diff")]
    detector: DetectorChoice,
    #[arg(long, value_enum, default_value = "heuristic")]
    parameterizer: ParameterizerChoice,
    /// External adapter subprocess command (token list).
    #[arg(long, num_args = 1.., conflicts_with = "adapter_endpoint")]
    adapter_command: Option<Vec<String>>,
    /// External adapter HTTP endpoint.
    #[arg(long)]
    adapter_endpoint: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DetectorChoice {
    Oracle,
    Diff,
    External,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ParameterizerChoice {
    Oracle,
    Heuristic,
    External,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted spans.jsonl.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth spans.jsonl.
    #[arg(long)]
    gt: PathBuf,
    /// Report directory (report.json + report.md).
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Count touching endpoints as overlap.
    #[arg(long)]
    allow_touching: bool,
}

#[derive(Args)]
struct AssembleArgs {
    /// Directory holding steps.jsonl from the monologue stage.
    #[arg(long)]
    steps: PathBuf,
    #[arg(long, value_enum)]
    format: FormatChoice,
    /// Task instruction for the chat format.
    #[arg(long, default_value = "Complete the demonstrated task in the application shown on screen.")]
    instruction: String,
    #[arg(long, default_value = "video")]
    video: String,
    /// Output corpus file (one sequence per line).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatChoice {
    Stage1,
    Stage2,
}

#[derive(Args)]
struct StatsArgs {
    /// trajectories.jsonl input.
    #[arg(long)]
    trajectories: PathBuf,
    /// Optional metas.jsonl (one VideoMeta per line).
    #[arg(long)]
    metas: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiscoverArgs {
    /// `fixture:<path>` for a synthetic catalog file, or `http` with
    /// --http-config.
    #[arg(long)]
    catalog: String,
    /// HTTP catalog endpoint templates (TOML), with `http`.
    #[arg(long)]
    http_config: Option<PathBuf>,
    /// Seed keywords, one per line.
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    sample_n: usize,
    /// Quality-rule recency anchor (YYYY-MM-DD); today when absent.
    #[arg(long)]
    reference_date: Option<chrono::NaiveDate>,
    /// Output discovery.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overwrite outputs from a different prior run.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 120.0)]
    duration: f64,
    #[arg(long, default_value_t = 40)]
    events: usize,
    /// Also run the full pipeline on the generated session.
    #[arg(long)]
    run: bool,
}

/// Failures that reach the user, classified for the exit code.
enum AppError {
    Validation(anyhow::Error),
    Stage(anyhow::Error),
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation(_) => 2,
            AppError::Stage(_) => 3,
        }
    }

    fn message(&self) -> &anyhow::Error {
        match self {
            AppError::Validation(e) | AppError::Stage(e) => e,
        }
    }
}

fn validation<E: Into<anyhow::Error>>(e: E) -> AppError {
    AppError::Validation(e.into())
}

fn stage<E: Into<anyhow::Error>>(e: E) -> AppError {
    AppError::Stage(e.into())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {:#}", e.message());
        std::process::exit(e.exit_code());
    }
}

fn open_reader(path: &Path) -> Result<BufReader<std::fs::File>, AppError> {
    std::fs::File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .map(BufReader::new)
        .map_err(validation)
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Logconv(args) => cmd_logconv(args),
        Command::Screenfilter(args) => cmd_screenfilter(args),
        Command::Idm(args) => cmd_idm(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Assemble(args) => cmd_assemble(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Discover(args) => cmd_discover(args),
        Command::Run(args) => cmd_run(args),
        Command::Demo(args) => cmd_demo(args),
        Command::Info => cmd_info(),
    }
}

fn cmd_logconv(args: LogconvArgs) -> Result<(), AppError> {
    let policy: MergePolicy = match &args.policy {
        Some(p) => toml::from_str(
            &std::fs::read_to_string(p)
                .with_context(|| format!("cannot read {}", p.display()))
                .map_err(validation)?,
        )
        .map_err(validation)?,
        None => MergePolicy::default(),
    };
    policy.check().map_err(validation)?;
    let mode = if args.lenient { SchemaMode::Lenient } else { SchemaMode::Strict };
    let log = parse_event_log(open_reader(&args.events)?, mode, 0.1).map_err(stage)?;
    for m in &log.malformed {
        eprintln!("warning: line {}: {}", m.line, m.message);
    }
    let spans = merge_events(&log.events, &policy, args.width, args.height);
    let duration = args
        .duration
        .unwrap_or_else(|| spans.last().map(|(s, _)| s.t_end_s.ceil()).unwrap_or(0.0));
    let plan = make_clips(
        &args.video,
        duration,
        &spans.iter().map(|(s, _)| *s).collect::<Vec<_>>(),
    )
    .map_err(stage)?;

    std::fs::create_dir_all(&args.out).map_err(stage)?;
    let records: Vec<SpanRecord> = spans
        .iter()
        .map(|(span, _)| SpanRecord {
            video_id: args.video.clone(),
            clip_id: None,
            span: *span,
            extra: Default::default(),
        })
        .collect();
    let mut buf = Vec::new();
    jsonl::write_jsonl(&mut buf, &records).map_err(stage)?;
    std::fs::write(args.out.join("spans.jsonl"), buf).map_err(stage)?;
    let mut clips_buf = String::new();
    for clip in &plan.clips {
        clips_buf.push_str(&serde_json::to_string(clip).expect("clip serializes"));
        clips_buf.push('\n');
    }
    std::fs::write(args.out.join("clips.jsonl"), clips_buf).map_err(stage)?;
    println!(
        "events: {}  malformed: {}  spans: {}  clips: {}  dropped_spans: {}",
        log.events.len(),
        log.malformed.len(),
        spans.len(),
        plan.clips.len(),
        plan.dropped_spans
    );
    Ok(())
}

fn load_sprites(dir: &Option<PathBuf>) -> Result<Vec<image::GrayImage>, AppError> {
    match dir {
        None => Ok(vec![trajmine::synth::cursor_sprite()]),
        Some(dir) => {
            let mut sprites = Vec::new();
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .with_context(|| format!("cannot read {}", dir.display()))
                .map_err(validation)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "png"))
                .collect();
            paths.sort();
            for p in paths {
                sprites.push(image::open(&p).map_err(stage)?.to_luma8());
            }
            if sprites.is_empty() {
                return Err(validation(anyhow!("no PNG sprites in {}", dir.display())));
            }
            Ok(sprites)
        }
    }
}

fn cmd_screenfilter(args: ScreenfilterArgs) -> Result<(), AppError> {
    let flags = match (&args.frames, &args.detections) {
        (_, Some(path)) => ingest_detections(open_reader(path)?, args.fps).map_err(stage)?,
        (Some(dir), None) => {
            let source = DirectoryFrameSource::open(dir).map_err(validation)?;
            let sprites = load_sprites(&args.sprites)?;
            detect_flags(&source, &sprites, args.threshold, args.fps).map_err(stage)?
        }
        (None, None) => unreachable!("clap enforces one input"),
    };
    let cfg = GateConfig::default();
    cfg.check().map_err(validation)?;
    let segments = gate_segments(&flags, &cfg);
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent).map_err(stage)?;
    }
    let mut buf = String::new();
    for (t_start_s, t_end_s) in &segments {
        buf.push_str(
            &serde_json::json!({
                "video_id": args.video,
                "t_start_s": t_start_s,
                "t_end_s": t_end_s,
            })
            .to_string(),
        );
        buf.push('\n');
    }
    std::fs::write(&args.out, buf).map_err(stage)?;
    let retained: f64 = segments.iter().map(|(s, e)| e - s).sum();
    println!(
        "frames: {}  segments: {}  retained_s: {:.1}",
        flags.flags.len(),
        segments.len(),
        retained
    );
    Ok(())
}

fn cmd_idm(args: IdmArgs) -> Result<(), AppError> {
    let adapter = match (&args.adapter_command, &args.adapter_endpoint) {
        (Some(command), _) => Some(AdapterConfig {
            transport: AdapterTransport::Subprocess { command: command.clone() },
            timeout_ms: 30_000,
            max_in_flight: 4,
        }),
        (None, Some(endpoint)) => Some(AdapterConfig {
            transport: AdapterTransport::Http { endpoint: endpoint.clone() },
            timeout_ms: 30_000,
            max_in_flight: 4,
        }),
        (None, None) => None,
    };
    let config = PipelineConfig {
        schema_version: 1,
        seed: 0,
        video_id: args.video,
        paths: trajmine::config::PathsConfig {
            frames: args.frames,
            events: args.events,
            detections: None,
            transcript: None,
            out: args.out.clone(),
        },
        gate: GateConfig::default(),
        gate_fps: 2.0,
        merge: MergePolicy::default(),
        idm: trajmine::config::IdmConfig {
            detector: match args.detector {
                DetectorChoice::Oracle => DetectorKind::Oracle,
                DetectorChoice::Diff => DetectorKind::Diff,
                DetectorChoice::External => DetectorKind::External,
            },
            parameterizer: match args.parameterizer {
                ParameterizerChoice::Oracle => ParameterizerKind::Oracle,
                ParameterizerChoice::Heuristic => ParameterizerKind::Heuristic,
                ParameterizerChoice::External => ParameterizerKind::External,
            },
            adapter,
        },
        monologue: Default::default(),
    };
    config.validate().map_err(validation)?;
    std::fs::create_dir_all(&args.out).map_err(stage)?;
    let record = pipeline::run_idm(&config, &args.out).map_err(app_from_pipeline)?;
    print_counts(&record.counts);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), AppError> {
    let preds: Vec<SpanRecord> =
        jsonl::read_jsonl(open_reader(&args.pred)?, SchemaMode::Strict).map_err(validation)?;
    let gts: Vec<SpanRecord> =
        jsonl::read_jsonl(open_reader(&args.gt)?, SchemaMode::Strict).map_err(validation)?;
    let cfg = MatchConfig { allow_touching: args.allow_touching };
    let report = evaluate_records(&preds, &gts, &cfg);
    std::fs::create_dir_all(&args.out).map_err(stage)?;
    std::fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(stage)?;
    let md = report.to_markdown();
    std::fs::write(args.out.join("report.md"), &md).map_err(stage)?;
    print!("{md}");
    Ok(())
}

fn cmd_assemble(args: AssembleArgs) -> Result<(), AppError> {
    let steps_path = args.steps.join("steps.jsonl");
    let raw = std::fs::read_to_string(&steps_path)
        .with_context(|| format!("cannot read {}", steps_path.display()))
        .map_err(validation)?;
    let steps: Vec<trajmine::assembler::StepInput> = raw
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(validation)?;
    let Some(trajectory) = trajmine::assembler::assemble(steps, &args.video).map_err(stage)?
    else {
        println!("no steps; nothing to assemble (empty video)");
        return Ok(());
    };
    let sequence = match args.format {
        FormatChoice::Stage1 => trajmine::assembler::serialize_stage1(&trajectory),
        FormatChoice::Stage2 => trajmine::assembler::serialize_stage2(&trajectory, &args.instruction)
            .map_err(stage)?,
    };
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent).map_err(stage)?;
    }
    let mut buf = Vec::new();
    trajmine::assembler::write_corpus(&mut buf, std::slice::from_ref(&sequence)).map_err(stage)?;
    std::fs::write(&args.out, buf).map_err(stage)?;
    let volume = trajmine::assembler::corpus_volume(std::slice::from_ref(&sequence));
    println!(
        "steps: {}  segments: {}  loss_segments: {}  text_bytes: {}",
        trajectory.steps.len(),
        volume.segments,
        volume.loss_segments,
        volume.text_bytes
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<(), AppError> {
    let records: Vec<TrajectoryRecord> =
        jsonl::read_jsonl(open_reader(&args.trajectories)?, SchemaMode::Strict)
            .map_err(validation)?;
    let trajectories: Vec<_> = records.into_iter().map(|r| r.trajectory).collect();
    let metas: Vec<trajmine::VideoMeta> = match &args.metas {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(validation)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(validation)?,
        None => Vec::new(),
    };
    let report = stats::corpus_report(&trajectories, &metas, &discovery::Classifier::Keyword)
        .map_err(stage)?;
    std::fs::create_dir_all(&args.out).map_err(stage)?;
    std::fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(stage)?;
    std::fs::write(args.out.join("report.md"), stats::report_markdown(&report)).map_err(stage)?;
    std::fs::write(args.out.join("histogram.csv"), stats::histogram_csv(&report.steps))
        .map_err(stage)?;
    std::fs::write(args.out.join("action_shares.csv"), stats::shares_csv(&report.actions))
        .map_err(stage)?;
    println!(
        "trajectories: {}  steps: {}  mean_steps: {:.2}",
        report.steps.trajectories, report.steps.total_steps, report.steps.mean_steps
    );
    Ok(())
}

fn cmd_discover(args: DiscoverArgs) -> Result<(), AppError> {
    let seeds: Vec<String> = std::fs::read_to_string(&args.seeds)
        .with_context(|| format!("cannot read {}", args.seeds.display()))
        .map_err(validation)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let reference_date = args
        .reference_date
        .unwrap_or_else(|| chrono::Utc::now().date_naive());
    let mut config = discovery::DiscoveryConfig::new(args.seed, args.rounds, reference_date);
    config.sample_n = args.sample_n;

    let state = if let Some(path) = args.catalog.strip_prefix("fixture:") {
        let catalog = discovery::SyntheticCatalog::load(Path::new(path)).map_err(validation)?;
        discovery::expand(&catalog, &seeds, &config).map_err(stage)?
    } else if args.catalog == "http" {
        let cfg_path = args
            .http_config
            .as_ref()
            .ok_or_else(|| validation(anyhow!("--catalog http requires --http-config <toml>")))?;
        let http_cfg: discovery::HttpCatalogConfig = toml::from_str(
            &std::fs::read_to_string(cfg_path)
                .with_context(|| format!("cannot read {}", cfg_path.display()))
                .map_err(validation)?,
        )
        .map_err(validation)?;
        let catalog = discovery::HttpCatalog::new(http_cfg).map_err(validation)?;
        discovery::expand(&catalog, &seeds, &config).map_err(stage)?
    } else {
        return Err(validation(anyhow!(
            "--catalog must be `fixture:<path>` or `http`, got {:?}",
            args.catalog
        )));
    };

    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent).map_err(stage)?;
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&state).expect("state serializes"))
        .map_err(stage)?;
    println!(
        "rounds: {}  accepted_channels: {}  rejected_channels: {}  candidates: {}",
        state.rounds_run,
        state.accepted_channels.len(),
        state.rejected_channels.len(),
        state.candidates.len()
    );
    Ok(())
}

fn app_from_pipeline(e: PipelineError) -> AppError {
    match e {
        PipelineError::Config(_) | PipelineError::ManifestConflict { .. } => {
            AppError::Validation(e.into())
        }
        PipelineError::Stage { .. } | PipelineError::Io(_) => AppError::Stage(e.into()),
    }
}

fn print_counts(counts: &std::collections::BTreeMap<String, u64>) {
    let line: Vec<String> = counts.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    println!("{}", line.join("  "));
}

fn cmd_run(args: RunArgs) -> Result<(), AppError> {
    let config = PipelineConfig::load(&args.config).map_err(validation)?;
    let manifest = pipeline::run_all(&config, args.force).map_err(app_from_pipeline)?;
    for stage in &manifest.stages {
        print!("{}: {}", stage.name, stage.status);
        for (k, v) in &stage.counts {
            print!("  {k}={v}");
        }
        println!();
    }
    println!("manifest: {}", config.paths.out.join("manifest.json").display());
    Ok(())
}

fn cmd_demo(args: DemoArgs) -> Result<(), AppError> {
    std::fs::create_dir_all(&args.out).map_err(stage)?;
    let config_path = pipeline::write_demo_session(&args.out, args.seed, args.duration, args.events)
        .map_err(app_from_pipeline)?;
    println!("demo session written; config: {}", config_path.display());
    if args.run {
        return cmd_run(RunArgs { config: config_path, force: false });
    }
    Ok(())
}

fn cmd_info() -> Result<(), AppError> {
    println!("trajmine {}", env!("CARGO_PKG_VERSION"));
    println!(
        "detectors: oracle, diff, external (subprocess|http, wire v{})",
        trajmine::idm::WIRE_VERSION
    );
    println!("parameterizers: oracle, heuristic, external");
    println!("monologue clients: stub, http");
    println!("catalogs: fixture, http");
    Ok(())
}
