//! The two inverse-dynamics stages as pluggable interfaces: dense event
//! detection over 4 fps / 10 s clips, and per-segment action
//! parameterization. Three implementations ship for each: an oracle that
//! replays ground truth, a pixel-difference heuristic, and an adapter for
//! external detectors behind a line-delimited wire protocol.

mod adapter;
mod heuristic;
mod oracle;

pub use adapter::{AdapterConfig, AdapterTransport, ExternalAdapter, WIRE_VERSION};
pub use heuristic::{HeuristicConfig, HeuristicDiffDetector, HeuristicParameterizer};
pub use oracle::{OracleDetector, OracleParameterizer};

use serde::{Deserialize, Serialize};

use crate::logconv::{make_clips, Clip, LogconvError, CLIP_FPS};
use crate::sampling::{plan_samples, sample_plan_frames, SamplePlan, SamplingError};
use crate::types::{ActionParams, ActionTypeCoarse, Frame, FrameError, FrameSource, TypedSpan};

/// Detector outputs whose spans end/start within this distance of a clip
/// boundary are stitched with same-type spans on the other side.
pub const STITCH_WINDOW_S: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum IdmError {
    #[error("invalid detector output: {0}")]
    InvalidOutput(String),
    #[error("no ground truth covers span [{t_start_s:.3}, {t_end_s:.3}]")]
    OracleMiss { t_start_s: f64, t_end_s: f64 },
    #[error("no pixel evidence in segment and no hint to fall back on")]
    NoEvidence,
    #[error("adapter request {request_id}: {message}")]
    Adapter { request_id: String, message: String },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Logconv(#[from] LogconvError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// A clip prepared for detection: fixed-rate frames plus the clip bounds.
#[derive(Debug)]
pub struct ClipInput {
    pub clip: Clip,
    pub frames: Vec<Frame>,
}

/// A detected segment prepared for parameterization: dynamically sampled
/// frames plus the video-global span.
#[derive(Debug)]
pub struct SegmentInput {
    pub video_id: String,
    pub span: TypedSpan,
    pub plan: SamplePlan,
    pub frames: Vec<Frame>,
}

/// Ordered, clip-local typed spans from one detector call.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectorOutput {
    pub spans: Vec<TypedSpan>,
}

impl DetectorOutput {
    /// Validates and canonically orders detector spans: within clip bounds,
    /// and non-overlapping per coarse type.
    pub fn new(mut spans: Vec<TypedSpan>, clip_duration_s: f64) -> Result<Self, IdmError> {
        spans.sort_by(TypedSpan::cmp_key);
        for s in &spans {
            if s.t_start_s < 0.0 || s.t_end_s > clip_duration_s + 1e-9 || s.t_start_s >= s.t_end_s
            {
                return Err(IdmError::InvalidOutput(format!(
                    "span [{:.3}, {:.3}] outside clip bounds [0, {clip_duration_s}]",
                    s.t_start_s, s.t_end_s
                )));
            }
        }
        for action in ActionTypeCoarse::ALL {
            let mut prev_end = f64::NEG_INFINITY;
            for s in spans.iter().filter(|s| s.action == action) {
                if s.t_start_s < prev_end {
                    return Err(IdmError::InvalidOutput(format!(
                        "{action} spans overlap at {:.3}",
                        s.t_start_s
                    )));
                }
                prev_end = s.t_end_s;
            }
        }
        Ok(DetectorOutput { spans })
    }
}

/// Parameterizer output: the (possibly re-predicted) action type, its
/// parameters, and a confidence. `hint_disagreement` is set when the caller
/// supplied a hint the implementation could not confirm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamOutput {
    pub action: ActionTypeCoarse,
    pub params: ActionParams,
    pub confidence: f64,
    #[serde(default)]
    pub hint_disagreement: bool,
}

impl ParamOutput {
    pub fn check(&self) -> Result<(), String> {
        if self.action != self.params.action() {
            return Err(format!(
                "action {} does not match params variant {}",
                self.action,
                self.params.action()
            ));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        self.params.check()
    }
}

/// Dense event detection over one prepared clip.
pub trait EventDetector: Sync {
    fn name(&self) -> &'static str;
    fn detect(&self, clip: &ClipInput) -> Result<DetectorOutput, IdmError>;
}

/// Action-content recognition over one sampled segment.
pub trait ActionParameterizer: Sync {
    fn name(&self) -> &'static str;
    fn parameterize(
        &self,
        segment: &SegmentInput,
        hint: Option<ActionTypeCoarse>,
    ) -> Result<ParamOutput, IdmError>;
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// One span that could not be parameterized; the pipeline continues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFailure {
    pub span: TypedSpan,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct PipelineOutcome {
    /// Detected spans in video-global time, each paired with its
    /// parameterization, ordered by start time.
    pub steps: Vec<(TypedSpan, ParamOutput)>,
    pub failures: Vec<StepFailure>,
    pub clips_processed: usize,
    pub spans_detected: usize,
}

/// Runs detection over 10 s clips, stitches boundary-touching spans, maps to
/// video-global time, and parameterizes each span with per-span dynamic
/// sampling. Per-span failures are recorded and skipped.
pub fn run_pipeline(
    source: &dyn FrameSource,
    video_id: &str,
    detector: &dyn EventDetector,
    parameterizer: &dyn ActionParameterizer,
) -> Result<PipelineOutcome, IdmError> {
    let duration = source.duration_s();
    let plan = make_clips(video_id, duration, &[])?;
    let mut outcome = PipelineOutcome::default();

    // Detect per clip, collecting global spans grouped by clip.
    let mut per_clip: Vec<Vec<TypedSpan>> = Vec::with_capacity(plan.clips.len());
    for clip in &plan.clips {
        let n = clip.frame_count();
        let mut frames = Vec::with_capacity(n);
        for i in 0..n {
            frames.push(source.frame_at_time(clip.t_offset_s + i as f64 / CLIP_FPS)?);
        }
        let input = ClipInput { clip: clip.clone(), frames };
        let output = detector.detect(&input)?;
        per_clip.push(
            output
                .spans
                .iter()
                .map(|s| s.shifted(clip.t_offset_s))
                .collect(),
        );
        outcome.clips_processed += 1;
    }

    let spans = stitch_clip_spans(&plan.clips, per_clip);
    outcome.spans_detected = spans.len();

    for span in spans {
        let plan = plan_samples(&span)?;
        let frames = match sample_plan_frames(source, &plan) {
            Ok(f) => f,
            Err(e) => {
                outcome.failures.push(StepFailure { span, error: e.to_string() });
                continue;
            }
        };
        let segment = SegmentInput { video_id: video_id.to_string(), span, plan, frames };
        match parameterizer.parameterize(&segment, Some(span.action)) {
            Ok(output) => outcome.steps.push((span, output)),
            Err(e) => outcome.failures.push(StepFailure { span, error: e.to_string() }),
        }
    }
    outcome.steps.sort_by(|a, b| a.0.cmp_key(&b.0));
    Ok(outcome)
}

/// Merges spans split by clip tiling: at each clip boundary, the latest
/// same-type span ending within [`STITCH_WINDOW_S`] of the boundary joins
/// the earliest one starting within the window on the other side. At most
/// one merge per type per boundary, which preserves same-type
/// non-overlap.
fn stitch_clip_spans(clips: &[Clip], per_clip: Vec<Vec<TypedSpan>>) -> Vec<TypedSpan> {
    let mut merged: Vec<TypedSpan> = Vec::new();
    let mut carry: Vec<TypedSpan> = Vec::new();
    for (i, spans) in per_clip.into_iter().enumerate() {
        let mut current = spans;
        if i > 0 {
            let boundary = clips[i].t_offset_s;
            for action in ActionTypeCoarse::ALL {
                let left = carry
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| {
                        s.action == action && boundary - s.t_end_s <= STITCH_WINDOW_S
                    })
                    .max_by(|a, b| a.1.t_end_s.total_cmp(&b.1.t_end_s))
                    .map(|(idx, _)| idx);
                let right = current
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| {
                        s.action == action && s.t_start_s - boundary <= STITCH_WINDOW_S
                    })
                    .min_by(|a, b| a.1.t_start_s.total_cmp(&b.1.t_start_s))
                    .map(|(idx, _)| idx);
                if let (Some(li), Some(ri)) = (left, right) {
                    let l = carry.remove(li);
                    let r = current.remove(ri);
                    current.push(TypedSpan::new(action, l.t_start_s, r.t_end_s));
                }
            }
        }
        merged.append(&mut carry);
        carry = current;
    }
    merged.append(&mut carry);
    merged.sort_by(TypedSpan::cmp_key);
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::sec3::round3;

    fn clip(i: usize) -> Clip {
        Clip {
            clip_id: format!("v_clip{i:04}"),
            video_id: "v".into(),
            t_offset_s: i as f64 * 10.0,
            duration_s: 10.0,
            fps: 4.0,
            spans: vec![],
        }
    }

    #[test]
    fn detector_output_rejects_out_of_bounds() {
        let bad = vec![TypedSpan::new(ActionTypeCoarse::Click, 9.0, 10.5)];
        assert!(DetectorOutput::new(bad, 10.0).is_err());
        let ok = vec![TypedSpan::new(ActionTypeCoarse::Click, 9.0, 10.0)];
        assert!(DetectorOutput::new(ok, 10.0).is_ok());
    }

    #[test]
    fn detector_output_rejects_same_type_overlap() {
        let bad = vec![
            TypedSpan::new(ActionTypeCoarse::Click, 1.0, 2.0),
            TypedSpan::new(ActionTypeCoarse::Click, 1.5, 3.0),
        ];
        assert!(DetectorOutput::new(bad, 10.0).is_err());
        let ok = vec![
            TypedSpan::new(ActionTypeCoarse::Click, 1.0, 2.0),
            TypedSpan::new(ActionTypeCoarse::Type, 1.5, 3.0),
        ];
        assert!(DetectorOutput::new(ok, 10.0).is_ok());
    }

    #[test]
    fn boundary_spans_stitch_back_together() {
        let clips = vec![clip(0), clip(1)];
        let per_clip = vec![
            vec![TypedSpan::new(ActionTypeCoarse::Click, 9.9, 10.0)],
            vec![TypedSpan::new(ActionTypeCoarse::Click, 10.0, 10.1)],
        ];
        let merged = stitch_clip_spans(&clips, per_clip);
        assert_eq!(merged, vec![TypedSpan::new(ActionTypeCoarse::Click, 9.9, 10.1)]);
    }

    #[test]
    fn distant_spans_do_not_stitch() {
        let clips = vec![clip(0), clip(1)];
        let per_clip = vec![
            vec![TypedSpan::new(ActionTypeCoarse::Click, 9.0, 9.6)],
            vec![TypedSpan::new(ActionTypeCoarse::Click, 10.4, 11.0)],
        ];
        let merged = stitch_clip_spans(&clips, per_clip);
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn stitch_is_type_matched() {
        let clips = vec![clip(0), clip(1)];
        let per_clip = vec![
            vec![TypedSpan::new(ActionTypeCoarse::Click, 9.9, 10.0)],
            vec![TypedSpan::new(ActionTypeCoarse::Type, 10.0, 10.5)],
        ];
        let merged = stitch_clip_spans(&clips, per_clip);
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn stitch_merges_at_most_one_pair_per_type() {
        let clips = vec![clip(0), clip(1)];
        let per_clip = vec![
            vec![
                TypedSpan::new(ActionTypeCoarse::Click, round3(9.5), round3(9.8)),
                TypedSpan::new(ActionTypeCoarse::Click, round3(9.85), 10.0),
            ],
            vec![
                TypedSpan::new(ActionTypeCoarse::Click, 10.0, round3(10.1)),
                TypedSpan::new(ActionTypeCoarse::Click, round3(10.15), round3(10.3)),
            ],
        ];
        let merged = stitch_clip_spans(&clips, per_clip);
        assert_eq!(merged.len(), 3);
        // Closest pair merged; same-type spans stay non-overlapping.
        assert!(merged.contains(&TypedSpan::new(ActionTypeCoarse::Click, 9.85, 10.1)));
        let mut prev_end = f64::NEG_INFINITY;
        for s in &merged {
            assert!(s.t_start_s >= prev_end);
            prev_end = s.t_end_s;
        }
    }
}
