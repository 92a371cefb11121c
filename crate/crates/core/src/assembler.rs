//! Step assembly into trajectories and serialization into the two training
//! formats: interleaved image/text sequences (pretraining) and user/assistant
//! chat sequences (finetuning), with explicit loss flags. Images are always
//! conditioning context and never carry loss.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::actions;
use crate::types::{
    ActionParams, FrameRef, FrameSource, Monologue, ReActStep, Trajectory, TypedSpan,
};
use crate::validate::{validate_trajectory, Violation};

#[derive(Debug, thiserror::Error)]
pub enum AssembleError {
    #[error("trajectory for {video_id} failed validation: {violations:?}")]
    Invalid {
        video_id: String,
        violations: Vec<Violation>,
    },
    #[error("stage-2 serialization requires a non-empty instruction")]
    EmptyInstruction,
    #[error("frame source has no frames")]
    EmptySource,
    #[error(transparent)]
    Frame(#[from] crate::types::FrameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {source}")]
    Corpus {
        line: usize,
        source: serde_json::Error,
    },
}

// ---------------------------------------------------------------------------
// Keyframe selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeChoice {
    pub frame: FrameRef,
    /// Set when the span started before the first available frame and the
    /// first frame was used instead.
    pub clamped: bool,
}

/// Picks the last frame at or before the span start, so the screenshot
/// shows the state the action is applied to.
pub fn select_keyframe(
    span: &TypedSpan,
    source: &dyn FrameSource,
    video_id: &str,
) -> Result<KeyframeChoice, AssembleError> {
    let count = source.frame_count();
    if count == 0 {
        return Err(AssembleError::EmptySource);
    }
    let raw = (span.t_start_s * source.fps()).floor() as i64;
    let clamped_low = raw < 0;
    let idx = raw.clamp(0, count as i64 - 1) as usize;
    let frame = source.frame_at(idx)?;
    let clamped = clamped_low || frame.timestamp_s > span.t_start_s + 1e-9;
    let path = frame
        .path
        .clone()
        .unwrap_or_else(|| format!("mem://{video_id}/{}", crate::sampling::frame_file_name(idx)).into());
    Ok(KeyframeChoice {
        frame: FrameRef { video_id: video_id.to_string(), timestamp_s: frame.timestamp_s, path },
        clamped,
    })
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// One pipeline step ready for assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInput {
    pub span: TypedSpan,
    pub params: ActionParams,
    pub monologue: Monologue,
    pub keyframe: FrameRef,
}

/// Builds a validated trajectory from time-sorted steps. Returns `None` for
/// an empty step list (callers count these as empty videos); any core-type
/// violation aborts assembly for the video.
pub fn assemble(
    steps: Vec<StepInput>,
    video_id: &str,
) -> Result<Option<Trajectory>, AssembleError> {
    if steps.is_empty() {
        return Ok(None);
    }
    let trajectory = Trajectory {
        video_id: video_id.to_string(),
        steps: steps
            .into_iter()
            .map(|s| ReActStep {
                keyframe: s.keyframe,
                monologue: s.monologue,
                action: s.span.action,
                params: s.params,
                span: s.span,
            })
            .collect(),
    };
    let violations = validate_trajectory(&trajectory);
    if !violations.is_empty() {
        return Err(AssembleError::Invalid { video_id: video_id.to_string(), violations });
    }
    Ok(Some(trajectory))
}

// ---------------------------------------------------------------------------
// Serialized sequences
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Image,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Context,
    User,
    Assistant,
}

/// One serialized segment: image content is referenced by path, text is
/// inline. `loss` marks whether the segment contributes to training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub role: Role,
    pub loss: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_s: Option<f64>,
}

impl Segment {
    fn image(role: Role, keyframe: &FrameRef) -> Segment {
        Segment {
            kind: SegmentKind::Image,
            role,
            loss: false,
            text: None,
            image_path: Some(keyframe.path.to_string_lossy().into_owned()),
            timestamp_s: Some(keyframe.timestamp_s),
        }
    }

    fn text(role: Role, loss: bool, text: String) -> Segment {
        Segment { kind: SegmentKind::Text, role, loss, text: Some(text), image_path: None, timestamp_s: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequenceFormat {
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializedSequence {
    pub video_id: String,
    pub format: SequenceFormat,
    pub segments: Vec<Segment>,
}

/// The textual payload of one step: monologue then the canonical action
/// string, which parses back to the action and parameters exactly.
fn step_text(step: &ReActStep) -> String {
    format!(
        "{}\n{}\n{}",
        step.monologue.action_description,
        step.monologue.thought,
        actions::render(&step.params)
    )
}

/// Interleaved pretraining format: per step an image segment (pure
/// conditioning) followed by a text segment carrying loss, in temporal
/// order across the whole trajectory.
pub fn serialize_stage1(t: &Trajectory) -> SerializedSequence {
    let mut segments = Vec::with_capacity(t.steps.len() * 2);
    for step in &t.steps {
        segments.push(Segment::image(Role::Context, &step.keyframe));
        segments.push(Segment::text(Role::Context, true, step_text(step)));
    }
    SerializedSequence { video_id: t.video_id.clone(), format: SequenceFormat::Stage1, segments }
}

/// Chat finetuning format: per step one user turn (instruction plus the
/// current screenshot, pure conditioning) and one assistant turn (monologue
/// plus action string) carrying loss.
pub fn serialize_stage2(
    t: &Trajectory,
    instruction: &str,
) -> Result<SerializedSequence, AssembleError> {
    if instruction.trim().is_empty() {
        return Err(AssembleError::EmptyInstruction);
    }
    let mut segments = Vec::with_capacity(t.steps.len() * 3);
    for step in &t.steps {
        segments.push(Segment::text(Role::User, false, instruction.to_string()));
        segments.push(Segment::image(Role::User, &step.keyframe));
        segments.push(Segment::text(Role::Assistant, true, step_text(step)));
    }
    Ok(SerializedSequence { video_id: t.video_id.clone(), format: SequenceFormat::Stage2, segments })
}

// ---------------------------------------------------------------------------
// Corpus files
// ---------------------------------------------------------------------------

pub fn write_corpus(
    mut writer: impl Write,
    sequences: &[SerializedSequence],
) -> Result<(), AssembleError> {
    for s in sequences {
        serde_json::to_writer(&mut writer, s)
            .map_err(|source| AssembleError::Corpus { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<SerializedSequence>, AssembleError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|source| AssembleError::Corpus { line: i + 1, source })?,
        );
    }
    Ok(out)
}

/// Byte/segment volume of a serialized corpus, reported so scaling splits
/// can be reproduced structurally without committing to a tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusVolume {
    pub sequences: usize,
    pub segments: usize,
    pub text_segments: usize,
    pub image_segments: usize,
    pub loss_segments: usize,
    pub text_bytes: usize,
}

pub fn corpus_volume(sequences: &[SerializedSequence]) -> CorpusVolume {
    let mut v = CorpusVolume { sequences: sequences.len(), ..Default::default() };
    for s in sequences {
        for seg in &s.segments {
            v.segments += 1;
            match seg.kind {
                SegmentKind::Text => {
                    v.text_segments += 1;
                    v.text_bytes += seg.text.as_deref().map_or(0, str::len);
                }
                SegmentKind::Image => v.image_segments += 1,
            }
            if seg.loss {
                v.loss_segments += 1;
            }
        }
    }
    v
}

/// Deterministic corpus split by hash of the video id: a video belongs to
/// the first `fraction` of the corpus iff its hash point is below the
/// fraction. Stable across runs and platforms.
pub fn split_point(video_id: &str) -> f64 {
    let hex = crate::llm::sha256_hex(video_id);
    let head = u64::from_str_radix(&hex[..16], 16).expect("hex digest");
    head as f64 / (u64::MAX as f64 + 1.0)
}

pub fn in_split(video_id: &str, fraction: f64) -> bool {
    split_point(video_id) < fraction
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::MemoryFrameSource;
    use crate::types::{ActionTypeCoarse, MouseButton, ParamPayload};

    fn source_4fps(n: usize) -> MemoryFrameSource {
        MemoryFrameSource {
            fps: 4.0,
            frames: (0..n)
                .map(|i| image::GrayImage::from_pixel(8, 8, image::Luma([i as u8])))
                .collect(),
        }
    }

    fn step(start: f64, end: f64) -> StepInput {
        let span = TypedSpan::new(ActionTypeCoarse::Click, start, end);
        StepInput {
            span,
            params: ActionParams::new(
                640,
                480,
                ParamPayload::Click { x_px: 10, y_px: 20, button: MouseButton::Left, count: 1 },
            ),
            monologue: Monologue {
                action_description: "Click the button.".into(),
                thought: "I click it.".into(),
            },
            keyframe: FrameRef {
                video_id: "vid".into(),
                timestamp_s: start,
                path: format!("frames/{start}.png").into(),
            },
        }
    }

    #[test]
    fn keyframe_is_last_frame_at_or_before_start() {
        let src = source_4fps(40);
        let span = TypedSpan::new(ActionTypeCoarse::Click, 2.0, 2.5);
        let k = select_keyframe(&span, &src, "vid").unwrap();
        assert_eq!(k.frame.timestamp_s, 2.0);
        assert!(k.frame.path.to_string_lossy().contains("frame_000008"));
        assert!(!k.clamped);

        let span = TypedSpan::new(ActionTypeCoarse::Click, 2.13, 2.5);
        let k = select_keyframe(&span, &src, "vid").unwrap();
        assert_eq!(k.frame.timestamp_s, 2.0);

        let span = TypedSpan::new(ActionTypeCoarse::Click, 0.0, 0.4);
        let k = select_keyframe(&span, &src, "vid").unwrap();
        assert_eq!(k.frame.timestamp_s, 0.0);
        assert!(!k.clamped);
    }

    #[test]
    fn assemble_empty_is_none_and_bad_order_aborts() {
        assert!(assemble(vec![], "vid").unwrap().is_none());
        let t = assemble(vec![step(1.0, 1.2), step(2.0, 2.2)], "vid").unwrap().unwrap();
        assert_eq!(t.steps.len(), 2);
        // Duplicate start times abort with a violation report.
        let err = assemble(vec![step(1.0, 1.2), step(1.0, 1.4)], "vid").unwrap_err();
        match err {
            AssembleError::Invalid { violations, .. } => {
                assert!(violations.iter().any(|v| v.invariant == "non-increasing-start"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stage1_interleaves_and_masks_images() {
        let t = assemble(vec![step(1.0, 1.2), step(2.0, 2.2)], "vid").unwrap().unwrap();
        let seq = serialize_stage1(&t);
        assert_eq!(seq.segments.len(), 4);
        let kinds: Vec<SegmentKind> = seq.segments.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![SegmentKind::Image, SegmentKind::Text, SegmentKind::Image, SegmentKind::Text]
        );
        for s in &seq.segments {
            assert_eq!(s.loss, s.kind == SegmentKind::Text);
        }
        // Temporal order across segments.
        let stamps: Vec<f64> = seq.segments.iter().filter_map(|s| s.timestamp_s).collect();
        assert!(stamps.windows(2).all(|w| w[0] <= w[1]));
        // Action strings parse back exactly.
        let text = seq.segments[1].text.as_deref().unwrap();
        let action_line = text.lines().last().unwrap();
        let parsed = crate::actions::parse(action_line, 640, 480).unwrap();
        assert_eq!(parsed, t.steps[0].params);
    }

    #[test]
    fn stage2_loss_is_exactly_assistant() {
        let t = assemble(vec![step(1.0, 1.2), step(2.0, 2.2), step(3.0, 3.2)], "vid")
            .unwrap()
            .unwrap();
        let seq = serialize_stage2(&t, "Rename the budget file").unwrap();
        assert_eq!(seq.segments.len(), 9);
        for s in &seq.segments {
            assert_eq!(s.loss, s.role == Role::Assistant);
            if s.kind == SegmentKind::Image {
                assert!(!s.loss);
                assert_eq!(s.role, Role::User);
            }
        }
        // Turn structure: user turns alternate with assistant turns.
        let mut turns: Vec<Role> = Vec::new();
        for s in &seq.segments {
            if turns.last() != Some(&s.role) {
                turns.push(s.role);
            }
        }
        assert_eq!(
            turns,
            vec![
                Role::User,
                Role::Assistant,
                Role::User,
                Role::Assistant,
                Role::User,
                Role::Assistant
            ]
        );
        assert_eq!(turns.iter().filter(|r| **r == Role::Assistant).count(), 3);
    }

    #[test]
    fn stage2_requires_instruction() {
        let t = assemble(vec![step(1.0, 1.2)], "vid").unwrap().unwrap();
        assert!(matches!(serialize_stage2(&t, "  "), Err(AssembleError::EmptyInstruction)));
    }

    #[test]
    fn corpus_files_round_trip() {
        let t = assemble(vec![step(1.0, 1.2), step(2.0, 2.2)], "vid").unwrap().unwrap();
        let seqs = vec![serialize_stage1(&t), serialize_stage2(&t, "do the thing").unwrap()];
        let mut buf = Vec::new();
        write_corpus(&mut buf, &seqs).unwrap();
        let back = read_corpus(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, seqs);
    }

    #[test]
    fn volume_counts_text_bytes() {
        let t = assemble(vec![step(1.0, 1.2)], "vid").unwrap().unwrap();
        let seq = serialize_stage1(&t);
        let v = corpus_volume(std::slice::from_ref(&seq));
        assert_eq!(v.sequences, 1);
        assert_eq!(v.image_segments, 1);
        assert_eq!(v.text_segments, 1);
        assert_eq!(v.loss_segments, 1);
        assert_eq!(v.text_bytes, seq.segments[1].text.as_deref().unwrap().len());
    }

    #[test]
    fn split_is_deterministic_and_monotone() {
        for id in ["vid-a", "vid-b", "vid-c"] {
            assert_eq!(split_point(id), split_point(id));
            assert!(in_split(id, 1.0));
            assert!(!in_split(id, 0.0));
            // Membership is monotone in the fraction.
            if in_split(id, 0.3) {
                assert!(in_split(id, 0.6));
            }
        }
    }
}
