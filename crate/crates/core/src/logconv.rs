//! Raw demonstration logs to ground-truth typed spans, and fixed-rate clip
//! preparation for detector training and evaluation.
//!
//! Merging works on integer milliseconds and converts to seconds only when
//! spans are emitted.

use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, EventRecord, JsonlError, SchemaMode};
use crate::types::{
    ActionParams, ActionTypeCoarse, ActionTypeFine, MouseButton, ParamPayload, RawEvent,
    TypedSpan,
};

/// Clips are fixed 10 s windows sampled at 4 fps.
pub const CLIP_SECONDS: f64 = 10.0;
pub const CLIP_FPS: f64 = 4.0;

#[derive(Debug, thiserror::Error)]
pub enum LogconvError {
    #[error("corrupt log: {malformed} of {total} lines malformed (limit {limit:.0}%)")]
    CorruptLog {
        malformed: usize,
        total: usize,
        limit: f64,
    },
    #[error("invalid merge policy: {0}")]
    Policy(String),
    #[error("negative video duration {0}")]
    NegativeDuration(f64),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// Thresholds for fusing micro-events into typed spans. The paper leaves
/// these unspecified; defaults follow typical OS double-click timing and
/// natural typing cadence, and every one is configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergePolicy {
    /// Max gap between write events fused into one type span.
    pub keystroke_gap_ms: u64,
    /// Window for fusing repeat clicks at the same point into multi-clicks.
    pub click_window_ms: u64,
    /// Max moveTo-to-dragTo gap for fusing into one drag.
    pub drag_fuse_ms: u64,
    /// Max gap between same-direction scroll events fused together.
    pub scroll_gap_ms: u64,
    /// Minimum emitted span length; point events are padded symmetrically.
    pub min_span_ms: u64,
}

impl Default for MergePolicy {
    fn default() -> Self {
        MergePolicy {
            keystroke_gap_ms: 1000,
            click_window_ms: 400,
            drag_fuse_ms: 500,
            scroll_gap_ms: 300,
            min_span_ms: 50,
        }
    }
}

impl MergePolicy {
    pub fn check(&self) -> Result<(), LogconvError> {
        for (name, v) in [
            ("keystroke_gap_ms", self.keystroke_gap_ms),
            ("click_window_ms", self.click_window_ms),
            ("drag_fuse_ms", self.drag_fuse_ms),
            ("scroll_gap_ms", self.scroll_gap_ms),
            ("min_span_ms", self.min_span_ms),
        ] {
            if v == 0 {
                return Err(LogconvError::Policy(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// A malformed input line, reported rather than fatal (up to the corrupt-log
/// threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    /// Events in non-decreasing `t_ms` order (stable sort).
    pub events: Vec<RawEvent>,
    pub malformed: Vec<MalformedLine>,
}

/// Parses an `events.jsonl` stream. Malformed lines are collected with their
/// line numbers; the whole log fails once more than `max_malformed_ratio`
/// of non-blank lines are bad.
pub fn parse_event_log(
    reader: impl BufRead,
    mode: SchemaMode,
    max_malformed_ratio: f64,
) -> Result<ParsedLog, LogconvError> {
    let mut log = ParsedLog::default();
    let mut total = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(JsonlError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match jsonl::parse_line::<EventRecord>(&line, i + 1, mode) {
            Ok(rec) => log.events.push(rec.event),
            Err(e) => log.malformed.push(MalformedLine {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    if total > 0 && log.malformed.len() as f64 > max_malformed_ratio * total as f64 {
        return Err(LogconvError::CorruptLog {
            malformed: log.malformed.len(),
            total,
            limit: max_malformed_ratio * 100.0,
        });
    }
    log.events.sort_by_key(|e| e.t_ms);
    Ok(log)
}

// ---------------------------------------------------------------------------
// Micro-event merging
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum ProtoKind {
    Click {
        x: u32,
        y: u32,
        button: MouseButton,
        count: u8,
        /// Only plain click events accept follow-up clicks; synthesized
        /// doubleClick/tripleClick events arrive already fused.
        fusable: bool,
    },
    TypeText {
        text: String,
    },
    ScrollAcc {
        dx: i64,
        dy: i64,
        horizontal: bool,
    },
    Press {
        keys: Vec<String>,
    },
    Drag {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
    },
}

#[derive(Debug)]
struct Proto {
    start_ms: i64,
    end_ms: i64,
    /// Time of the last event folded into this proto, for gap checks.
    last_ms: i64,
    kind: ProtoKind,
    contributors: Vec<usize>,
}

/// A merged span together with the indices of the events that produced it.
#[derive(Debug, Clone)]
pub(crate) struct TracedSpan {
    pub span: TypedSpan,
    pub params: ActionParams,
    /// Indices of the events that produced this span; exercised by the
    /// provenance tests.
    #[cfg_attr(not(test), allow(dead_code))]
    pub contributors: Vec<usize>,
}

fn same_sign(a: i64, b: i64) -> bool {
    (a >= 0) == (b >= 0)
}

/// Fuses time-sorted raw events into coarse typed spans with parameters.
///
/// `frame_w_px`/`frame_h_px` give the recording dimensions that ride along
/// on every parameter payload; event coordinates are clamped into the frame.
pub fn merge_events(
    events: &[RawEvent],
    policy: &MergePolicy,
    frame_w_px: u32,
    frame_h_px: u32,
) -> Vec<(TypedSpan, ActionParams)> {
    merge_events_traced(events, policy, frame_w_px, frame_h_px)
        .into_iter()
        .map(|t| (t.span, t.params))
        .collect()
}

pub(crate) fn merge_events_traced(
    events: &[RawEvent],
    policy: &MergePolicy,
    frame_w_px: u32,
    frame_h_px: u32,
) -> Vec<TracedSpan> {
    let mut protos: Vec<Proto> = Vec::new();
    let mut open: Option<Proto> = None;
    // (index, t, x, y) of a moveTo waiting for a dragTo.
    let mut pending_move: Option<(usize, i64, u32, u32)> = None;
    let mut last_pointer: Option<(u32, u32)> = None;

    let clamp = |x: u32, y: u32| {
        (
            x.min(frame_w_px.saturating_sub(1)),
            y.min(frame_h_px.saturating_sub(1)),
        )
    };

    for (i, ev) in events.iter().enumerate() {
        let t = ev.t_ms as i64;
        match ev.kind {
            ActionTypeFine::Write => {
                let ch = ev.text.clone().unwrap_or_default();
                let extend = matches!(
                    &open,
                    Some(p) if matches!(p.kind, ProtoKind::TypeText { .. })
                        && (t - p.last_ms) as u64 <= policy.keystroke_gap_ms
                );
                if extend {
                    let p = open.as_mut().unwrap();
                    if let ProtoKind::TypeText { text } = &mut p.kind {
                        text.push_str(&ch);
                    }
                    p.end_ms = t;
                    p.last_ms = t;
                    p.contributors.push(i);
                } else {
                    if let Some(p) = open.take() {
                        protos.push(p);
                    }
                    open = Some(Proto {
                        start_ms: t,
                        end_ms: t,
                        last_ms: t,
                        kind: ProtoKind::TypeText { text: ch },
                        contributors: vec![i],
                    });
                }
            }
            ActionTypeFine::Click
            | ActionTypeFine::DoubleClick
            | ActionTypeFine::TripleClick
            | ActionTypeFine::RightClick
            | ActionTypeFine::MiddleClick => {
                let (x, y) = clamp(ev.x_px.unwrap_or(0), ev.y_px.unwrap_or(0));
                last_pointer = Some((x, y));
                let (button, count, fusable) = match ev.kind {
                    ActionTypeFine::Click => {
                        (ev.button.unwrap_or(MouseButton::Left), 1u8, true)
                    }
                    ActionTypeFine::DoubleClick => (MouseButton::Left, 2, false),
                    ActionTypeFine::TripleClick => (MouseButton::Left, 3, false),
                    ActionTypeFine::RightClick => (MouseButton::Right, 1, false),
                    _ => (MouseButton::Middle, 1, false),
                };
                let extend = fusable
                    && matches!(
                        &open,
                        Some(p) if matches!(
                            p.kind,
                            ProtoKind::Click { x: px, y: py, button: pb, count: pc, fusable: true }
                                if px == x && py == y && pb == button && pc < 3
                        ) && (t - p.last_ms) as u64 <= policy.click_window_ms
                    );
                if extend {
                    let p = open.as_mut().unwrap();
                    if let ProtoKind::Click { count, .. } = &mut p.kind {
                        *count += 1;
                    }
                    p.end_ms = t;
                    p.last_ms = t;
                    p.contributors.push(i);
                } else {
                    if let Some(p) = open.take() {
                        protos.push(p);
                    }
                    open = Some(Proto {
                        start_ms: t,
                        end_ms: t,
                        last_ms: t,
                        kind: ProtoKind::Click { x, y, button, count, fusable },
                        contributors: vec![i],
                    });
                }
            }
            ActionTypeFine::Scroll | ActionTypeFine::Hscroll => {
                let horizontal = ev.kind == ActionTypeFine::Hscroll;
                let (edx, edy) = (i64::from(ev.dx.unwrap_or(0)), i64::from(ev.dy.unwrap_or(0)));
                let delta = if horizontal { edx } else { edy };
                let extend = matches!(
                    &open,
                    Some(p) if matches!(
                        p.kind,
                        ProtoKind::ScrollAcc { dx, dy, horizontal: ph }
                            if ph == horizontal && same_sign(if ph { dx } else { dy }, delta)
                    ) && (t - p.last_ms) as u64 <= policy.scroll_gap_ms
                );
                if extend {
                    let p = open.as_mut().unwrap();
                    if let ProtoKind::ScrollAcc { dx, dy, .. } = &mut p.kind {
                        *dx += edx;
                        *dy += edy;
                    }
                    p.end_ms = t;
                    p.last_ms = t;
                    p.contributors.push(i);
                } else {
                    if let Some(p) = open.take() {
                        protos.push(p);
                    }
                    open = Some(Proto {
                        start_ms: t,
                        end_ms: t,
                        last_ms: t,
                        kind: ProtoKind::ScrollAcc { dx: edx, dy: edy, horizontal },
                        contributors: vec![i],
                    });
                }
            }
            ActionTypeFine::Key | ActionTypeFine::Hotkey => {
                if let Some(p) = open.take() {
                    protos.push(p);
                }
                let keys: Vec<String> = match ev.kind {
                    // One press span per chord.
                    ActionTypeFine::Hotkey => ev
                        .key
                        .as_deref()
                        .unwrap_or("")
                        .split('+')
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect(),
                    _ => vec![ev.key.clone().unwrap_or_default()],
                };
                open = Some(Proto {
                    start_ms: t,
                    end_ms: t,
                    last_ms: t,
                    kind: ProtoKind::Press { keys },
                    contributors: vec![i],
                });
            }
            ActionTypeFine::MoveTo => {
                // Not actionable on its own; remembered only as a possible
                // drag start. Breaks any open fusion chain.
                if let Some(p) = open.take() {
                    protos.push(p);
                }
                let (x, y) = clamp(ev.x_px.unwrap_or(0), ev.y_px.unwrap_or(0));
                last_pointer = Some((x, y));
                pending_move = Some((i, t, x, y));
            }
            ActionTypeFine::DragTo => {
                if let Some(p) = open.take() {
                    protos.push(p);
                }
                let (x1, y1) = clamp(ev.x_px.unwrap_or(0), ev.y_px.unwrap_or(0));
                let fused = pending_move
                    .take()
                    .filter(|(_, mt, _, _)| (t - mt) as u64 <= policy.drag_fuse_ms);
                let (start_ms, x0, y0, mut contributors) = match fused {
                    Some((mi, mt, mx, my)) => (mt, mx, my, vec![mi]),
                    None => {
                        let (x0, y0) = last_pointer.unwrap_or((x1, y1));
                        (t, x0, y0, Vec::new())
                    }
                };
                contributors.push(i);
                last_pointer = Some((x1, y1));
                open = Some(Proto {
                    start_ms,
                    end_ms: t,
                    last_ms: t,
                    kind: ProtoKind::Drag { x0, y0, x1, y1 },
                    contributors,
                });
            }
        }
        // A consumed moveTo no longer pends; any other event older than the
        // fuse window invalidates it too.
        if let Some((_, mt, _, _)) = pending_move {
            if ev.kind != ActionTypeFine::MoveTo && (t - mt) as u64 > policy.drag_fuse_ms {
                pending_move = None;
            }
        }
    }
    if let Some(p) = open.take() {
        protos.push(p);
    }

    let min_span = policy.min_span_ms as i64;
    let mut spans: Vec<(i64, i64, ActionTypeCoarse, ParamPayload, Vec<usize>)> = protos
        .into_iter()
        .map(|p| {
            let (mut s, mut e) = (p.start_ms, p.end_ms);
            if e - s < min_span {
                let center = (s + e) / 2;
                s = center - min_span / 2;
                e = s + min_span;
                if s < 0 {
                    s = 0;
                    e = min_span;
                }
            }
            let payload = match p.kind {
                ProtoKind::Click { x, y, button, count, .. } => ParamPayload::Click {
                    x_px: x,
                    y_px: y,
                    button,
                    count: count.min(3),
                },
                ProtoKind::TypeText { text } => ParamPayload::Type { text },
                ProtoKind::ScrollAcc { dx, dy, horizontal } => ParamPayload::Scroll {
                    dx: dx.clamp(i64::from(i32::MIN), i64::from(i32::MAX)) as i32,
                    dy: dy.clamp(i64::from(i32::MIN), i64::from(i32::MAX)) as i32,
                    horizontal,
                },
                ProtoKind::Press { keys } => ParamPayload::Press { keys },
                ProtoKind::Drag { x0, y0, x1, y1 } => ParamPayload::Drag {
                    x0_px: x0,
                    y0_px: y0,
                    x1_px: x1,
                    y1_px: y1,
                },
            };
            (s, e, payload.action(), payload, p.contributors)
        })
        .collect();

    spans.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    // Same-coarse-type spans must not overlap. Padding can push neighbours
    // into each other; resolve by trimming the later span's start, keeping
    // the earlier span (whose event times it contains) intact.
    for action in ActionTypeCoarse::ALL {
        let mut prev_end: Option<i64> = None;
        for item in spans.iter_mut().filter(|s| s.2 == action) {
            if let Some(pe) = prev_end {
                if item.0 < pe {
                    item.0 = pe;
                    if item.1 <= item.0 {
                        item.1 = item.0 + 1;
                    }
                }
            }
            prev_end = Some(item.1);
        }
    }
    spans.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    spans
        .into_iter()
        .map(|(s, e, action, payload, contributors)| TracedSpan {
            span: TypedSpan::new(action, s as f64 / 1000.0, e as f64 / 1000.0),
            params: ActionParams::new(frame_w_px, frame_h_px, payload),
            contributors,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Clip preparation
// ---------------------------------------------------------------------------

/// A non-overlapping 10 s clip at 4 fps with its ground-truth spans in
/// clip-local time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    pub video_id: String,
    pub t_offset_s: f64,
    pub duration_s: f64,
    pub fps: f64,
    pub spans: Vec<TypedSpan>,
}

impl Clip {
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipPlan {
    pub clips: Vec<Clip>,
    /// Ground-truth spans that landed entirely outside every clip (the
    /// dropped final remainder), so data loss stays visible.
    pub dropped_spans: usize,
}

/// Tiles `[0, video_duration_s]` into consecutive 10 s clips, assigning each
/// span to every clip it intersects (clipped to clip-local bounds). The
/// final sub-10 s remainder is dropped.
pub fn make_clips(
    video_id: &str,
    video_duration_s: f64,
    spans: &[TypedSpan],
) -> Result<ClipPlan, LogconvError> {
    if video_duration_s < 0.0 {
        return Err(LogconvError::NegativeDuration(video_duration_s));
    }
    let n_clips = (video_duration_s / CLIP_SECONDS).floor() as usize;
    let mut clips = Vec::with_capacity(n_clips);
    let mut assigned = vec![false; spans.len()];
    for i in 0..n_clips {
        let lo = i as f64 * CLIP_SECONDS;
        let hi = lo + CLIP_SECONDS;
        let mut local: Vec<TypedSpan> = Vec::new();
        for (j, span) in spans.iter().enumerate() {
            if let Some(cut) = span.intersect(lo, hi) {
                assigned[j] = true;
                local.push(cut.shifted(-lo));
            }
        }
        local.sort_by(TypedSpan::cmp_key);
        clips.push(Clip {
            clip_id: format!("{video_id}_clip{i:04}"),
            video_id: video_id.to_string(),
            t_offset_s: lo,
            duration_s: CLIP_SECONDS,
            fps: CLIP_FPS,
            spans: local,
        });
    }
    Ok(ClipPlan {
        clips,
        dropped_spans: assigned.iter().filter(|a| !**a).count(),
    })
}
