//! Shared domain types: the action taxonomy, raw input events, typed spans,
//! action parameters, and assembled trajectory steps.
//!
//! All types here are immutable values and safe to share across workers.
//! Timestamps are integer milliseconds internally (`t_ms` on events) and
//! seconds with three decimals at I/O boundaries (span and frame times).

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Serialize/deserialize a seconds value snapped to the millisecond grid
/// (three decimals).
pub(crate) mod sec3 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn round3(v: f64) -> f64 {
        (v * 1000.0).round() / 1000.0
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(round3(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(round3(f64::deserialize(d)?))
    }
}

// ---------------------------------------------------------------------------
// Action taxonomy
// ---------------------------------------------------------------------------

/// The 12 log-level action labels. Parsing any other string fails; see
/// [`ActionTypeFine::from_alias`] for ingesting corpora that use the
/// `left_click`/`double_click` naming scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionTypeFine {
    #[serde(rename = "click")]
    Click,
    #[serde(rename = "key")]
    Key,
    #[serde(rename = "write")]
    Write,
    #[serde(rename = "scroll")]
    Scroll,
    #[serde(rename = "moveTo")]
    MoveTo,
    #[serde(rename = "dragTo")]
    DragTo,
    #[serde(rename = "doubleClick")]
    DoubleClick,
    #[serde(rename = "rightClick")]
    RightClick,
    #[serde(rename = "hscroll")]
    Hscroll,
    #[serde(rename = "hotkey")]
    Hotkey,
    #[serde(rename = "tripleClick")]
    TripleClick,
    #[serde(rename = "middleClick")]
    MiddleClick,
}

impl ActionTypeFine {
    pub const ALL: [ActionTypeFine; 12] = [
        ActionTypeFine::Click,
        ActionTypeFine::Key,
        ActionTypeFine::Write,
        ActionTypeFine::Scroll,
        ActionTypeFine::MoveTo,
        ActionTypeFine::DragTo,
        ActionTypeFine::DoubleClick,
        ActionTypeFine::RightClick,
        ActionTypeFine::Hscroll,
        ActionTypeFine::Hotkey,
        ActionTypeFine::TripleClick,
        ActionTypeFine::MiddleClick,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ActionTypeFine::Click => "click",
            ActionTypeFine::Key => "key",
            ActionTypeFine::Write => "write",
            ActionTypeFine::Scroll => "scroll",
            ActionTypeFine::MoveTo => "moveTo",
            ActionTypeFine::DragTo => "dragTo",
            ActionTypeFine::DoubleClick => "doubleClick",
            ActionTypeFine::RightClick => "rightClick",
            ActionTypeFine::Hscroll => "hscroll",
            ActionTypeFine::Hotkey => "hotkey",
            ActionTypeFine::TripleClick => "tripleClick",
            ActionTypeFine::MiddleClick => "middleClick",
        }
    }

    /// Accepts the canonical labels plus the snake_case aliases used by some
    /// recorder exports (`left_click` → `click`, `double_click` →
    /// `doubleClick`, `drag` → `dragTo`, `mouse_move` → `moveTo`, ...).
    pub fn from_alias(s: &str) -> Option<ActionTypeFine> {
        if let Ok(v) = s.parse() {
            return Some(v);
        }
        Some(match s {
            "left_click" => ActionTypeFine::Click,
            "double_click" => ActionTypeFine::DoubleClick,
            "triple_click" => ActionTypeFine::TripleClick,
            "right_click" => ActionTypeFine::RightClick,
            "middle_click" => ActionTypeFine::MiddleClick,
            "mouse_move" => ActionTypeFine::MoveTo,
            "drag" => ActionTypeFine::DragTo,
            "type" => ActionTypeFine::Write,
            _ => return None,
        })
    }

    /// True when events of this kind carry pixel coordinates.
    pub fn is_pointer_bearing(self) -> bool {
        matches!(
            self,
            ActionTypeFine::Click
                | ActionTypeFine::MoveTo
                | ActionTypeFine::DragTo
                | ActionTypeFine::DoubleClick
                | ActionTypeFine::RightClick
                | ActionTypeFine::TripleClick
                | ActionTypeFine::MiddleClick
        )
    }
}

impl fmt::Display for ActionTypeFine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ActionTypeFine {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionTypeFine::ALL
            .iter()
            .copied()
            .find(|v| v.label() == s)
            .ok_or_else(|| ParseLabelError {
                label: s.to_string(),
                taxonomy: "fine",
            })
    }
}

/// The 5 coarse action types used for detection and evaluation.
///
/// The variant order is alphabetical, so the derived `Ord` matches label
/// order, which is what span tie-breaking relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionTypeCoarse {
    Click,
    Drag,
    Press,
    Scroll,
    Type,
}

impl ActionTypeCoarse {
    pub const ALL: [ActionTypeCoarse; 5] = [
        ActionTypeCoarse::Click,
        ActionTypeCoarse::Drag,
        ActionTypeCoarse::Press,
        ActionTypeCoarse::Scroll,
        ActionTypeCoarse::Type,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ActionTypeCoarse::Click => "click",
            ActionTypeCoarse::Drag => "drag",
            ActionTypeCoarse::Press => "press",
            ActionTypeCoarse::Scroll => "scroll",
            ActionTypeCoarse::Type => "type",
        }
    }
}

impl fmt::Display for ActionTypeCoarse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ActionTypeCoarse {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionTypeCoarse::ALL
            .iter()
            .copied()
            .find(|v| v.label() == s)
            .ok_or_else(|| ParseLabelError {
                label: s.to_string(),
                taxonomy: "coarse",
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {taxonomy} action label {label:?}")]
pub struct ParseLabelError {
    pub label: String,
    pub taxonomy: &'static str,
}

/// Total mapping from the 12 fine labels onto the 5 coarse types.
///
/// `moveTo` maps to `drag` because it only survives merging when fused into a
/// drag start point; standalone moves are dropped before coarse spans exist.
pub fn coarse_of(fine: ActionTypeFine) -> ActionTypeCoarse {
    match fine {
        ActionTypeFine::Click
        | ActionTypeFine::DoubleClick
        | ActionTypeFine::RightClick
        | ActionTypeFine::TripleClick
        | ActionTypeFine::MiddleClick => ActionTypeCoarse::Click,
        ActionTypeFine::MoveTo | ActionTypeFine::DragTo => ActionTypeCoarse::Drag,
        ActionTypeFine::Key | ActionTypeFine::Hotkey => ActionTypeCoarse::Press,
        ActionTypeFine::Scroll | ActionTypeFine::Hscroll => ActionTypeCoarse::Scroll,
        ActionTypeFine::Write => ActionTypeCoarse::Type,
    }
}

// ---------------------------------------------------------------------------
// Events and spans
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MouseButton {
    Left,
    Right,
    Middle,
}

impl MouseButton {
    pub fn label(self) -> &'static str {
        match self {
            MouseButton::Left => "left",
            MouseButton::Right => "right",
            MouseButton::Middle => "middle",
        }
    }
}

impl FromStr for MouseButton {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(MouseButton::Left),
            "right" => Ok(MouseButton::Right),
            "middle" => Ok(MouseButton::Middle),
            _ => Err(ParseLabelError {
                label: s.to_string(),
                taxonomy: "button",
            }),
        }
    }
}

/// One timestamped low-level input event from a demonstration log.
///
/// Field presence is constrained by `kind`: pointer-bearing kinds carry
/// `x_px`/`y_px`, `write` carries `text`, `key`/`hotkey` carry `key`, and
/// `scroll`/`hscroll` carry `dy`/`dx`. [`RawEvent::check`] enforces this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub t_ms: u64,
    pub kind: ActionTypeFine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_px: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_px: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dy: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub button: Option<MouseButton>,
}

impl RawEvent {
    /// Validates the kind/field presence invariants. Returns the first
    /// violation as a message.
    pub fn check(&self) -> Result<(), String> {
        let kind = self.kind;
        let coords = self.x_px.is_some() && self.y_px.is_some();
        if kind.is_pointer_bearing() && !coords {
            return Err(format!("{kind} event requires x_px and y_px"));
        }
        if !kind.is_pointer_bearing() && (self.x_px.is_some() || self.y_px.is_some()) {
            return Err(format!("{kind} event must not carry coordinates"));
        }
        match kind {
            ActionTypeFine::Write => {
                if self.text.as_deref().is_none_or(str::is_empty) {
                    return Err("write event requires non-empty text".into());
                }
            }
            _ if self.text.is_some() => {
                return Err(format!("{kind} event must not carry text"));
            }
            _ => {}
        }
        match kind {
            ActionTypeFine::Key | ActionTypeFine::Hotkey => {
                if self.key.as_deref().is_none_or(str::is_empty) {
                    return Err(format!("{kind} event requires a key name"));
                }
            }
            _ if self.key.is_some() => {
                return Err(format!("{kind} event must not carry a key name"));
            }
            _ => {}
        }
        match kind {
            ActionTypeFine::Scroll => {
                if self.dy.is_none() {
                    return Err("scroll event requires dy".into());
                }
            }
            ActionTypeFine::Hscroll => {
                if self.dx.is_none() {
                    return Err("hscroll event requires dx".into());
                }
            }
            _ if self.dx.is_some() || self.dy.is_some() => {
                return Err(format!("{kind} event must not carry scroll deltas"));
            }
            _ => {}
        }
        if self.button.is_some() && kind != ActionTypeFine::Click {
            return Err(format!("{kind} event must not carry a button"));
        }
        Ok(())
    }
}

/// An action-typed temporal interval in seconds: the unit of detection,
/// supervision, and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypedSpan {
    pub action: ActionTypeCoarse,
    #[serde(with = "sec3")]
    pub t_start_s: f64,
    #[serde(with = "sec3")]
    pub t_end_s: f64,
}

impl TypedSpan {
    pub fn new(action: ActionTypeCoarse, t_start_s: f64, t_end_s: f64) -> TypedSpan {
        TypedSpan {
            action,
            t_start_s: sec3::round3(t_start_s),
            t_end_s: sec3::round3(t_end_s),
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.t_end_s - self.t_start_s
    }

    /// Positive-length intersection with `[lo, hi]`, if any.
    pub fn intersect(&self, lo: f64, hi: f64) -> Option<TypedSpan> {
        let s = self.t_start_s.max(lo);
        let e = self.t_end_s.min(hi);
        (s < e).then(|| TypedSpan::new(self.action, s, e))
    }

    /// Overlap length with another span (zero when disjoint).
    pub fn overlap_len(&self, other: &TypedSpan) -> f64 {
        (self.t_end_s.min(other.t_end_s) - self.t_start_s.max(other.t_start_s)).max(0.0)
    }

    /// Shifts the span by `offset_s` seconds.
    pub fn shifted(&self, offset_s: f64) -> TypedSpan {
        TypedSpan::new(self.action, self.t_start_s + offset_s, self.t_end_s + offset_s)
    }

    /// Canonical ordering: (t_start, t_end, action label).
    pub fn cmp_key(&self, other: &TypedSpan) -> std::cmp::Ordering {
        self.t_start_s
            .total_cmp(&other.t_start_s)
            .then(self.t_end_s.total_cmp(&other.t_end_s))
            .then(self.action.cmp(&other.action))
    }
}

// ---------------------------------------------------------------------------
// Action parameters
// ---------------------------------------------------------------------------

/// The parameter payload per action type. Coordinates are stored in pixels;
/// the frame dimensions ride along so normalized coordinates can be derived
/// on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionParams {
    pub frame_w_px: u32,
    pub frame_h_px: u32,
    #[serde(flatten)]
    pub payload: ParamPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamPayload {
    Click {
        x_px: u32,
        y_px: u32,
        button: MouseButton,
        count: u8,
    },
    Drag {
        x0_px: u32,
        y0_px: u32,
        x1_px: u32,
        y1_px: u32,
    },
    Scroll {
        dx: i32,
        dy: i32,
        horizontal: bool,
    },
    Press {
        keys: Vec<String>,
    },
    Type {
        text: String,
    },
}

impl ParamPayload {
    pub fn action(&self) -> ActionTypeCoarse {
        match self {
            ParamPayload::Click { .. } => ActionTypeCoarse::Click,
            ParamPayload::Drag { .. } => ActionTypeCoarse::Drag,
            ParamPayload::Scroll { .. } => ActionTypeCoarse::Scroll,
            ParamPayload::Press { .. } => ActionTypeCoarse::Press,
            ParamPayload::Type { .. } => ActionTypeCoarse::Type,
        }
    }
}

impl ActionParams {
    pub fn new(frame_w_px: u32, frame_h_px: u32, payload: ParamPayload) -> ActionParams {
        ActionParams {
            frame_w_px,
            frame_h_px,
            payload,
        }
    }

    pub fn action(&self) -> ActionTypeCoarse {
        self.payload.action()
    }

    /// Validates coordinate bounds and payload non-emptiness.
    pub fn check(&self) -> Result<(), String> {
        if self.frame_w_px == 0 || self.frame_h_px == 0 {
            return Err("frame dimensions must be positive".into());
        }
        let in_frame = |x: u32, y: u32| x < self.frame_w_px && y < self.frame_h_px;
        match &self.payload {
            ParamPayload::Click { x_px, y_px, count, .. } => {
                if !in_frame(*x_px, *y_px) {
                    return Err(format!("click point ({x_px}, {y_px}) outside frame"));
                }
                if !(1..=3).contains(count) {
                    return Err(format!("click count {count} outside 1..=3"));
                }
            }
            ParamPayload::Drag { x0_px, y0_px, x1_px, y1_px } => {
                if !in_frame(*x0_px, *y0_px) || !in_frame(*x1_px, *y1_px) {
                    return Err("drag endpoint outside frame".into());
                }
            }
            ParamPayload::Scroll { .. } => {}
            ParamPayload::Press { keys } => {
                if keys.is_empty() {
                    return Err("press requires at least one key".into());
                }
            }
            ParamPayload::Type { text } => {
                if text.is_empty() {
                    return Err("type requires non-empty text".into());
                }
            }
        }
        Ok(())
    }

    /// Click/drag coordinates normalized to `[0, 1)` by the frame size.
    pub fn normalized_points(&self) -> Vec<(f64, f64)> {
        let w = f64::from(self.frame_w_px);
        let h = f64::from(self.frame_h_px);
        match &self.payload {
            ParamPayload::Click { x_px, y_px, .. } => {
                vec![(f64::from(*x_px) / w, f64::from(*y_px) / h)]
            }
            ParamPayload::Drag { x0_px, y0_px, x1_px, y1_px } => vec![
                (f64::from(*x0_px) / w, f64::from(*y0_px) / h),
                (f64::from(*x1_px) / w, f64::from(*y1_px) / h),
            ],
            _ => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectory assembly types
// ---------------------------------------------------------------------------

/// A keyframe reference: which video, when, and where the raster lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub video_id: String,
    #[serde(with = "sec3")]
    pub timestamp_s: f64,
    pub path: PathBuf,
}

/// The two-field inner monologue attached to each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monologue {
    pub action_description: String,
    pub thought: String,
}

/// One assembled step: keyframe, monologue, coarse action, parameters, and
/// the detected span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReActStep {
    pub keyframe: FrameRef,
    pub monologue: Monologue,
    pub action: ActionTypeCoarse,
    pub params: ActionParams,
    pub span: TypedSpan,
}

/// An ordered sequence of steps mined from one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub video_id: String,
    pub steps: Vec<ReActStep>,
}

// ---------------------------------------------------------------------------
// Catalog metadata
// ---------------------------------------------------------------------------

/// Catalog-level metadata consumed by the quality and classification
/// predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub title: String,
    pub description: String,
    pub channel_id: String,
    pub tags: Vec<String>,
    pub width_px: u32,
    pub height_px: u32,
    pub published_date: chrono::NaiveDate,
    pub has_captions: bool,
    pub language: String,
    pub overlay_fraction: f64,
    pub is_screen_recording: bool,
    pub is_stable: bool,
    pub duration_s: f64,
}

impl VideoMeta {
    pub fn check(&self) -> Result<(), String> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err("video dimensions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.overlay_fraction) {
            return Err(format!(
                "overlay_fraction {} outside [0, 1]",
                self.overlay_fraction
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Frame access
// ---------------------------------------------------------------------------

/// A decoded frame with its timestamp. `path` is populated when the frame is
/// backed by a file on disk.
#[derive(Debug, Clone)]
pub struct Frame {
    pub timestamp_s: f64,
    pub image: image::GrayImage,
    pub path: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame index {index} out of range (frame count {count})")]
    OutOfRange { index: usize, count: usize },
    #[error("timestamp {t_s:.3}s out of range (duration {duration_s:.3}s)")]
    TimeOutOfRange { t_s: f64, duration_s: f64 },
    #[error("frame read failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame decode failed: {0}")]
    Decode(#[from] image::ImageError),
    #[error("decoder protocol error: {0}")]
    Protocol(String),
}

/// Abstract indexed frame access. Implementations must return strictly
/// increasing timestamps and tolerate concurrent reads of distinct frames.
pub trait FrameSource: Sync {
    fn frame_count(&self) -> usize;
    fn fps(&self) -> f64;
    fn frame_at(&self, index: usize) -> Result<Frame, FrameError>;

    fn duration_s(&self) -> f64 {
        self.frame_count() as f64 / self.fps()
    }

    /// Index of the last frame at or before `t_s` under the source's fps
    /// grid, clamped to the valid range.
    fn index_at(&self, t_s: f64) -> Result<usize, FrameError> {
        if t_s < 0.0 || t_s > self.duration_s() {
            return Err(FrameError::TimeOutOfRange {
                t_s,
                duration_s: self.duration_s(),
            });
        }
        let idx = (t_s * self.fps()).floor() as usize;
        Ok(idx.min(self.frame_count().saturating_sub(1)))
    }

    /// Frame at the grid position covering `t_s`.
    fn frame_at_time(&self, t_s: f64) -> Result<Frame, FrameError> {
        self.frame_at(self.index_at(t_s)?)
    }
}
