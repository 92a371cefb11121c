//! Structural validation of assembled trajectories. Violations are data,
//! not failures: callers decide whether to abort or report.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::Trajectory;

/// One failed invariant, with the step it occurred at when applicable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Index of the offending step; `None` for trajectory-level violations.
    pub step: Option<usize>,
    pub invariant: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(i) => write!(f, "step {i}: {} ({})", self.invariant, self.detail),
            None => write!(f, "{} ({})", self.invariant, self.detail),
        }
    }
}

fn violation(step: Option<usize>, invariant: &'static str, detail: String) -> Violation {
    Violation { step, invariant, detail }
}

/// Checks every core-type invariant over a trajectory. Returns an empty list
/// exactly when the trajectory is well formed.
pub fn validate_trajectory(t: &Trajectory) -> Vec<Violation> {
    let mut out = Vec::new();
    if t.video_id.is_empty() {
        out.push(violation(None, "video-id", "video_id is empty".into()));
    }
    if t.steps.is_empty() {
        out.push(violation(None, "step-count", "trajectory has no steps (K >= 1 required)".into()));
    }
    let mut prev_start: Option<f64> = None;
    for (i, step) in t.steps.iter().enumerate() {
        let idx = Some(i);
        if step.span.t_start_s < 0.0 {
            out.push(violation(idx, "span-bounds", format!("t_start {} < 0", step.span.t_start_s)));
        }
        if step.span.t_start_s >= step.span.t_end_s {
            out.push(violation(
                idx,
                "span-order",
                format!("t_start {} >= t_end {}", step.span.t_start_s, step.span.t_end_s),
            ));
        }
        if step.action != step.span.action {
            out.push(violation(
                idx,
                "action-span-mismatch",
                format!("step action {} vs span action {}", step.action, step.span.action),
            ));
        }
        if step.action != step.params.action() {
            out.push(violation(
                idx,
                "action-params-mismatch",
                format!("step action {} vs params variant {}", step.action, step.params.action()),
            ));
        }
        if let Err(e) = step.params.check() {
            out.push(violation(idx, "params", e));
        }
        if step.keyframe.timestamp_s > step.span.t_start_s {
            out.push(violation(
                idx,
                "keyframe-after-start",
                format!(
                    "keyframe at {} is after span start {}",
                    step.keyframe.timestamp_s, step.span.t_start_s
                ),
            ));
        }
        if step.keyframe.video_id != t.video_id {
            out.push(violation(
                idx,
                "keyframe-video",
                format!("keyframe video {} vs trajectory {}", step.keyframe.video_id, t.video_id),
            ));
        }
        if let Some(prev) = prev_start {
            if step.span.t_start_s <= prev {
                out.push(violation(
                    idx,
                    "non-increasing-start",
                    format!("start {} does not exceed previous {}", step.span.t_start_s, prev),
                ));
            }
        }
        prev_start = Some(step.span.t_start_s);
    }
    out
}
