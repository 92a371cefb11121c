//! Oracle implementations that replay ground truth from converted logs.
//! They close the loop for end-to-end verification: log conversion feeds
//! them, and the evaluation harness must score them perfectly against the
//! same logs.

use super::{
    ActionParameterizer, ClipInput, DetectorOutput, EventDetector, IdmError, ParamOutput,
    SegmentInput,
};
use crate::types::{ActionParams, ActionTypeCoarse, TypedSpan};

/// Replays ground-truth spans (video-global time), localized to each clip.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    gt: Vec<TypedSpan>,
}

impl OracleDetector {
    pub fn new(mut gt: Vec<TypedSpan>) -> OracleDetector {
        gt.sort_by(TypedSpan::cmp_key);
        OracleDetector { gt }
    }
}

impl EventDetector for OracleDetector {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn detect(&self, clip: &ClipInput) -> Result<DetectorOutput, IdmError> {
        let lo = clip.clip.t_offset_s;
        let hi = lo + clip.clip.duration_s;
        let local: Vec<TypedSpan> = self
            .gt
            .iter()
            .filter_map(|s| s.intersect(lo, hi))
            .map(|s| s.shifted(-lo))
            .collect();
        DetectorOutput::new(local, clip.clip.duration_s)
    }
}

/// Replays ground-truth parameters, keyed by best span overlap.
#[derive(Debug, Clone)]
pub struct OracleParameterizer {
    gt: Vec<(TypedSpan, ActionParams)>,
}

impl OracleParameterizer {
    pub fn new(gt: Vec<(TypedSpan, ActionParams)>) -> OracleParameterizer {
        OracleParameterizer { gt }
    }
}

impl ActionParameterizer for OracleParameterizer {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn parameterize(
        &self,
        segment: &SegmentInput,
        hint: Option<ActionTypeCoarse>,
    ) -> Result<ParamOutput, IdmError> {
        let best = self
            .gt
            .iter()
            .filter(|(s, _)| s.overlap_len(&segment.span) > 0.0)
            .max_by(|a, b| {
                a.0.overlap_len(&segment.span)
                    .total_cmp(&b.0.overlap_len(&segment.span))
            })
            .ok_or(IdmError::OracleMiss {
                t_start_s: segment.span.t_start_s,
                t_end_s: segment.span.t_end_s,
            })?;
        let action = best.1.action();
        Ok(ParamOutput {
            action,
            params: best.1.clone(),
            confidence: 1.0,
            hint_disagreement: hint.is_some_and(|h| h != action),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logconv::Clip;
    use crate::types::{MouseButton, ParamPayload};

    fn clip_at(offset: f64) -> ClipInput {
        ClipInput {
            clip: Clip {
                clip_id: "v_clip0000".into(),
                video_id: "v".into(),
                t_offset_s: offset,
                duration_s: 10.0,
                fps: 4.0,
                spans: vec![],
            },
            frames: vec![],
        }
    }

    #[test]
    fn oracle_detector_replays_clip_local_gt() {
        let gt = vec![
            TypedSpan::new(ActionTypeCoarse::Click, 1.5, 2.0),
            TypedSpan::new(ActionTypeCoarse::Type, 3.5, 5.5),
            TypedSpan::new(ActionTypeCoarse::Click, 12.0, 12.4),
        ];
        let det = OracleDetector::new(gt);
        let out = det.detect(&clip_at(0.0)).unwrap();
        assert_eq!(
            out.spans,
            vec![
                TypedSpan::new(ActionTypeCoarse::Click, 1.5, 2.0),
                TypedSpan::new(ActionTypeCoarse::Type, 3.5, 5.5),
            ]
        );
        let out = det.detect(&clip_at(10.0)).unwrap();
        assert_eq!(out.spans, vec![TypedSpan::new(ActionTypeCoarse::Click, 2.0, 2.4)]);
    }

    #[test]
    fn oracle_detector_with_empty_gt_emits_nothing() {
        let det = OracleDetector::new(vec![]);
        assert!(det.detect(&clip_at(0.0)).unwrap().spans.is_empty());
    }

    #[test]
    fn oracle_parameterizer_replays_params() {
        let span = TypedSpan::new(ActionTypeCoarse::Click, 4.0, 4.3);
        let params = ActionParams::new(
            1920,
            1080,
            ParamPayload::Click { x_px: 340, y_px: 220, button: MouseButton::Left, count: 1 },
        );
        let p = OracleParameterizer::new(vec![(span, params.clone())]);
        let segment = SegmentInput {
            video_id: "v".into(),
            span,
            plan: crate::sampling::plan_samples(&span).unwrap(),
            frames: vec![],
        };
        let out = p.parameterize(&segment, Some(ActionTypeCoarse::Click)).unwrap();
        assert_eq!(out.params, params);
        assert_eq!(out.confidence, 1.0);
        assert!(!out.hint_disagreement);

        let miss = SegmentInput {
            video_id: "v".into(),
            span: TypedSpan::new(ActionTypeCoarse::Click, 8.0, 8.2),
            plan: crate::sampling::plan_samples(&span).unwrap(),
            frames: vec![],
        };
        assert!(matches!(
            p.parameterize(&miss, None),
            Err(IdmError::OracleMiss { .. })
        ));
    }
}
