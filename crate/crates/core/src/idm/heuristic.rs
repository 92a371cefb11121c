//! Pixel-difference baselines: a detector that turns bursts of frame change
//! into typed spans, and a parameterizer that localizes the change. These
//! are desk-scale stand-ins for learned models, deterministic and
//! dependency-free, with no claim of parity.

use image::GrayImage;

use super::{
    ActionParameterizer, ClipInput, DetectorOutput, EventDetector, IdmError, ParamOutput,
    SegmentInput,
};
use crate::types::{ActionParams, ActionTypeCoarse, Frame, MouseButton, ParamPayload, TypedSpan};

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicConfig {
    /// Mean absolute pixel difference (normalized to [0, 1]) above which a
    /// frame transition counts as active.
    pub energy_threshold: f64,
    /// Per-pixel |difference| counted as changed for localization.
    pub pixel_threshold: u8,
    /// Minimum number of active transitions in an emitted burst.
    pub min_burst_frames: usize,
    /// Changed-area fraction at or above which a burst reads as a scroll.
    pub scroll_area_fraction: f64,
    /// Burst duration at or above which a localized burst reads as typing.
    pub type_min_duration_s: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            energy_threshold: 0.01,
            pixel_threshold: 25,
            min_burst_frames: 1,
            scroll_area_fraction: 0.5,
            type_min_duration_s: 1.0,
        }
    }
}

/// Per-transition change statistics.
#[derive(Debug, Clone, Copy)]
struct Diff {
    energy: f64,
    /// Bounding box of changed pixels (x0, y0, x1, y1), inclusive.
    bbox: Option<(u32, u32, u32, u32)>,
    /// Magnitude-weighted centroid of changed pixels.
    centroid: (f64, f64),
}

fn diff_stats(a: &GrayImage, b: &GrayImage, pixel_threshold: u8) -> Diff {
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0f64;
    let mut bbox: Option<(u32, u32, u32, u32)> = None;
    let (mut cx, mut cy, mut mass) = (0.0f64, 0.0f64, 0.0f64);
    for y in 0..h {
        for x in 0..w {
            let d = (i32::from(a.get_pixel(x, y)[0]) - i32::from(b.get_pixel(x, y)[0])).abs();
            total += f64::from(d);
            if d > i32::from(pixel_threshold) {
                bbox = Some(match bbox {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
                let m = f64::from(d);
                cx += f64::from(x) * m;
                cy += f64::from(y) * m;
                mass += m;
            }
        }
    }
    let energy = total / (f64::from(w) * f64::from(h) * 255.0);
    let centroid = if mass > 0.0 {
        (cx / mass, cy / mass)
    } else {
        (f64::from(w) / 2.0, f64::from(h) / 2.0)
    };
    Diff { energy, bbox, centroid }
}

fn bbox_area_fraction(bbox: Option<(u32, u32, u32, u32)>, w: u32, h: u32) -> f64 {
    match bbox {
        None => 0.0,
        Some((x0, y0, x1, y1)) => {
            f64::from(x1 - x0 + 1) * f64::from(y1 - y0 + 1) / (f64::from(w) * f64::from(h))
        }
    }
}

fn union_bbox(diffs: &[Diff]) -> Option<(u32, u32, u32, u32)> {
    diffs.iter().filter_map(|d| d.bbox).reduce(|a, b| {
        (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3))
    })
}

fn classify(area_fraction: f64, duration_s: f64, cfg: &HeuristicConfig) -> ActionTypeCoarse {
    if area_fraction >= cfg.scroll_area_fraction {
        ActionTypeCoarse::Scroll
    } else if duration_s >= cfg.type_min_duration_s {
        ActionTypeCoarse::Type
    } else {
        ActionTypeCoarse::Click
    }
}

fn transitions(frames: &[Frame], cfg: &HeuristicConfig) -> Vec<Diff> {
    frames
        .windows(2)
        .map(|w| diff_stats(&w[0].image, &w[1].image, cfg.pixel_threshold))
        .collect()
}

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------

/// Emits one typed span per maximal burst of active frame transitions. By
/// construction, every emitted span contains at least one transition whose
/// difference energy clears the threshold.
#[derive(Debug, Clone, Default)]
pub struct HeuristicDiffDetector {
    pub config: HeuristicConfig,
}

impl HeuristicDiffDetector {
    pub fn new(config: HeuristicConfig) -> Self {
        HeuristicDiffDetector { config }
    }
}

impl EventDetector for HeuristicDiffDetector {
    fn name(&self) -> &'static str {
        "diff"
    }

    fn detect(&self, clip: &ClipInput) -> Result<DetectorOutput, IdmError> {
        let cfg = &self.config;
        if clip.frames.len() < 2 {
            return DetectorOutput::new(vec![], clip.clip.duration_s);
        }
        let diffs = transitions(&clip.frames, cfg);
        let fps = clip.clip.fps;
        let (w, h) = (clip.frames[0].image.width(), clip.frames[0].image.height());

        let mut spans = Vec::new();
        let mut i = 0;
        while i < diffs.len() {
            if diffs[i].energy > cfg.energy_threshold {
                let start = i;
                while i < diffs.len() && diffs[i].energy > cfg.energy_threshold {
                    i += 1;
                }
                let burst = &diffs[start..i];
                if burst.len() >= cfg.min_burst_frames {
                    // Transition k sits between frames k and k+1.
                    let t_start = start as f64 / fps;
                    let t_end = ((i - 1) as f64 + 1.0) / fps;
                    let t_end = t_end.min(clip.clip.duration_s);
                    let area = bbox_area_fraction(union_bbox(burst), w, h);
                    let action = classify(area, t_end - t_start, cfg);
                    spans.push(TypedSpan::new(action, t_start, t_end));
                }
            } else {
                i += 1;
            }
        }
        DetectorOutput::new(spans, clip.clip.duration_s)
    }
}

// ---------------------------------------------------------------------------
// Parameterizer
// ---------------------------------------------------------------------------

/// Localizes the dominant pixel change in a sampled segment. Text content
/// and key identity are not recoverable without OCR, so `type` emits a
/// placeholder transcript and `press` placeholder keys, at low confidence.
#[derive(Debug, Clone, Default)]
pub struct HeuristicParameterizer {
    pub config: HeuristicConfig,
}

impl HeuristicParameterizer {
    pub fn new(config: HeuristicConfig) -> Self {
        HeuristicParameterizer { config }
    }
}

pub(crate) const PLACEHOLDER_TEXT: &str = "<unrecognized>";
pub(crate) const PLACEHOLDER_KEY: &str = "unknown";

/// Offset minimizing mean squared distance between 1-D profiles, searched
/// over a small window; positive means `b` looks like `a` shifted down.
/// Near-ties (periodic content) resolve to the smallest magnitude.
fn best_shift(a: &[f64], b: &[f64], max_shift: i64) -> i64 {
    let n = a.len() as i64;
    let mut best = (f64::INFINITY, 0i64);
    for k in -max_shift..=max_shift {
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..n {
            let j = i + k;
            if j >= 0 && j < n {
                let d = a[i as usize] - b[j as usize];
                sum += d * d;
                count += 1.0;
            }
        }
        if count > 0.0 {
            let mse = sum / count;
            if mse + 1e-9 < best.0 || (mse <= best.0 + 1e-9 && k.abs() < best.1.abs()) {
                best = (mse.min(best.0), k);
            }
        }
    }
    best.1
}

fn row_means(img: &GrayImage) -> Vec<f64> {
    (0..img.height())
        .map(|y| {
            (0..img.width()).map(|x| f64::from(img.get_pixel(x, y)[0])).sum::<f64>()
                / f64::from(img.width())
        })
        .collect()
}

fn col_means(img: &GrayImage) -> Vec<f64> {
    (0..img.width())
        .map(|x| {
            (0..img.height()).map(|y| f64::from(img.get_pixel(x, y)[0])).sum::<f64>()
                / f64::from(img.height())
        })
        .collect()
}

impl HeuristicParameterizer {
    fn confidence(&self, peak_energy: f64) -> f64 {
        (peak_energy / (self.config.energy_threshold * 5.0)).clamp(0.05, 0.95)
    }

    fn scroll_payload(&self, first: &GrayImage, last: &GrayImage) -> ParamPayload {
        let max_v = i64::from(first.height() / 2).min(40);
        let max_h = i64::from(first.width() / 2).min(40);
        let v = best_shift(&row_means(first), &row_means(last), max_v);
        let h = best_shift(&col_means(first), &col_means(last), max_h);
        if h.abs() > v.abs() {
            // Content shifted right means the user scrolled left.
            ParamPayload::Scroll { dx: -h as i32, dy: 0, horizontal: true }
        } else {
            // Content shifted down means the user scrolled up.
            ParamPayload::Scroll { dx: 0, dy: v as i32, horizontal: false }
        }
    }
}

impl ActionParameterizer for HeuristicParameterizer {
    fn name(&self) -> &'static str {
        "heuristic"
    }

    fn parameterize(
        &self,
        segment: &SegmentInput,
        hint: Option<ActionTypeCoarse>,
    ) -> Result<ParamOutput, IdmError> {
        let cfg = &self.config;
        let frames = &segment.frames;
        if frames.is_empty() {
            return Err(IdmError::NoEvidence);
        }
        let (w, h) = (frames[0].image.width(), frames[0].image.height());
        let diffs = transitions(frames, cfg);
        let active: Vec<(usize, Diff)> = diffs
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, d)| d.energy > cfg.energy_threshold)
            .collect();

        let center = |img: &GrayImage| (img.width() / 2, img.height() / 2);
        let point = |c: (f64, f64)| {
            (
                (c.0.round() as u32).min(w.saturating_sub(1)),
                (c.1.round() as u32).min(h.saturating_sub(1)),
            )
        };

        if active.is_empty() {
            // No pixel evidence: keep the hint but flag it, or fail when
            // there is nothing to go on at all.
            let Some(hinted) = hint else {
                return Err(IdmError::NoEvidence);
            };
            let (cx, cy) = center(&frames[0].image);
            let payload = match hinted {
                ActionTypeCoarse::Click => ParamPayload::Click {
                    x_px: cx,
                    y_px: cy,
                    button: MouseButton::Left,
                    count: 1,
                },
                ActionTypeCoarse::Drag => {
                    ParamPayload::Drag { x0_px: cx, y0_px: cy, x1_px: cx, y1_px: cy }
                }
                ActionTypeCoarse::Scroll => {
                    ParamPayload::Scroll { dx: 0, dy: 0, horizontal: false }
                }
                ActionTypeCoarse::Press => {
                    ParamPayload::Press { keys: vec![PLACEHOLDER_KEY.into()] }
                }
                ActionTypeCoarse::Type => ParamPayload::Type { text: PLACEHOLDER_TEXT.into() },
            };
            return Ok(ParamOutput {
                action: hinted,
                params: ActionParams::new(w, h, payload),
                confidence: 0.0,
                // Press leaves no reliable pixel trace, so absence of
                // evidence is not disagreement for it.
                hint_disagreement: hinted != ActionTypeCoarse::Press,
            });
        }

        let peak = active
            .iter()
            .max_by(|a, b| a.1.energy.total_cmp(&b.1.energy))
            .expect("non-empty");
        let active_diffs: Vec<Diff> = active.iter().map(|(_, d)| *d).collect();
        let area = bbox_area_fraction(union_bbox(&active_diffs), w, h);
        let burst_duration = (active.last().unwrap().0 - active[0].0 + 1) as f64
            / f64::from(segment.plan.f);
        let own_guess = classify(area, burst_duration, cfg);
        let action = hint.unwrap_or(own_guess);
        let confidence = self.confidence(peak.1.energy);

        let (payload, disagreement) = match action {
            ActionTypeCoarse::Click => {
                let (x, y) = point(peak.1.centroid);
                (
                    ParamPayload::Click { x_px: x, y_px: y, button: MouseButton::Left, count: 1 },
                    own_guess != ActionTypeCoarse::Click,
                )
            }
            ActionTypeCoarse::Drag => {
                let (x0, y0) = point(active[0].1.centroid);
                let (x1, y1) = point(active.last().unwrap().1.centroid);
                (ParamPayload::Drag { x0_px: x0, y0_px: y0, x1_px: x1, y1_px: y1 }, false)
            }
            ActionTypeCoarse::Scroll => (
                self.scroll_payload(&frames[0].image, &frames.last().unwrap().image),
                own_guess != ActionTypeCoarse::Scroll,
            ),
            ActionTypeCoarse::Press => {
                (ParamPayload::Press { keys: vec![PLACEHOLDER_KEY.into()] }, false)
            }
            ActionTypeCoarse::Type => {
                // "Text changed" reads as repeated localized transitions.
                let confirmed = active.len() >= 2 && area < cfg.scroll_area_fraction;
                (ParamPayload::Type { text: PLACEHOLDER_TEXT.into() }, !confirmed)
            }
        };
        Ok(ParamOutput {
            action,
            params: ActionParams::new(w, h, payload),
            confidence: if disagreement { 0.1 } else { confidence },
            hint_disagreement: hint.is_some() && disagreement,
        })
    }
}
