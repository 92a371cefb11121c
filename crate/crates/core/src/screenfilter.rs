//! Cursor-gated GUI segment extraction: per-frame cursor presence, gap
//! merging, and ratio/duration retention.
//!
//! The built-in detector is zero-mean normalized cross-correlation against a
//! sprite set over a coarse scale set. Real corpora feed externally produced
//! detections through [`ingest_detections`] instead.

use std::io::BufRead;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::types::{Frame, FrameSource};

#[derive(Debug, thiserror::Error)]
pub enum ScreenFilterError {
    #[error("sprite set is empty")]
    NoSprites,
    #[error("sprite {index} ({w}x{h}) larger than frame ({fw}x{fh})")]
    SpriteTooLarge {
        index: usize,
        w: u32,
        h: u32,
        fw: u32,
        fh: u32,
    },
    #[error("line {line}: {message}")]
    BadDetection { line: usize, message: String },
    #[error("duplicate frame index {index} at line {line}")]
    DuplicateFrame { index: usize, line: usize },
    #[error("frame index {index} at line {line} goes backwards")]
    NonMonotoneFrame { index: usize, line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("frame access failed: {0}")]
    Frame(#[from] crate::types::FrameError),
    #[error("invalid gate config: {0}")]
    Config(String),
}

/// An axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// One frame's cursor verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFlag {
    pub cursor_present: bool,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<PixelBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl FrameFlag {
    pub fn absent() -> FrameFlag {
        FrameFlag { cursor_present: false, bbox: None, score: None }
    }

    pub fn present(bbox: PixelBox, score: f64) -> FrameFlag {
        FrameFlag { cursor_present: true, bbox: Some(bbox), score: Some(score) }
    }
}

/// Per-frame flags at the gating rate (1-2 fps in practice).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFlags {
    pub fps: f64,
    pub flags: Vec<FrameFlag>,
}

impl FrameFlags {
    pub fn from_bools(fps: f64, present: &[bool]) -> FrameFlags {
        FrameFlags {
            fps,
            flags: present
                .iter()
                .map(|&p| FrameFlag { cursor_present: p, bbox: None, score: None })
                .collect(),
        }
    }
}

/// Retention thresholds for cursor gating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Minimum fraction of cursor-present frames over a merged segment.
    pub presence_ratio: f64,
    pub min_duration_s: f64,
    pub merge_gap_s: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig { presence_ratio: 0.80, min_duration_s: 6.0, merge_gap_s: 2.0 }
    }
}

impl GateConfig {
    pub fn check(&self) -> Result<(), ScreenFilterError> {
        if !(self.presence_ratio > 0.0 && self.presence_ratio <= 1.0) {
            return Err(ScreenFilterError::Config(format!(
                "presence_ratio {} outside (0, 1]",
                self.presence_ratio
            )));
        }
        if self.min_duration_s <= 0.0 {
            return Err(ScreenFilterError::Config("min_duration_s must be > 0".into()));
        }
        if self.merge_gap_s < 0.0 {
            return Err(ScreenFilterError::Config("merge_gap_s must be >= 0".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Template matching
// ---------------------------------------------------------------------------

/// Scales tried for every sprite.
pub const SPRITE_SCALES: [f64; 3] = [1.0, 1.5, 2.0];

struct Integral {
    w: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn build(img: &GrayImage) -> Integral {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let stride = w + 1;
        let mut sum = vec![0.0; stride * (h + 1)];
        let mut sq = vec![0.0; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for x in 0..w {
                let v = f64::from(img.get_pixel(x as u32, y as u32)[0]);
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        Integral { w: stride, sum, sq }
    }

    fn window(&self, x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
        let s = &self.sum;
        let q = &self.sq;
        let (x1, y1) = (x + w, y + h);
        let idx = |r: usize, c: usize| r * self.w + c;
        (
            s[idx(y1, x1)] - s[idx(y, x1)] - s[idx(y1, x)] + s[idx(y, x)],
            q[idx(y1, x1)] - q[idx(y, x1)] - q[idx(y1, x)] + q[idx(y, x)],
        )
    }
}

fn scale_sprite(sprite: &GrayImage, scale: f64) -> GrayImage {
    if scale == 1.0 {
        return sprite.clone();
    }
    let w = ((f64::from(sprite.width()) * scale).round() as u32).max(1);
    let h = ((f64::from(sprite.height()) * scale).round() as u32).max(1);
    image::imageops::resize(sprite, w, h, image::imageops::FilterType::Nearest)
}

/// Best zero-mean NCC match of `tpl` anywhere in `frame`, using integral
/// images for the per-window mean and variance.
fn zncc_best(frame: &GrayImage, integral: &Integral, tpl: &GrayImage) -> Option<(u32, u32, f64)> {
    let (fw, fh) = (frame.width() as usize, frame.height() as usize);
    let (tw, th) = (tpl.width() as usize, tpl.height() as usize);
    if tw > fw || th > fh {
        return None;
    }
    let n = (tw * th) as f64;
    let mut t_sum = 0.0;
    let mut t_sq = 0.0;
    let tpl_px: Vec<f64> = tpl.pixels().map(|p| f64::from(p[0])).collect();
    for &v in &tpl_px {
        t_sum += v;
        t_sq += v * v;
    }
    let t_mean = t_sum / n;
    let t_var = t_sq - n * t_mean * t_mean;
    if t_var <= 1e-9 {
        return None; // flat template matches nothing meaningfully
    }
    let t_norm = t_var.sqrt();

    let mut best: Option<(u32, u32, f64)> = None;
    for y in 0..=(fh - th) {
        for x in 0..=(fw - tw) {
            let (w_sum, w_sq) = integral.window(x, y, tw, th);
            let w_mean = w_sum / n;
            let w_var = w_sq - n * w_mean * w_mean;
            if w_var <= 1e-9 {
                continue; // flat window: zero-variance, score defined as 0
            }
            let mut dot = 0.0;
            for ty in 0..th {
                for tx in 0..tw {
                    let fv = f64::from(frame.get_pixel((x + tx) as u32, (y + ty) as u32)[0]);
                    dot += fv * tpl_px[ty * tw + tx];
                }
            }
            let score = (dot - n * w_mean * t_mean) / (w_var.sqrt() * t_norm);
            if best.is_none_or(|(_, _, b)| score > b) {
                best = Some((x as u32, y as u32, score));
            }
        }
    }
    best
}

/// Finds the best cursor-sprite match over all sprites and the coarse scale
/// set. Returns `None` when the best score falls below `threshold`.
pub fn detect_cursor_template(
    frame: &GrayImage,
    sprites: &[GrayImage],
    threshold: f64,
) -> Result<Option<(PixelBox, f64)>, ScreenFilterError> {
    if sprites.is_empty() {
        return Err(ScreenFilterError::NoSprites);
    }
    for (index, s) in sprites.iter().enumerate() {
        if s.width() > frame.width() || s.height() > frame.height() {
            return Err(ScreenFilterError::SpriteTooLarge {
                index,
                w: s.width(),
                h: s.height(),
                fw: frame.width(),
                fh: frame.height(),
            });
        }
    }
    let integral = Integral::build(frame);
    let mut best: Option<(PixelBox, f64)> = None;
    for sprite in sprites {
        for scale in SPRITE_SCALES {
            let tpl = scale_sprite(sprite, scale);
            if let Some((x, y, score)) = zncc_best(frame, &integral, &tpl) {
                if best.as_ref().is_none_or(|(_, b)| score > *b) {
                    best = Some((
                        PixelBox { x, y, w: tpl.width(), h: tpl.height() },
                        score,
                    ));
                }
            }
        }
    }
    Ok(best.filter(|(_, score)| *score >= threshold))
}

/// Runs the template detector over a frame source at `gate_fps`, producing
/// flags for the gate.
pub fn detect_flags(
    source: &dyn FrameSource,
    sprites: &[GrayImage],
    threshold: f64,
    gate_fps: f64,
) -> Result<FrameFlags, ScreenFilterError> {
    let duration = source.duration_s();
    let n = (duration * gate_fps).ceil() as usize;
    let mut flags = Vec::with_capacity(n);
    for i in 0..n {
        let t = (i as f64 / gate_fps).min(duration);
        let Frame { image, .. } = source.frame_at_time(t)?;
        flags.push(match detect_cursor_template(&image, sprites, threshold)? {
            Some((bbox, score)) => FrameFlag::present(bbox, score),
            None => FrameFlag::absent(),
        });
    }
    Ok(FrameFlags { fps: gate_fps, flags })
}

// ---------------------------------------------------------------------------
// Gating
// ---------------------------------------------------------------------------

/// Retains qualifying temporal segments from per-frame cursor flags:
/// maximal present runs are merged across gaps up to `merge_gap_s`, then a
/// merged segment survives iff it lasts `min_duration_s` and its presence
/// ratio over the merged extent reaches `presence_ratio`.
///
/// Output segments are sorted, disjoint, and separated by more than the
/// merge gap. Endpoints snap to the frame grid: frame `i` covers
/// `[i/fps, (i+1)/fps)`.
pub fn gate_segments(flags: &FrameFlags, cfg: &GateConfig) -> Vec<(f64, f64)> {
    let fps = flags.fps;
    let present: Vec<bool> = flags.flags.iter().map(|f| f.cursor_present).collect();

    // Maximal runs of present frames as [start, end] frame indices.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < present.len() {
        if present[i] {
            let start = i;
            while i < present.len() && present[i] {
                i += 1;
            }
            runs.push((start, i - 1));
        } else {
            i += 1;
        }
    }

    // Merge runs whose separating gap is within the merge gap.
    let mut merged: Vec<(usize, usize, usize)> = Vec::new(); // (start, end, present_count)
    for (a, b) in runs {
        let count = b - a + 1;
        match merged.last_mut() {
            Some((_, end, total)) if (a - *end - 1) as f64 / fps <= cfg.merge_gap_s => {
                *end = b;
                *total += count;
            }
            _ => merged.push((a, b, count)),
        }
    }

    merged
        .into_iter()
        .filter(|(a, b, present_count)| {
            let frames = b - a + 1;
            let duration = frames as f64 / fps;
            duration >= cfg.min_duration_s
                && *present_count as f64 / frames as f64 >= cfg.presence_ratio
        })
        .map(|(a, b, _)| (a as f64 / fps, (b + 1) as f64 / fps))
        .collect()
}

// ---------------------------------------------------------------------------
// Detection ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct DetectionRecord {
    frame_index: usize,
    present: bool,
    #[serde(rename = "box", default)]
    bbox: Option<PixelBox>,
    #[serde(default)]
    score: Option<f64>,
}

/// Builds [`FrameFlags`] from a `detections.jsonl` stream (one record per
/// frame, monotone indices). Missing frames are filled as cursor-absent.
pub fn ingest_detections(
    reader: impl BufRead,
    fps: f64,
) -> Result<FrameFlags, ScreenFilterError> {
    let mut flags: Vec<FrameFlag> = Vec::new();
    let mut last_index: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord =
            serde_json::from_str(&line).map_err(|e| ScreenFilterError::BadDetection {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        if rec.bbox.is_some() && rec.score.is_none() {
            return Err(ScreenFilterError::BadDetection {
                line: lineno + 1,
                message: "box without score".into(),
            });
        }
        match last_index {
            Some(prev) if rec.frame_index == prev => {
                return Err(ScreenFilterError::DuplicateFrame {
                    index: rec.frame_index,
                    line: lineno + 1,
                });
            }
            Some(prev) if rec.frame_index < prev => {
                return Err(ScreenFilterError::NonMonotoneFrame {
                    index: rec.frame_index,
                    line: lineno + 1,
                });
            }
            _ => {}
        }
        while flags.len() < rec.frame_index {
            flags.push(FrameFlag::absent());
        }
        flags.push(FrameFlag {
            cursor_present: rec.present,
            bbox: rec.bbox,
            score: rec.score,
        });
        last_index = Some(rec.frame_index);
    }
    Ok(FrameFlags { fps, flags })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(w: u32, h: u32, v: u8) -> GrayImage {
        GrayImage::from_pixel(w, h, image::Luma([v]))
    }

    /// A small asymmetric arrow-ish sprite.
    fn sprite() -> GrayImage {
        let mut s = flat(8, 12, 230);
        for y in 0..12u32 {
            for x in 0..8u32 {
                if x <= y / 2 {
                    s.put_pixel(x, y, image::Luma([10]));
                }
            }
        }
        s
    }

    fn paste(frame: &mut GrayImage, img: &GrayImage, at: (u32, u32)) {
        for y in 0..img.height() {
            for x in 0..img.width() {
                frame.put_pixel(at.0 + x, at.1 + y, *img.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn exact_paste_matches_at_location() {
        let mut frame = flat(160, 120, 200);
        paste(&mut frame, &sprite(), (50, 60));
        let (bbox, score) = detect_cursor_template(&frame, &[sprite()], 0.8)
            .unwrap()
            .expect("match");
        assert_eq!((bbox.x, bbox.y), (50, 60));
        assert!(score >= 0.99, "score {score}");
    }

    #[test]
    fn uniform_frame_matches_nothing() {
        let frame = flat(160, 120, 128);
        assert!(detect_cursor_template(&frame, &[sprite()], 0.8).unwrap().is_none());
    }

    #[test]
    fn scaled_paste_found_within_two_pixels() {
        let mut frame = flat(200, 160, 200);
        let scaled = scale_sprite(&sprite(), 1.5);
        paste(&mut frame, &scaled, (80, 40));
        let (bbox, score) = detect_cursor_template(&frame, &[sprite()], 0.8)
            .unwrap()
            .expect("match");
        assert!(
            (i64::from(bbox.x) - 80).abs() <= 2 && (i64::from(bbox.y) - 40).abs() <= 2,
            "box at ({}, {})",
            bbox.x,
            bbox.y
        );
        assert!(score > 0.9, "score {score}");
    }

    #[test]
    fn empty_sprite_set_fails() {
        let frame = flat(50, 50, 0);
        assert!(matches!(
            detect_cursor_template(&frame, &[], 0.5),
            Err(ScreenFilterError::NoSprites)
        ));
    }

    #[test]
    fn full_presence_is_one_segment() {
        let flags = FrameFlags::from_bools(2.0, &[true; 20]);
        assert_eq!(gate_segments(&flags, &GateConfig::default()), vec![(0.0, 10.0)]);
    }

    #[test]
    fn five_seconds_is_too_short() {
        let flags = FrameFlags::from_bools(2.0, &[true; 10]);
        assert!(gate_segments(&flags, &GateConfig::default()).is_empty());
    }

    #[test]
    fn short_gap_merges_two_runs() {
        // 12 present, 3 absent (1.5 s), 12 present at 2 fps.
        let mut p = vec![true; 12];
        p.extend([false; 3]);
        p.extend([true; 12]);
        let flags = FrameFlags::from_bools(2.0, &p);
        let segs = gate_segments(&flags, &GateConfig::default());
        assert_eq!(segs, vec![(0.0, 13.5)]);
    }

    #[test]
    fn wide_gap_keeps_runs_apart() {
        // 5 absent frames = 2.5 s > 2 s merge gap.
        let mut p = vec![true; 14];
        p.extend([false; 5]);
        p.extend([true; 14]);
        let flags = FrameFlags::from_bools(2.0, &p);
        let segs = gate_segments(&flags, &GateConfig::default());
        assert_eq!(segs, vec![(0.0, 7.0), (9.5, 16.5)]);
    }

    #[test]
    fn low_ratio_merged_extent_is_dropped() {
        // Alternating present/absent: every gap merges but ratio ~0.5 < 0.8.
        let p: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let flags = FrameFlags::from_bools(2.0, &p);
        assert!(gate_segments(&flags, &GateConfig::default()).is_empty());
    }

    /// Flipping an absent frame to present is NOT monotone under this gate:
    /// a flip can bridge a clean segment into a low-ratio extent that then
    /// fails retention as a whole. This pins the behavior down.
    #[test]
    fn gate_flip_to_present_can_remove_retained_time() {
        let fps = 1.0;
        let cfg = GateConfig::default();
        let mut p = vec![true; 10]; // clean 10 s segment
        p.extend([false; 5]); // 5 s gap: runs stay apart
        // 40-frame extent at ratio 32/40 = 0.8 with internal 2 s gaps.
        for chunk in [7usize, 7, 6, 6, 6] {
            p.extend(std::iter::repeat_n(true, chunk));
            p.extend([false, false]);
        }
        p.truncate(15 + 40);
        let before = gate_segments(&FrameFlags::from_bools(fps, &p), &cfg);
        assert_eq!(before.len(), 2);

        let mut flipped = p.clone();
        flipped[12] = true; // bridges both gaps: 2 + 1 + 2 frames
        let after = gate_segments(&FrameFlags::from_bools(fps, &flipped), &cfg);
        assert!(after.is_empty(), "merged extent falls below the ratio: {after:?}");
    }

    #[test]
    fn ingest_fills_gaps_as_absent() {
        let lines = [
            r#"{"frame_index":0,"present":true}"#,
            r#"{"frame_index":2,"present":true}"#,
            r#"{"frame_index":4,"present":true}"#,
        ];
        let flags = ingest_detections(std::io::Cursor::new(lines.join("\n")), 2.0).unwrap();
        let p: Vec<bool> = flags.flags.iter().map(|f| f.cursor_present).collect();
        assert_eq!(p, vec![true, false, true, false, true]);
    }

    #[test]
    fn ingest_rejects_duplicate_index() {
        let lines = [
            r#"{"frame_index":3,"present":true}"#,
            r#"{"frame_index":3,"present":false}"#,
        ];
        let err = ingest_detections(std::io::Cursor::new(lines.join("\n")), 2.0).unwrap_err();
        assert!(matches!(err, ScreenFilterError::DuplicateFrame { index: 3, line: 2 }));
    }

    #[test]
    fn ingest_rejects_backwards_index() {
        let lines = [
            r#"{"frame_index":3,"present":true}"#,
            r#"{"frame_index":1,"present":false}"#,
        ];
        assert!(matches!(
            ingest_detections(std::io::Cursor::new(lines.join("\n")), 2.0),
            Err(ScreenFilterError::NonMonotoneFrame { .. })
        ));
    }

    #[test]
    fn ingest_keeps_boxes_and_scores() {
        let lines =
            [r#"{"frame_index":0,"present":true,"box":{"x":1,"y":2,"w":3,"h":4},"score":0.9}"#];
        let flags = ingest_detections(std::io::Cursor::new(lines.join("\n")), 1.0).unwrap();
        assert_eq!(flags.flags[0].bbox, Some(PixelBox { x: 1, y: 2, w: 3, h: 4 }));
        let bad = [r#"{"frame_index":0,"present":true,"box":{"x":1,"y":2,"w":3,"h":4}}"#];
        assert!(ingest_detections(std::io::Cursor::new(bad.join("\n")), 1.0).is_err());
    }
}
