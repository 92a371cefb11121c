//! Seeded synthetic fixtures: a demo interaction session (events, frames,
//! transcript, detections) and a catalog for discovery runs. Everything is
//! deterministic given the seed, so the same fixtures back the CLI demo and
//! the verification suites.

use chrono::NaiveDate;
use image::GrayImage;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::discovery::CatalogFixture;
use crate::monologue::{TranscriptEntry, TranscriptTrack};
use crate::types::{ActionTypeFine, MouseButton, RawEvent, VideoMeta};

/// A generated demonstration session. Each logged event merges into exactly
/// one typed span: events are spaced beyond every fusion gap and kept clear
/// of clip boundaries, so ground truth has one span per event.
#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub video_id: String,
    pub frame_w_px: u32,
    pub frame_h_px: u32,
    pub duration_s: f64,
    pub events: Vec<RawEvent>,
    pub transcript: TranscriptTrack,
}

/// Minimum distance between generated events, beyond every merge gap.
const EVENT_SPACING_S: f64 = 2.0;
/// Keep-out zone around clip boundaries so spans never straddle clips.
const BOUNDARY_MARGIN_S: f64 = 0.5;

fn pick_times(rng: &mut ChaCha8Rng, duration_s: f64, n: usize) -> Vec<f64> {
    let mut chosen: Vec<f64> = Vec::with_capacity(n);
    let mut attempts = 0;
    while chosen.len() < n {
        attempts += 1;
        assert!(attempts < 200_000, "session too dense for the constraints");
        let t = rng.gen_range(1.0..duration_s - 1.0);
        let near_boundary = (t % 10.0) < BOUNDARY_MARGIN_S || (t % 10.0) > 10.0 - BOUNDARY_MARGIN_S;
        if near_boundary {
            continue;
        }
        if chosen.iter().all(|&c| (c - t).abs() >= EVENT_SPACING_S) {
            chosen.push((t * 1000.0).round() / 1000.0);
        }
    }
    chosen.sort_by(f64::total_cmp);
    chosen
}

/// Generates a session of `n_events` isolated events over `duration_s`
/// seconds.
pub fn synth_session(
    seed: u64,
    video_id: &str,
    duration_s: f64,
    n_events: usize,
    frame_w_px: u32,
    frame_h_px: u32,
) -> SyntheticSession {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = pick_times(&mut rng, duration_s, n_events);

    let kinds = [
        ActionTypeFine::Click,
        ActionTypeFine::Write,
        ActionTypeFine::Key,
        ActionTypeFine::Scroll,
        ActionTypeFine::RightClick,
        ActionTypeFine::DoubleClick,
        ActionTypeFine::Hotkey,
        ActionTypeFine::Hscroll,
        ActionTypeFine::DragTo,
    ];
    let keys = ["enter", "tab", "escape", "backspace"];
    let chords = ["ctrl+s", "ctrl+c", "alt+tab"];
    let words = ["report", "budget", "invoice", "notes", "draft"];

    let mut events = Vec::with_capacity(n_events);
    for (i, &t) in times.iter().enumerate() {
        let t_ms = (t * 1000.0).round() as u64;
        let kind = kinds[i % kinds.len()];
        let x = rng.gen_range(10..frame_w_px - 10);
        let y = rng.gen_range(10..frame_h_px - 10);
        let mut ev = RawEvent {
            t_ms,
            kind,
            x_px: None,
            y_px: None,
            key: None,
            text: None,
            dx: None,
            dy: None,
            button: None,
        };
        match kind {
            ActionTypeFine::Click => {
                ev.x_px = Some(x);
                ev.y_px = Some(y);
                ev.button = Some(MouseButton::Left);
            }
            ActionTypeFine::RightClick
            | ActionTypeFine::DoubleClick
            | ActionTypeFine::DragTo => {
                ev.x_px = Some(x);
                ev.y_px = Some(y);
            }
            ActionTypeFine::Write => {
                ev.text = Some(words[rng.gen_range(0..words.len())].to_string());
            }
            ActionTypeFine::Key => {
                ev.key = Some(keys[rng.gen_range(0..keys.len())].to_string());
            }
            ActionTypeFine::Hotkey => {
                ev.key = Some(chords[rng.gen_range(0..chords.len())].to_string());
            }
            ActionTypeFine::Scroll => {
                ev.dy = Some(if rng.gen_bool(0.5) { -3 } else { 3 });
            }
            ActionTypeFine::Hscroll => {
                ev.dx = Some(if rng.gen_bool(0.5) { -2 } else { 2 });
            }
            _ => unreachable!("kind list has no other members"),
        }
        events.push(ev);
    }

    let transcript = TranscriptTrack {
        entries: times
            .iter()
            .enumerate()
            .map(|(i, &t)| TranscriptEntry {
                t_start_s: (t - 0.8).max(0.0),
                t_end_s: t + 0.8,
                text: format!("now step {} of the walkthrough", i + 1),
            })
            .collect(),
    };

    SyntheticSession {
        video_id: video_id.to_string(),
        frame_w_px,
        frame_h_px,
        duration_s,
        events,
        transcript,
    }
}

// ---------------------------------------------------------------------------
// Frame rendering
// ---------------------------------------------------------------------------

/// The cursor sprite the renderer draws; also the default sprite set for
/// template matching.
pub fn cursor_sprite() -> GrayImage {
    let mut s = GrayImage::from_pixel(8, 12, image::Luma([235]));
    for y in 0..12u32 {
        for x in 0..8u32 {
            if x <= y / 2 && y < 10 {
                s.put_pixel(x, y, image::Luma([12]));
            }
        }
    }
    s
}

fn blit(frame: &mut GrayImage, img: &GrayImage, at: (u32, u32)) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (fx, fy) = (at.0 + x, at.1 + y);
            if fx < frame.width() && fy < frame.height() {
                frame.put_pixel(fx, fy, *img.get_pixel(x, y));
            }
        }
    }
}

/// Renders the session at a fixed rate: a desktop-ish background, the
/// cursor at its latest logged position, and a short visual effect after
/// each event.
pub fn render_session_frames(session: &SyntheticSession, fps: f64) -> Vec<GrayImage> {
    let (w, h) = (session.frame_w_px, session.frame_h_px);
    let mut background = GrayImage::from_pixel(w, h, image::Luma([205]));
    // Window chrome bands so frames are not flat.
    for y in 0..h {
        let v = if y < h / 12 { 150 } else if y % 40 < 3 { 190 } else { 205 };
        for x in 0..w {
            background.put_pixel(x, y, image::Luma([v]));
        }
    }
    let sprite = cursor_sprite();
    let n = (session.duration_s * fps).round() as usize;
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let t_ms = (i as f64 / fps * 1000.0).round() as u64;
        let mut frame = background.clone();
        let mut cursor = (w / 2, h / 2);
        for ev in &session.events {
            if ev.t_ms <= t_ms {
                if let (Some(x), Some(y)) = (ev.x_px, ev.y_px) {
                    cursor = (x.min(w - 9), y.min(h - 13));
                }
                // 300 ms visual effect: a small inverted patch at the event
                // site (or a band shift for scrolls).
                if t_ms - ev.t_ms <= 300 {
                    match ev.kind {
                        ActionTypeFine::Scroll | ActionTypeFine::Hscroll => {
                            for y in (h / 3)..(2 * h / 3) {
                                for x in 0..w {
                                    let v = frame.get_pixel(x, y)[0];
                                    frame.put_pixel(x, y, image::Luma([v.saturating_sub(60)]));
                                }
                            }
                        }
                        _ => {
                            let (ex, ey) = (
                                ev.x_px.unwrap_or(w / 2).min(w - 25),
                                ev.y_px.unwrap_or(h / 2).min(h - 25),
                            );
                            for y in ey..ey + 24 {
                                for x in ex..ex + 24 {
                                    let v = frame.get_pixel(x, y)[0];
                                    frame.put_pixel(x, y, image::Luma([255 - v]));
                                }
                            }
                        }
                    }
                }
            }
        }
        blit(&mut frame, &sprite, cursor);
        frames.push(frame);
    }
    frames
}

/// Cursor detections for the rendered session at the gating rate: present
/// everywhere, with a configurable absent stretch for gate exercises.
pub fn synth_detections(duration_s: f64, fps: f64, absent: Option<(f64, f64)>) -> String {
    let n = (duration_s * fps).ceil() as usize;
    let mut out = String::new();
    for i in 0..n {
        let t = i as f64 / fps;
        let present = absent.is_none_or(|(lo, hi)| !(t >= lo && t < hi));
        out.push_str(&format!(
            "{}\n",
            serde_json::json!({"frame_index": i, "present": present})
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Catalog fixture
// ---------------------------------------------------------------------------

const APPS: [&str; 10] = [
    "excel", "windows", "photoshop", "ubuntu", "outlook", "blender", "chrome", "word", "figma",
    "macos",
];

fn good_meta(rng: &mut ChaCha8Rng, video_id: &str, channel: &str, app: &str, i: usize) -> VideoMeta {
    VideoMeta {
        video_id: video_id.into(),
        title: format!("How to use {app} - lesson {i}"),
        description: format!("step by step {app} walkthrough"),
        channel_id: channel.into(),
        tags: vec![format!("{app} tutorial")],
        width_px: 1920,
        height_px: 1080,
        published_date: NaiveDate::from_ymd_opt(2023 + (i % 3) as i32, 1 + (i % 12) as u32, 5)
            .expect("valid date"),
        has_captions: true,
        language: "en".into(),
        overlay_fraction: rng.gen_range(0.0..0.08),
        is_screen_recording: true,
        is_stable: true,
        duration_s: rng.gen_range(120.0..900.0),
    }
}

/// Breaks one quality rule, cycling through the rule set.
fn degrade(meta: &mut VideoMeta, which: usize) {
    match which % 6 {
        0 => meta.overlay_fraction = 0.2,
        1 => meta.is_screen_recording = false,
        2 => meta.language = "es".into(),
        3 => meta.has_captions = false,
        4 => (meta.width_px, meta.height_px) = (1080, 1920),
        _ => meta.published_date = NaiveDate::from_ymd_opt(2015, 6, 1).expect("valid date"),
    }
}

/// A catalog of `n_good + n_bad` channels. Good channels pass the quality
/// rules on nearly all videos (above the 0.8 acceptance threshold); bad
/// channels hover below it. Tags chain across apps so multi-round expansion
/// has somewhere to go.
pub fn synth_catalog(seed: u64, n_good: usize, n_bad: usize) -> CatalogFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut videos = Vec::new();
    let mut related: std::collections::BTreeMap<String, Vec<String>> =
        std::collections::BTreeMap::new();

    for c in 0..(n_good + n_bad) {
        let good = c < n_good;
        let channel = format!("ch_{}{c:03}", if good { "good_" } else { "bad_" });
        let app = APPS[c % APPS.len()];
        let next_app = APPS[(c + 1) % APPS.len()];
        let n_videos = rng.gen_range(10..=16);
        // Bad channels pass on roughly half their videos; good ones fail at
        // most one in ten.
        let n_fail = if good { n_videos / 10 } else { n_videos - (n_videos * 55 / 100) };
        let mut ids = Vec::new();
        for i in 0..n_videos {
            let video_id = format!("{channel}_v{i:02}");
            let mut meta = good_meta(&mut rng, &video_id, &channel, app, i);
            // Chain discovery: a slice of each good channel also tags the
            // next app.
            if good && i % 3 == 0 {
                meta.tags.push(format!("{next_app} tutorial"));
            }
            if i < n_fail {
                degrade(&mut meta, c + i);
            }
            ids.push(video_id);
            videos.push(meta);
        }
        for pair in ids.windows(2) {
            related.insert(pair[0].clone(), vec![pair[1].clone()]);
        }
    }
    CatalogFixture { videos, related }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logconv::{merge_events, MergePolicy};

    #[test]
    fn session_events_merge_one_to_one() {
        let s = synth_session(42, "demo", 120.0, 40, 640, 400);
        assert_eq!(s.events.len(), 40);
        let spans = merge_events(&s.events, &MergePolicy::default(), 640, 400);
        assert_eq!(spans.len(), 40);
        // Strictly increasing starts, clear of clip boundaries.
        let mut prev = f64::NEG_INFINITY;
        for (span, params) in &spans {
            assert!(span.t_start_s > prev);
            prev = span.t_start_s;
            assert!(params.check().is_ok());
            let m = span.t_start_s % 10.0;
            assert!(!(-0.3..0.3).contains(&(m - 10.0)) && m > 0.3, "span near boundary: {span:?}");
        }
    }

    #[test]
    fn session_is_deterministic() {
        let a = synth_session(7, "demo", 60.0, 12, 320, 200);
        let b = synth_session(7, "demo", 60.0, 12, 320, 200);
        assert_eq!(a.events, b.events);
        let fa = render_session_frames(&a, 4.0);
        let fb = render_session_frames(&b, 4.0);
        assert_eq!(fa.len(), fb.len());
        assert_eq!(fa[10].as_raw(), fb[10].as_raw());
    }

    #[test]
    fn rendered_frames_contain_the_cursor() {
        let s = synth_session(3, "demo", 30.0, 6, 320, 200);
        let frames = render_session_frames(&s, 2.0);
        assert_eq!(frames.len(), 60);
        let hit = crate::screenfilter::detect_cursor_template(
            &frames[30],
            &[cursor_sprite()],
            0.8,
        )
        .unwrap();
        assert!(hit.is_some());
    }

    #[test]
    fn catalog_shape_matches_request() {
        use crate::discovery::Catalog;
        let fixture = synth_catalog(42, 30, 20);
        let channels: std::collections::BTreeSet<&str> =
            fixture.videos.iter().map(|v| v.channel_id.as_str()).collect();
        assert_eq!(channels.len(), 50);
        assert_eq!(channels.iter().filter(|c| c.contains("good")).count(), 30);
        let catalog = crate::discovery::SyntheticCatalog::new(fixture);
        assert!(!catalog.search("excel tutorial").unwrap().is_empty());
    }
}
