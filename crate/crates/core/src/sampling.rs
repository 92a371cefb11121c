//! Frame sources and the dynamic frame-rate policy used to prepare
//! parameterizer inputs.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::types::{Frame, FrameError, FrameSource, TypedSpan};

/// Hard cap on frames sampled per segment.
pub const FRAME_CAP: usize = 20;
pub const MIN_RATE: u32 = 4;
pub const MAX_RATE: u32 = 30;

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("segment duration must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("missing or unreadable manifest at {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// `f = min(30, max(4, floor(20 / dt)))`: high rates preserve brief
/// clicks and scrolls, long segments fall to the 4 fps floor.
pub fn dynamic_frame_rate(delta_t_s: f64) -> Result<u32, SamplingError> {
    if delta_t_s <= 0.0 || !delta_t_s.is_finite() {
        return Err(SamplingError::NonPositiveDelta(delta_t_s));
    }
    let raw = (20.0 / delta_t_s).floor();
    let clamped = raw.clamp(f64::from(MIN_RATE), f64::from(MAX_RATE));
    Ok(clamped as u32)
}

/// A uniform sampling plan over one action segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    /// Sampling rate in frames per second (always within `[4, 30]`).
    pub f: u32,
    pub timestamps_s: Vec<f64>,
    /// Target frame cap the plan was built under.
    pub cap: usize,
    pub t_start_s: f64,
    pub t_end_s: f64,
}

/// Plans `n` uniformly spaced sample timestamps anchored at the span start
/// with step `1/f`, where `n` is `f * dt` rounded (ties down), floored at 1
/// and capped at [`FRAME_CAP`].
pub fn plan_samples(span: &TypedSpan) -> Result<SamplePlan, SamplingError> {
    let dt = span.duration_s();
    let f = dynamic_frame_rate(dt)?;
    let ideal = f64::from(f) * dt;
    let n = ((ideal - 0.5).ceil().max(1.0) as usize).clamp(1, FRAME_CAP);
    let step = 1.0 / f64::from(f);
    let timestamps_s = (0..n).map(|i| span.t_start_s + i as f64 * step).collect();
    Ok(SamplePlan {
        f,
        timestamps_s,
        cap: FRAME_CAP,
        t_start_s: span.t_start_s,
        t_end_s: span.t_end_s,
    })
}

// ---------------------------------------------------------------------------
// Directory-backed frames
// ---------------------------------------------------------------------------

/// `manifest.json` sitting next to `frame_%06d.png` files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub fps: f64,
    pub count: usize,
    pub width: u32,
    pub height: u32,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

pub fn write_manifest(dir: &Path, manifest: &FrameManifest) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), json)
}

/// Frames stored as numbered PNGs with a manifest.
#[derive(Debug)]
pub struct DirectoryFrameSource {
    dir: PathBuf,
    manifest: FrameManifest,
}

impl DirectoryFrameSource {
    pub fn open(dir: impl Into<PathBuf>) -> Result<DirectoryFrameSource, SamplingError> {
        let dir = dir.into();
        let path = dir.join("manifest.json");
        let raw = std::fs::read_to_string(&path).map_err(|e| SamplingError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let manifest: FrameManifest =
            serde_json::from_str(&raw).map_err(|e| SamplingError::Manifest {
                path,
                message: e.to_string(),
            })?;
        Ok(DirectoryFrameSource { dir, manifest })
    }

    pub fn manifest(&self) -> &FrameManifest {
        &self.manifest
    }
}

impl FrameSource for DirectoryFrameSource {
    fn frame_count(&self) -> usize {
        self.manifest.count
    }

    fn fps(&self) -> f64 {
        self.manifest.fps
    }

    fn frame_at(&self, index: usize) -> Result<Frame, FrameError> {
        if index >= self.manifest.count {
            return Err(FrameError::OutOfRange { index, count: self.manifest.count });
        }
        let path = self.dir.join(frame_file_name(index));
        let image = image::open(&path)?.to_luma8();
        Ok(Frame {
            timestamp_s: index as f64 / self.manifest.fps,
            image,
            path: Some(path),
        })
    }
}

/// In-memory frames, mainly for synthetic sessions and tests.
#[derive(Debug)]
pub struct MemoryFrameSource {
    pub fps: f64,
    pub frames: Vec<image::GrayImage>,
}

impl FrameSource for MemoryFrameSource {
    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame_at(&self, index: usize) -> Result<Frame, FrameError> {
        let image = self
            .frames
            .get(index)
            .ok_or(FrameError::OutOfRange { index, count: self.frames.len() })?
            .clone();
        Ok(Frame {
            timestamp_s: index as f64 / self.fps,
            image,
            path: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Decoder-backed frames
// ---------------------------------------------------------------------------

/// Frames served by an external decoder subprocess.
///
/// The command template is a token list where `{video}`, `{timestamps}`
/// (comma-separated seconds, three decimals), and `{outdir}` are substituted
/// per request. The decoder must exit zero and write `frame_%06d.png` files
/// numbered by position in the requested timestamp list.
pub struct DecoderFrameSource {
    video_path: PathBuf,
    fps: f64,
    frame_count: usize,
    command: Vec<String>,
    workdir: PathBuf,
    request_counter: AtomicU64,
    /// Requests are serialized; decoders are not assumed reentrant.
    lock: Mutex<()>,
}

impl DecoderFrameSource {
    pub fn new(
        video_path: impl Into<PathBuf>,
        fps: f64,
        frame_count: usize,
        command: Vec<String>,
        workdir: impl Into<PathBuf>,
    ) -> DecoderFrameSource {
        DecoderFrameSource {
            video_path: video_path.into(),
            fps,
            frame_count,
            command,
            workdir: workdir.into(),
            request_counter: AtomicU64::new(0),
            lock: Mutex::new(()),
        }
    }

    /// Requests a batch of timestamps in one decoder invocation.
    pub fn frames_at_times(&self, timestamps: &[f64]) -> Result<Vec<Frame>, FrameError> {
        let _guard = self.lock.lock().expect("decoder lock poisoned");
        let duration = self.duration_s();
        for &t in timestamps {
            if t < 0.0 || t > duration {
                return Err(FrameError::TimeOutOfRange { t_s: t, duration_s: duration });
            }
        }
        let req = self.request_counter.fetch_add(1, Ordering::SeqCst);
        let outdir = self.workdir.join(format!("req_{req:06}"));
        std::fs::create_dir_all(&outdir)?;
        let joined = timestamps
            .iter()
            .map(|t| format!("{t:.3}"))
            .collect::<Vec<_>>()
            .join(",");
        let expand = |tok: &str| {
            tok.replace("{video}", &self.video_path.to_string_lossy())
                .replace("{timestamps}", &joined)
                .replace("{outdir}", &outdir.to_string_lossy())
        };
        let argv: Vec<String> = self.command.iter().map(|t| expand(t)).collect();
        let (prog, rest) = argv
            .split_first()
            .ok_or_else(|| FrameError::Protocol("empty decoder command".into()))?;
        let output = Command::new(prog).args(rest).output()?;
        if !output.status.success() {
            return Err(FrameError::Protocol(format!(
                "decoder exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let mut frames = Vec::with_capacity(timestamps.len());
        let mut missing = Vec::new();
        for (i, &t) in timestamps.iter().enumerate() {
            let path = outdir.join(frame_file_name(i));
            if !path.exists() {
                missing.push(format!("{t:.3}"));
                continue;
            }
            let image = image::open(&path)?.to_luma8();
            frames.push(Frame { timestamp_s: t, image, path: Some(path) });
        }
        if !missing.is_empty() {
            return Err(FrameError::Protocol(format!(
                "decoder returned fewer files than requested; missing timestamps [{}]",
                missing.join(", ")
            )));
        }
        Ok(frames)
    }
}

impl FrameSource for DecoderFrameSource {
    fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame_at(&self, index: usize) -> Result<Frame, FrameError> {
        if index >= self.frame_count {
            return Err(FrameError::OutOfRange { index, count: self.frame_count });
        }
        let t = index as f64 / self.fps;
        Ok(self
            .frames_at_times(&[t])?
            .into_iter()
            .next()
            .expect("one frame per requested timestamp"))
    }
}

/// Samples a plan's timestamps from any frame source (nearest grid frame at
/// or before each timestamp).
pub fn sample_plan_frames(
    source: &dyn FrameSource,
    plan: &SamplePlan,
) -> Result<Vec<Frame>, FrameError> {
    plan.timestamps_s
        .iter()
        .map(|&t| source.frame_at_time(t.min(source.duration_s())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ActionTypeCoarse;

    #[test]
    fn frame_rate_worked_cases() {
        assert_eq!(dynamic_frame_rate(0.5).unwrap(), 30);
        assert_eq!(dynamic_frame_rate(1.0).unwrap(), 20);
        assert_eq!(dynamic_frame_rate(5.0).unwrap(), 4);
    }

    #[test]
    fn frame_rate_rejects_non_positive() {
        assert!(dynamic_frame_rate(0.0).is_err());
        assert!(dynamic_frame_rate(-1.0).is_err());
    }

    #[test]
    fn frame_rate_is_non_increasing() {
        let mut prev = u32::MAX;
        for i in 1..=600 {
            let f = dynamic_frame_rate(i as f64 * 0.1).unwrap();
            assert!(f <= prev);
            assert!((MIN_RATE..=MAX_RATE).contains(&f));
            prev = f;
        }
    }

    #[test]
    fn plan_counts_match_policy() {
        let span = |dt: f64| TypedSpan::new(ActionTypeCoarse::Click, 2.0, 2.0 + dt);
        assert_eq!(plan_samples(&span(0.5)).unwrap().timestamps_s.len(), 15);
        assert_eq!(plan_samples(&span(5.0)).unwrap().timestamps_s.len(), 20);
        assert_eq!(plan_samples(&span(1.0)).unwrap().timestamps_s.len(), 20);
        let degenerate = plan_samples(&span(0.05)).unwrap();
        assert_eq!(degenerate.timestamps_s, vec![2.0]);
    }

    #[test]
    fn plan_timestamps_stay_in_bounds() {
        for i in 1..=120 {
            let dt = i as f64 * 0.25;
            let span = TypedSpan::new(ActionTypeCoarse::Type, 1.0, 1.0 + dt);
            let plan = plan_samples(&span).unwrap();
            assert!(plan.timestamps_s.len() <= FRAME_CAP);
            assert_eq!(plan.timestamps_s[0], span.t_start_s);
            for w in plan.timestamps_s.windows(2) {
                assert!((w[1] - w[0] - 1.0 / f64::from(plan.f)).abs() < 1e-9);
            }
            assert!(*plan.timestamps_s.last().unwrap() <= span.t_end_s + 1e-9);
        }
    }

    #[test]
    fn directory_source_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..8 {
            let img = image::GrayImage::from_pixel(16, 12, image::Luma([i as u8 * 10]));
            img.save(dir.path().join(frame_file_name(i))).unwrap();
        }
        write_manifest(dir.path(), &FrameManifest { fps: 4.0, count: 8, width: 16, height: 12 })
            .unwrap();
        let src = DirectoryFrameSource::open(dir.path()).unwrap();
        assert_eq!(src.frame_count(), 8);
        let f = src.frame_at(5).unwrap();
        assert_eq!(f.timestamp_s, 1.25);
        assert_eq!(f.image.get_pixel(0, 0)[0], 50);
        assert!(src.frame_at(8).is_err());
        assert!(src.frame_at_time(9.9).is_err());
    }

    #[test]
    fn missing_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            DirectoryFrameSource::open(dir.path()),
            Err(SamplingError::Manifest { .. })
        ));
    }

    #[cfg(unix)]
    fn stub_decoder(dir: &Path, frames_to_write: usize) -> Vec<String> {
        // Writes `frames_to_write` tiny PNGs regardless of how many
        // timestamps were requested.
        let src = dir.join("stub_frame.png");
        image::GrayImage::from_pixel(4, 4, image::Luma([7]))
            .save(&src)
            .unwrap();
        let script = dir.join("decoder.sh");
        let body = format!(
            "#!/bin/sh\nset -e\nout=\"$3\"\nfor i in $(seq 0 {}); do\n  cp {} \"$out/frame_$(printf %06d $i).png\"\ndone\n",
            frames_to_write as i64 - 1,
            src.display()
        );
        std::fs::write(&script, body).unwrap();
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
        vec![
            script.to_string_lossy().into_owned(),
            "{video}".into(),
            "{timestamps}".into(),
            "{outdir}".into(),
        ]
    }

    #[cfg(unix)]
    #[test]
    fn decoder_source_serves_batches() {
        let dir = tempfile::tempdir().unwrap();
        let cmd = stub_decoder(dir.path(), 3);
        let src = DecoderFrameSource::new("video.mp4", 4.0, 40, cmd, dir.path());
        let frames = src.frames_at_times(&[0.0, 0.25, 0.5]).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[1].timestamp_s, 0.25);
    }

    #[cfg(unix)]
    #[test]
    fn decoder_shortfall_names_missing_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let cmd = stub_decoder(dir.path(), 2);
        let src = DecoderFrameSource::new("video.mp4", 4.0, 40, cmd, dir.path());
        let err = src.frames_at_times(&[0.0, 0.25, 0.5]).unwrap_err();
        match err {
            FrameError::Protocol(msg) => assert!(msg.contains("0.500"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[cfg(unix)]
    #[test]
    fn decoder_failure_surfaces_exit_status() {
        let dir = tempfile::tempdir().unwrap();
        let cmd = vec!["false".to_string(), "{outdir}".to_string()];
        let src = DecoderFrameSource::new("video.mp4", 4.0, 40, cmd, dir.path());
        assert!(matches!(
            src.frames_at_times(&[0.0]),
            Err(FrameError::Protocol(_))
        ));
    }

    #[test]
    fn decoder_rejects_out_of_range_request() {
        let dir = tempfile::tempdir().unwrap();
        let src = DecoderFrameSource::new(
            "video.mp4",
            4.0,
            40,
            vec!["true".into()],
            dir.path(),
        );
        assert!(matches!(
            src.frames_at_times(&[11.0]),
            Err(FrameError::TimeOutOfRange { .. })
        ));
    }
}
