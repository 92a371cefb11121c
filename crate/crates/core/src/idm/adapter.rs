//! Client for external detector/parameterizer servers speaking a versioned,
//! line-delimited JSON protocol over a subprocess pipe or an HTTP endpoint.
//!
//! Requests carry a clip manifest (or segment span), frame paths, and the
//! task. The client owns timeouts and one retry; transport failures surface
//! with the request id.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    ActionParameterizer, ClipInput, DetectorOutput, EventDetector, IdmError, ParamOutput,
    SegmentInput,
};
use crate::types::{ActionParams, ActionTypeCoarse, TypedSpan};

pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AdapterTransport {
    /// Long-lived child process: one JSON request per line on stdin, one
    /// JSON response per line on stdout.
    Subprocess { command: Vec<String> },
    /// One JSON request per POST; the response body is the JSON response.
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub transport: AdapterTransport,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    4
}

/// Clip metadata sent on the wire. Ground-truth spans never leave the
/// process.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClipManifest {
    clip_id: String,
    video_id: String,
    t_offset_s: f64,
    duration_s: f64,
    fps: f64,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    v: u32,
    id: &'a str,
    task: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    clip: Option<ClipManifest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    video_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    span: Option<TypedSpan>,
    frames: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hint: Option<ActionTypeCoarse>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    v: u32,
    id: String,
    ok: bool,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    spans: Option<Vec<TypedSpan>>,
    #[serde(default)]
    action: Option<ActionTypeCoarse>,
    #[serde(default)]
    params: Option<ActionParams>,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    hint_disagreement: Option<bool>,
}

struct ChildState {
    child: Child,
    stdin: ChildStdin,
    lines: mpsc::Receiver<std::io::Result<String>>,
}

impl ChildState {
    fn spawn(command: &[String]) -> std::io::Result<ChildState> {
        let (prog, rest) = command.split_first().ok_or_else(|| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty adapter command")
        })?;
        let mut child = Command::new(prog)
            .args(rest)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ChildState { child, stdin, lines: rx })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// In-flight request limiter.
struct Gate {
    slots: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(limit: usize) -> Gate {
        Gate { slots: Mutex::new(limit.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut slots = self.slots.lock().expect("gate lock");
        while *slots == 0 {
            slots = self.cv.wait(slots).expect("gate wait");
        }
        *slots -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.slots.lock().expect("gate lock") += 1;
        self.gate.cv.notify_one();
    }
}

pub struct ExternalAdapter {
    config: AdapterConfig,
    child: Mutex<Option<ChildState>>,
    http: Option<reqwest::blocking::Client>,
    counter: AtomicU64,
    gate: Gate,
}

impl ExternalAdapter {
    pub fn new(config: AdapterConfig) -> Result<ExternalAdapter, IdmError> {
        let http = match &config.transport {
            AdapterTransport::Http { .. } => Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_millis(config.timeout_ms))
                    .build()
                    .map_err(|e| IdmError::Adapter {
                        request_id: "init".into(),
                        message: e.to_string(),
                    })?,
            ),
            AdapterTransport::Subprocess { .. } => None,
        };
        let gate = Gate::new(config.max_in_flight);
        Ok(ExternalAdapter {
            config,
            child: Mutex::new(None),
            http,
            counter: AtomicU64::new(0),
            gate,
        })
    }

    fn next_id(&self) -> String {
        format!("req-{:06}", self.counter.fetch_add(1, Ordering::SeqCst))
    }

    fn transport_once(&self, id: &str, payload: &str) -> Result<String, String> {
        match &self.config.transport {
            AdapterTransport::Subprocess { command } => {
                let mut guard = self.child.lock().expect("adapter child lock");
                if guard.is_none() {
                    *guard =
                        Some(ChildState::spawn(command).map_err(|e| format!("spawn: {e}"))?);
                }
                let state = guard.as_mut().expect("just spawned");
                let result = (|| {
                    state
                        .stdin
                        .write_all(payload.as_bytes())
                        .and_then(|()| state.stdin.write_all(b"\n"))
                        .and_then(|()| state.stdin.flush())
                        .map_err(|e| format!("write: {e}"))?;
                    match state.lines.recv_timeout(Duration::from_millis(self.config.timeout_ms))
                    {
                        Ok(Ok(line)) => Ok(line),
                        Ok(Err(e)) => Err(format!("read: {e}")),
                        Err(mpsc::RecvTimeoutError::Timeout) => {
                            Err(format!("timeout after {} ms", self.config.timeout_ms))
                        }
                        Err(mpsc::RecvTimeoutError::Disconnected) => {
                            Err("adapter process closed its stdout".into())
                        }
                    }
                })();
                if result.is_err() {
                    // Broken pipe state: kill so the retry respawns.
                    if let Some(state) = guard.take() {
                        state.kill();
                    }
                }
                result
            }
            AdapterTransport::Http { endpoint } => {
                let client = self.http.as_ref().expect("http client built in new()");
                let resp = client
                    .post(endpoint)
                    .header("content-type", "application/json")
                    .body(payload.to_string())
                    .send()
                    .map_err(|e| format!("http: {e}"))?;
                if !resp.status().is_success() {
                    return Err(format!("http status {}", resp.status()));
                }
                resp.text().map_err(|e| format!("http body: {e}"))
            }
        }
        .map_err(|msg| format!("request {id}: {msg}"))
    }

    /// One round trip with one retry on transport or protocol failure.
    /// Application-level failures (`ok: false`) are not retried.
    fn call(&self, req: &WireRequest<'_>) -> Result<WireResponse, IdmError> {
        let _slot = self.gate.acquire();
        let payload = serde_json::to_string(req).expect("request serializes");
        let id = req.id;
        let mut last_err = String::new();
        for _attempt in 0..2 {
            match self.transport_once(id, &payload) {
                Err(e) => last_err = e,
                Ok(line) => match serde_json::from_str::<WireResponse>(&line) {
                    Err(e) => last_err = format!("bad response: {e}"),
                    Ok(resp) if resp.v != WIRE_VERSION => {
                        last_err = format!("wire version {} (expected {WIRE_VERSION})", resp.v);
                    }
                    Ok(resp) if resp.id != id => {
                        last_err = format!("response id {} does not match", resp.id);
                    }
                    Ok(resp) => {
                        if resp.ok {
                            return Ok(resp);
                        }
                        return Err(IdmError::Adapter {
                            request_id: id.to_string(),
                            message: resp.error.unwrap_or_else(|| "unspecified error".into()),
                        });
                    }
                },
            }
        }
        Err(IdmError::Adapter { request_id: id.to_string(), message: last_err })
    }

    fn frame_paths(&self, frames: &[crate::types::Frame], id: &str) -> Result<Vec<String>, IdmError> {
        frames
            .iter()
            .map(|f| {
                f.path
                    .as_ref()
                    .map(|p| p.to_string_lossy().into_owned())
                    .ok_or_else(|| IdmError::Adapter {
                        request_id: id.to_string(),
                        message: "adapter transport requires file-backed frames".into(),
                    })
            })
            .collect()
    }
}

impl EventDetector for ExternalAdapter {
    fn name(&self) -> &'static str {
        "external"
    }

    fn detect(&self, clip: &ClipInput) -> Result<DetectorOutput, IdmError> {
        let id = self.next_id();
        let req = WireRequest {
            v: WIRE_VERSION,
            id: &id,
            task: "detect",
            clip: Some(ClipManifest {
                clip_id: clip.clip.clip_id.clone(),
                video_id: clip.clip.video_id.clone(),
                t_offset_s: clip.clip.t_offset_s,
                duration_s: clip.clip.duration_s,
                fps: clip.clip.fps,
            }),
            video_id: None,
            span: None,
            frames: self.frame_paths(&clip.frames, &id)?,
            hint: None,
        };
        let resp = self.call(&req)?;
        let spans = resp.spans.ok_or_else(|| IdmError::Adapter {
            request_id: id.clone(),
            message: "detect response missing spans".into(),
        })?;
        DetectorOutput::new(spans, clip.clip.duration_s)
    }
}

impl ActionParameterizer for ExternalAdapter {
    fn name(&self) -> &'static str {
        "external"
    }

    fn parameterize(
        &self,
        segment: &SegmentInput,
        hint: Option<ActionTypeCoarse>,
    ) -> Result<ParamOutput, IdmError> {
        let id = self.next_id();
        let req = WireRequest {
            v: WIRE_VERSION,
            id: &id,
            task: "parameterize",
            clip: None,
            video_id: Some(&segment.video_id),
            span: Some(segment.span),
            frames: self.frame_paths(&segment.frames, &id)?,
            hint,
        };
        let resp = self.call(&req)?;
        let missing = |what: &str| IdmError::Adapter {
            request_id: id.clone(),
            message: format!("parameterize response missing {what}"),
        };
        let out = ParamOutput {
            action: resp.action.ok_or_else(|| missing("action"))?,
            params: resp.params.ok_or_else(|| missing("params"))?,
            confidence: resp.confidence.unwrap_or(1.0),
            hint_disagreement: resp.hint_disagreement.unwrap_or(false),
        };
        out.check().map_err(|message| IdmError::Adapter { request_id: id, message })?;
        Ok(out)
    }
}

impl Drop for ExternalAdapter {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.child.lock() {
            if let Some(state) = guard.take() {
                state.kill();
            }
        }
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::logconv::Clip;
    use crate::sampling::plan_samples;
    use crate::types::Frame;
    use std::path::Path;

    fn write_stub(dir: &Path, body: &str) -> Vec<String> {
        let path = dir.join("stub.py");
        std::fs::write(&path, body).unwrap();
        vec!["python3".into(), path.to_string_lossy().into_owned()]
    }

    fn frame_fixture(dir: &Path) -> Frame {
        let path = dir.join("frame_000000.png");
        image::GrayImage::from_pixel(4, 4, image::Luma([9]))
            .save(&path)
            .unwrap();
        Frame { timestamp_s: 0.0, image: image::GrayImage::new(4, 4), path: Some(path) }
    }

    fn clip_input(dir: &Path) -> ClipInput {
        ClipInput {
            clip: Clip {
                clip_id: "v_clip0000".into(),
                video_id: "v".into(),
                t_offset_s: 0.0,
                duration_s: 10.0,
                fps: 4.0,
                spans: vec![],
            },
            frames: vec![frame_fixture(dir)],
        }
    }

    const ECHO_STUB: &str = r#"
import sys, json
for line in sys.stdin:
    req = json.loads(line)
    resp = {"v": 1, "id": req["id"], "ok": True}
    if req["task"] == "detect":
        resp["spans"] = [{"action": "click", "t_start_s": 1.5, "t_end_s": 2.0}]
    else:
        if req.get("hint") == "press":
            resp = {"v": 1, "id": req["id"], "ok": False, "error": "press unsupported"}
        else:
            resp["action"] = "click"
            resp["params"] = {"frame_w_px": 100, "frame_h_px": 100,
                              "click": {"x_px": 5, "y_px": 6, "button": "left", "count": 1}}
            resp["confidence"] = 0.9
    print(json.dumps(resp), flush=True)
"#;

    fn adapter(command: Vec<String>) -> ExternalAdapter {
        ExternalAdapter::new(AdapterConfig {
            transport: AdapterTransport::Subprocess { command },
            timeout_ms: 10_000,
            max_in_flight: 2,
        })
        .unwrap()
    }

    #[test]
    fn subprocess_detect_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = adapter(write_stub(dir.path(), ECHO_STUB));
        let out = a.detect(&clip_input(dir.path())).unwrap();
        assert_eq!(out.spans, vec![TypedSpan::new(ActionTypeCoarse::Click, 1.5, 2.0)]);
    }

    #[test]
    fn subprocess_parameterize_and_app_error() {
        let dir = tempfile::tempdir().unwrap();
        let a = adapter(write_stub(dir.path(), ECHO_STUB));
        let span = TypedSpan::new(ActionTypeCoarse::Click, 1.0, 1.4);
        let segment = SegmentInput {
            video_id: "v".into(),
            span,
            plan: plan_samples(&span).unwrap(),
            frames: vec![frame_fixture(dir.path())],
        };
        let out = a.parameterize(&segment, Some(ActionTypeCoarse::Click)).unwrap();
        assert_eq!(out.action, ActionTypeCoarse::Click);
        assert_eq!(out.confidence, 0.9);

        let err = a.parameterize(&segment, Some(ActionTypeCoarse::Press)).unwrap_err();
        match err {
            IdmError::Adapter { request_id, message } => {
                assert!(request_id.starts_with("req-"), "{request_id}");
                assert!(message.contains("press unsupported"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn crashing_adapter_is_respawned_once() {
        let dir = tempfile::tempdir().unwrap();
        // Dies without replying on the first spawn, then behaves.
        let stub = format!(
            r#"
import sys, json, os, pathlib
marker = pathlib.Path({marker:?})
for line in sys.stdin:
    req = json.loads(line)
    if not marker.exists():
        marker.touch()
        os._exit(1)
    print(json.dumps({{"v": 1, "id": req["id"], "ok": True, "spans": []}}), flush=True)
"#,
            marker = dir.path().join("crashed.marker").to_string_lossy()
        );
        let a = adapter(write_stub(dir.path(), &stub));
        let out = a.detect(&clip_input(dir.path())).unwrap();
        assert!(out.spans.is_empty());
    }

    #[test]
    fn persistent_failure_reports_request_id() {
        let dir = tempfile::tempdir().unwrap();
        let stub = write_stub(dir.path(), "import os\nos._exit(1)\n");
        let a = adapter(stub);
        let err = a.detect(&clip_input(dir.path())).unwrap_err();
        assert!(matches!(err, IdmError::Adapter { ref request_id, .. } if request_id == "req-000000"));
    }

    #[test]
    fn http_transport_round_trip() {
        use std::io::Read;
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut byte = [0u8; 1];
            // Read headers.
            while !buf.ends_with(b"\r\n\r\n") {
                stream.read_exact(&mut byte).unwrap();
                buf.push(byte[0]);
            }
            let headers = String::from_utf8_lossy(&buf).to_lowercase();
            let len: usize = headers
                .lines()
                .find_map(|l| l.strip_prefix("content-length:"))
                .unwrap()
                .trim()
                .parse()
                .unwrap();
            let mut body = vec![0u8; len];
            stream.read_exact(&mut body).unwrap();
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let resp = serde_json::json!({
                "v": 1, "id": req["id"], "ok": true,
                "spans": [{"action": "scroll", "t_start_s": 0.5, "t_end_s": 1.0}]
            })
            .to_string();
            let out = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{}",
                resp.len(),
                resp
            );
            stream.write_all(out.as_bytes()).unwrap();
        });

        let dir = tempfile::tempdir().unwrap();
        let a = ExternalAdapter::new(AdapterConfig {
            transport: AdapterTransport::Http { endpoint: format!("http://{addr}/idm") },
            timeout_ms: 10_000,
            max_in_flight: 1,
        })
        .unwrap();
        let out = a.detect(&clip_input(dir.path())).unwrap();
        assert_eq!(out.spans, vec![TypedSpan::new(ActionTypeCoarse::Scroll, 0.5, 1.0)]);
        server.join().unwrap();
    }

    #[test]
    fn memory_frames_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = adapter(write_stub(dir.path(), ECHO_STUB));
        let mut input = clip_input(dir.path());
        input.frames[0].path = None;
        let err = a.detect(&input).unwrap_err();
        assert!(matches!(err, IdmError::Adapter { .. }));
    }
}
