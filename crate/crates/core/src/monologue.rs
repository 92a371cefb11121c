//! Inner-monologue generation: builds the per-step prompt, obtains the
//! strict two-field output from a language-model client (or the offline
//! stub), and lint-validates it.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::actions;
use crate::llm::{LlmClient, LlmError};
use crate::types::{ActionParams, ActionTypeCoarse, FrameRef, Monologue, TypedSpan};

/// ASR context windows around a step: one minute before, the span itself,
/// one minute after.
pub const ASR_WINDOW_S: f64 = 60.0;

#[derive(Debug, thiserror::Error)]
pub enum MonologueError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("response is not exactly one JSON object: {0}")]
    NotSingleObject(String),
    #[error("output contract violated after one reprompt: {0:?}")]
    SchemaViolations(Vec<MonologueViolation>),
}

// ---------------------------------------------------------------------------
// Context assembly
// ---------------------------------------------------------------------------

/// A timed transcript, e.g. from ASR captions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTrack {
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub text: String,
}

impl TranscriptTrack {
    /// Concatenated text of entries overlapping `[lo, hi]`.
    pub fn snippet(&self, lo: f64, hi: f64) -> String {
        let mut parts = Vec::new();
        for e in &self.entries {
            if e.t_start_s < hi && e.t_end_s > lo {
                parts.push(e.text.as_str());
            }
        }
        parts.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsrWindows {
    pub before: (f64, f64),
    pub during: (f64, f64),
    pub after: (f64, f64),
}

/// Window arithmetic, clipped to the video bounds.
pub fn asr_windows(span: &TypedSpan, video_duration_s: f64) -> AsrWindows {
    AsrWindows {
        before: ((span.t_start_s - ASR_WINDOW_S).max(0.0), span.t_start_s),
        during: (span.t_start_s, span.t_end_s),
        after: (span.t_end_s, (span.t_end_s + ASR_WINDOW_S).min(video_duration_s)),
    }
}

/// Everything the prompt needs for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonologueContext {
    pub action: ActionTypeCoarse,
    pub params: ActionParams,
    pub pre_frame: FrameRef,
    pub post_frame: Option<FrameRef>,
    pub asr_before: String,
    pub asr_during: String,
    pub asr_after: String,
    /// Optional validator note rendered as the fourth evidence block.
    #[serde(default)]
    pub validation_note: Option<String>,
}

impl MonologueContext {
    pub fn new(
        action: ActionTypeCoarse,
        params: ActionParams,
        span: &TypedSpan,
        pre_frame: FrameRef,
        post_frame: Option<FrameRef>,
        transcript: &TranscriptTrack,
        video_duration_s: f64,
    ) -> MonologueContext {
        let w = asr_windows(span, video_duration_s);
        MonologueContext {
            action,
            params,
            pre_frame,
            post_frame,
            asr_before: transcript.snippet(w.before.0, w.before.1),
            asr_during: transcript.snippet(w.during.0, w.during.1),
            asr_after: transcript.snippet(w.after.0, w.after.1),
            validation_note: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Prompt
// ---------------------------------------------------------------------------

fn frame_slot(f: &FrameRef) -> String {
    format!("<frame video={} t={:.3} path={}>", f.video_id, f.timestamp_s, f.path.display())
}

/// Renders the generation prompt: the four evidence blocks (action details,
/// keyframes, transcripts, optional validation) followed by the fixed
/// instruction. Byte-for-byte deterministic for equal contexts.
pub fn build_prompt(ctx: &MonologueContext) -> String {
    let mut p = String::new();
    p.push_str(
        "You are generating inner-monologue annotations for a dataset of GUI agent \
         trajectories built from in-the-wild screen recordings.\n\n",
    );
    p.push_str("## Evidence\n\n### Action details\n");
    p.push_str(&format!("Action type: {}\n", ctx.action));
    p.push_str(&format!("Action content: {}\n", actions::render(&ctx.params)));
    p.push_str(&format!(
        "Frame size: {}x{} px\n",
        ctx.params.frame_w_px, ctx.params.frame_h_px
    ));
    p.push_str("\n### Keyframes\n");
    p.push_str(&format!("Start keyframe: {}\n", frame_slot(&ctx.pre_frame)));
    match &ctx.post_frame {
        Some(f) => p.push_str(&format!("End keyframe: {}\n", frame_slot(f))),
        None => p.push_str(
            "End keyframe: none. Only a start keyframe is available; focus on intent.\n",
        ),
    }
    p.push_str("\n### Transcripts\n");
    p.push_str(&format!("Before (60 s window): {:?}\n", ctx.asr_before));
    p.push_str(&format!("During the action: {:?}\n", ctx.asr_during));
    p.push_str(&format!("After (60 s window): {:?}\n", ctx.asr_after));
    p.push_str("\n### Action validation\n");
    match &ctx.validation_note {
        Some(note) => p.push_str(&format!("Validator note: {note}\n")),
        None => p.push_str("No validator note is available for this step.\n"),
    }
    p.push_str(PROMPT_INSTRUCTION);
    p
}

/// The fixed instruction: setting, task, strict field definitions, and
/// general rules.
const PROMPT_INSTRUCTION: &str = "\n## Setting\n\
- Source: real GUI screen recordings from the wild.\n\
- Each GUI interaction (an action) was automatically detected from video/audio.\n\
- For every detected action you receive three kinds of evidence, shown above: \
action details (the action type, plus content such as coordinates or a bbox, typed text, \
pressed keys, scroll amount/direction, or drag start/end), keyframes (a start screenshot \
and, if available, an end screenshot right after the action executes), and surrounding \
transcripts (short snippets of narration immediately before, during, and after the action). \
An optional action-validation note may summarize what occurred.\n\
\n## Your task\n\
For each action, output exactly one JSON object with two fields: action_description and thought.\n\
\n## Field definitions (strict)\n\
- action_description: a concise natural-language description of what I do in the UI at this \
step. Name the target UI element if inferable (button, menu, tab, field); otherwise describe \
it by role, label, or relative position. Mention the immediate visible outcome only if it is \
clearly observable. Forbidden: raw coordinates, code, function or method names, automation \
tokens, key-value argument lists.\n\
- thought: my first-person inner monologue (4-8 sentences) as the demonstrator (use \"I\", \
\"me\", \"my\"). Provide substantive reasoning. Include: (a) what I aim to accomplish and why \
now; (b) how the speech context informs my intent, woven in naturally; (c) a brief summary of \
what likely changes from start to end if both frames exist; (d) a short breakdown of the \
atomic actions in this step and why each is needed; (e) what I expect to verify or do next. \
Prefer present tense when natural.\n\
\n## General rules\n\
- The thought must be in first person; never switch to third person.\n\
- Evidence priority: prefer visual evidence from the start/end keyframes; treat speech as a \
weak hint for why. If they conflict, prefer visuals.\n\
- Weave evidence naturally without naming \"transcripts\" or \"frames\".\n\
- For coordinate-based actions, a red hollow circle may mark the interaction point; do not \
mention the marker, describe the target element instead.\n\
- If only a start keyframe is available, focus on intent; if an end keyframe exists, you may \
include the immediate visible result.\n\
- When a step bundles multiple atomic actions, reason across them as one coherent operation.\n\
- Keep action_description concise; let thought carry the details; avoid hedging and \
boilerplate.\n\
- Output format: exactly one valid JSON object with only action_description and thought; no \
extra keys or commentary.\n";

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MonologueViolation {
    NotAnObject,
    MissingField(String),
    NonStringField(String),
    ExtraKey(String),
    EmptyField(String),
    /// `action_description` contains a coordinate-like integer pair.
    CoordinatePattern(String),
    /// `action_description` contains function-call syntax.
    FunctionCallSyntax(String),
    /// `thought` has no first-person token.
    MissingFirstPerson,
}

impl std::fmt::Display for MonologueViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NotAnObject => write!(f, "response is not a JSON object"),
            Self::MissingField(k) => write!(f, "missing field {k}"),
            Self::NonStringField(k) => write!(f, "field {k} is not a string"),
            Self::ExtraKey(k) => write!(f, "extra key {k}"),
            Self::EmptyField(k) => write!(f, "field {k} is empty"),
            Self::CoordinatePattern(m) => {
                write!(f, "action_description contains a coordinate pattern ({m})")
            }
            Self::FunctionCallSyntax(m) => {
                write!(f, "action_description contains function-call syntax ({m})")
            }
            Self::MissingFirstPerson => write!(f, "thought has no first-person token"),
        }
    }
}

/// Integer pairs like `512, 384`, `(512, 384)`, or `[512,384]`. Years and
/// version pairs are accepted as false positives; the lint is conservative.
static COORD_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d{1,5}\s*,\s*\d{1,5}").expect("static regex"));
/// An identifier immediately followed by `(`.
static CALL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z_][A-Za-z0-9_]*\(").expect("static regex"));
static FIRST_PERSON_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(^|[^A-Za-z])(I|I'm|I'll|I've|I'd|me|my|mine|myself)([^A-Za-z]|$)"#)
        .expect("static regex")
});

fn first_person_ok(thought: &str) -> bool {
    // "me"/"my" are accepted case-insensitively; bare "i" is not, to avoid
    // matching list markers.
    if FIRST_PERSON_RE.is_match(thought) {
        return true;
    }
    thought
        .split(|c: char| !c.is_alphanumeric() && c != '\'')
        .any(|tok| matches!(tok.to_ascii_lowercase().as_str(), "me" | "my" | "mine" | "myself"))
}

/// Lints a typed monologue. Empty result iff compliant; the sentence-count
/// guidance is a warning, see [`sentence_count_warning`].
pub fn validate_monologue(m: &Monologue) -> Vec<MonologueViolation> {
    let mut out = Vec::new();
    if m.action_description.trim().is_empty() {
        out.push(MonologueViolation::EmptyField("action_description".into()));
    }
    if m.thought.trim().is_empty() {
        out.push(MonologueViolation::EmptyField("thought".into()));
    }
    if let Some(found) = COORD_RE.find(&m.action_description) {
        out.push(MonologueViolation::CoordinatePattern(found.as_str().to_string()));
    }
    if let Some(found) = CALL_RE.find(&m.action_description) {
        out.push(MonologueViolation::FunctionCallSyntax(found.as_str().to_string()));
    }
    if !m.thought.trim().is_empty() && !first_person_ok(&m.thought) {
        out.push(MonologueViolation::MissingFirstPerson);
    }
    out
}

/// Schema-level validation of a raw response object (exactly the two string
/// fields), then the lints.
pub fn validate_monologue_value(v: &Value) -> Vec<MonologueViolation> {
    let Value::Object(map) = v else {
        return vec![MonologueViolation::NotAnObject];
    };
    let mut out = Vec::new();
    for key in ["action_description", "thought"] {
        match map.get(key) {
            None => out.push(MonologueViolation::MissingField(key.into())),
            Some(Value::String(_)) => {}
            Some(_) => out.push(MonologueViolation::NonStringField(key.into())),
        }
    }
    for key in map.keys() {
        if key != "action_description" && key != "thought" {
            out.push(MonologueViolation::ExtraKey(key.clone()));
        }
    }
    if !out.is_empty() {
        return out;
    }
    let m = Monologue {
        action_description: map["action_description"].as_str().unwrap_or_default().into(),
        thought: map["thought"].as_str().unwrap_or_default().into(),
    };
    validate_monologue(&m)
}

/// Heuristic sentence-count lint (4-8 sentences expected in `thought`);
/// advisory only, never an error.
pub fn sentence_count_warning(m: &Monologue) -> Option<String> {
    let count = m
        .thought
        .split(['.', '!', '?'])
        .filter(|s| s.trim().chars().any(|c| c.is_alphanumeric()))
        .count();
    if (4..=8).contains(&count) {
        None
    } else {
        Some(format!("thought has {count} sentences; 4-8 expected"))
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

fn parse_single_object(response: &str) -> Result<Value, MonologueError> {
    let trimmed = response.trim();
    let mut stream = serde_json::Deserializer::from_str(trimmed).into_iter::<Value>();
    let first = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(MonologueError::NotSingleObject(e.to_string())),
        None => return Err(MonologueError::NotSingleObject("empty response".into())),
    };
    if stream.next().is_some() {
        return Err(MonologueError::NotSingleObject(
            "more than one JSON value in response".into(),
        ));
    }
    Ok(first)
}

/// Requests a monologue and validates the strict two-field contract. On a
/// violation the client is reprompted once with the violations appended;
/// a second failure is fatal.
pub fn generate(client: &dyn LlmClient, prompt: &str) -> Result<Monologue, MonologueError> {
    let mut current = prompt.to_string();
    let mut last_violations = Vec::new();
    for attempt in 0..2 {
        let response = client.complete(&current)?;
        let value = match parse_single_object(&response) {
            Ok(v) => v,
            Err(e) if attempt == 0 => {
                current = reprompt(prompt, &e.to_string());
                continue;
            }
            Err(e) => return Err(e),
        };
        let violations = validate_monologue_value(&value);
        if violations.is_empty() {
            let map = value.as_object().expect("validated object");
            return Ok(Monologue {
                action_description: map["action_description"]
                    .as_str()
                    .expect("validated string")
                    .to_string(),
                thought: map["thought"].as_str().expect("validated string").to_string(),
            });
        }
        let joined = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        last_violations = violations;
        if attempt == 0 {
            current = reprompt(prompt, &joined);
        }
    }
    Err(MonologueError::SchemaViolations(last_violations))
}

fn reprompt(prompt: &str, violation: &str) -> String {
    format!(
        "{prompt}\n## Correction required\nYour previous response violated the output \
         contract: {violation}. Respond again with exactly one JSON object containing only \
         action_description and thought.\n"
    )
}

/// Generates monologues for a batch of prompts with a concurrency bound.
/// Results keep the input order; per-step retries happen inside each slot.
pub fn generate_batch(
    client: &dyn LlmClient,
    prompts: &[String],
    max_concurrency: usize,
) -> Vec<Result<Monologue, MonologueError>> {
    let bound = max_concurrency.max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: Vec<Option<Result<Monologue, MonologueError>>> =
        (0..prompts.len()).map(|_| None).collect();
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..bound.min(prompts.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= prompts.len() {
                    break;
                }
                let r = generate(client, &prompts[i]);
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.expect("every slot filled")).collect()
}

// ---------------------------------------------------------------------------
// Offline stub
// ---------------------------------------------------------------------------

/// Deterministic offline generator: reads the evidence block back out of
/// the prompt and composes a compliant monologue from the action type,
/// parameters, and transcript keywords. Compliant by construction, so the
/// whole pipeline runs without network access.
#[derive(Debug, Default, Clone)]
pub struct StubLlmClient;

fn prompt_line<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(prefix))
}

/// Replaces lint-triggering fragments so echoed evidence can never make the
/// stub non-compliant.
fn sanitize(text: &str) -> String {
    let no_coords = COORD_RE.replace_all(text, "\u{2026}");
    CALL_RE.replace_all(&no_coords, "\u{2026}").into_owned()
}

fn keyword(prompt: &str) -> Option<String> {
    let during = prompt_line(prompt, "During the action: ")?;
    let during: String = serde_json::from_str(during.trim()).ok()?;
    let word = during
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .find(|w| w.len() >= 4)?
        .to_ascii_lowercase();
    Some(sanitize(&word))
}

impl LlmClient for StubLlmClient {
    fn name(&self) -> &'static str {
        "stub"
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let action = prompt_line(prompt, "Action type: ").unwrap_or("click").trim();
        let content = prompt_line(prompt, "Action content: ").unwrap_or("").trim();
        let has_post = !prompt.contains("End keyframe: none.");
        let narration = keyword(prompt);

        let typed_text = content
            .strip_prefix("type(text=")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|lit| serde_json::from_str::<String>(lit).ok())
            .map(|t| sanitize(&t));
        let keys = content
            .strip_prefix("press(keys=[")
            .and_then(|rest| rest.strip_suffix("])"))
            .map(|l| sanitize(&l.replace('"', "")));

        let description = match action {
            "type" => match &typed_text {
                Some(t) => format!("Type \"{t}\" into the focused field."),
                None => "Type into the focused field.".to_string(),
            },
            "press" => match &keys {
                Some(k) => format!("Press the {k} key sequence."),
                None => "Press a key.".to_string(),
            },
            "scroll" => "Scroll the visible content to bring the next part into view.".to_string(),
            "drag" => "Drag the selected element to its destination.".to_string(),
            _ => "Click the target control in the interface.".to_string(),
        };

        let mut thought = String::new();
        thought.push_str(&match action {
            "type" => "I need to enter text here, so I focus the field first.".to_string(),
            "press" => "I want to trigger the shortcut for this step.".to_string(),
            "scroll" => "I cannot see the part I need yet, so I move the view.".to_string(),
            "drag" => "I have to move this element rather than just select it.".to_string(),
            _ => "I locate the control I need for the next step.".to_string(),
        });
        match narration {
            Some(kw) if !kw.is_empty() => {
                thought.push_str(&format!(
                    " The narration around \"{kw}\" tells me why this step matters now."
                ));
            }
            _ => thought.push_str(" There is no narration here, so I rely on what I see."),
        }
        match action {
            "type" => match &typed_text {
                Some(t) => thought.push_str(&format!(" I type \"{t}\" carefully.")),
                None => thought.push_str(" I type the needed text carefully."),
            },
            "press" => match &keys {
                Some(k) => thought.push_str(&format!(" I press {k} in one motion.")),
                None => thought.push_str(" I press the key in one motion."),
            },
            _ => thought.push_str(" I perform the action in a single deliberate motion."),
        }
        if has_post {
            thought.push_str(" Comparing the before and after states, the interface has moved on as I intended.");
        } else {
            thought.push_str(" I keep my intent in mind since I can only see the starting state.");
        }
        thought.push_str(" Next I will verify the result before continuing.");

        let obj = serde_json::json!({
            "action_description": sanitize(&description),
            "thought": thought,
        });
        Ok(obj.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{MouseButton, ParamPayload};
    use std::sync::Mutex;

    fn ctx(action: ActionTypeCoarse, payload: ParamPayload) -> MonologueContext {
        let span = TypedSpan::new(action, 65.0, 67.0);
        let transcript = TranscriptTrack {
            entries: vec![
                TranscriptEntry { t_start_s: 10.0, t_end_s: 64.0, text: "now we rename the budget file".into() },
                TranscriptEntry { t_start_s: 65.2, t_end_s: 66.0, text: "typing the name".into() },
                TranscriptEntry { t_start_s: 80.0, t_end_s: 90.0, text: "and save".into() },
            ],
        };
        MonologueContext::new(
            action,
            ActionParams::new(1280, 720, payload),
            &span,
            FrameRef { video_id: "vid".into(), timestamp_s: 65.0, path: "f/a.png".into() },
            Some(FrameRef { video_id: "vid".into(), timestamp_s: 67.0, path: "f/b.png".into() }),
            &transcript,
            300.0,
        )
    }

    fn type_ctx() -> MonologueContext {
        ctx(ActionTypeCoarse::Type, ParamPayload::Type { text: "budget.xlsx".into() })
    }

    #[test]
    fn prompt_is_deterministic_and_complete() {
        let c = type_ctx();
        let a = build_prompt(&c);
        let b = build_prompt(&c);
        assert_eq!(a, b);
        assert!(a.contains("f/a.png"));
        assert!(a.contains("f/b.png"));
        assert!(a.contains("type(text=\"budget.xlsx\")"));
        assert!(a.contains("exactly one JSON object"));
    }

    #[test]
    fn prompt_states_start_only_when_post_frame_missing() {
        let mut c = type_ctx();
        c.post_frame = None;
        let p = build_prompt(&c);
        assert!(p.contains("Only a start keyframe is available"));
    }

    #[test]
    fn prompt_keeps_template_with_empty_transcripts() {
        let mut c = type_ctx();
        c.asr_before.clear();
        c.asr_during.clear();
        c.asr_after.clear();
        let p = build_prompt(&c);
        assert!(p.contains("Before (60 s window): \"\""));
        assert!(p.contains("During the action: \"\""));
    }

    #[test]
    fn asr_windows_are_exact() {
        let span = TypedSpan::new(ActionTypeCoarse::Click, 30.0, 32.0);
        let w = asr_windows(&span, 70.0);
        assert_eq!(w.before, (0.0, 30.0));
        assert_eq!(w.during, (30.0, 32.0));
        assert_eq!(w.after, (32.0, 70.0));

        let span = TypedSpan::new(ActionTypeCoarse::Click, 100.0, 101.0);
        let w = asr_windows(&span, 1000.0);
        assert_eq!(w.before, (40.0, 100.0));
        assert_eq!(w.after, (101.0, 161.0));
    }

    #[test]
    fn stub_output_is_compliant_and_mentions_typing() {
        let prompt = build_prompt(&type_ctx());
        let m = generate(&StubLlmClient, &prompt).unwrap();
        assert!(validate_monologue(&m).is_empty(), "{m:?}");
        assert!(m.action_description.contains("budget.xlsx"));
        assert!(m.action_description.to_lowercase().contains("focused field"));
        assert!(sentence_count_warning(&m).is_none(), "{}", m.thought);
    }

    #[test]
    fn stub_is_compliant_across_action_types() {
        let cases = vec![
            ctx(
                ActionTypeCoarse::Click,
                ParamPayload::Click { x_px: 10, y_px: 20, button: MouseButton::Left, count: 2 },
            ),
            ctx(ActionTypeCoarse::Drag, ParamPayload::Drag { x0_px: 1, y0_px: 2, x1_px: 3, y1_px: 4 }),
            ctx(ActionTypeCoarse::Scroll, ParamPayload::Scroll { dx: 0, dy: -3, horizontal: false }),
            ctx(ActionTypeCoarse::Press, ParamPayload::Press { keys: vec!["ctrl".into(), "s".into()] }),
            // Typed text that would trip the lints if echoed raw.
            ctx(ActionTypeCoarse::Type, ParamPayload::Type { text: "call fn(512, 384) now".into() }),
        ];
        for c in cases {
            let m = generate(&StubLlmClient, &build_prompt(&c)).unwrap();
            assert!(validate_monologue(&m).is_empty(), "{:?} -> {m:?}", c.action);
        }
    }

    #[test]
    fn coordinate_description_is_flagged() {
        let m = Monologue {
            action_description: "click at (512, 384)".into(),
            thought: "I click there.".into(),
        };
        let v = validate_monologue(&m);
        assert!(v.iter().any(|v| matches!(v, MonologueViolation::CoordinatePattern(_))), "{v:?}");
    }

    #[test]
    fn function_call_description_is_flagged() {
        let m = Monologue {
            action_description: "run click(button) on the form".into(),
            thought: "I run it myself.".into(),
        };
        let v = validate_monologue(&m);
        assert!(v.iter().any(|v| matches!(v, MonologueViolation::FunctionCallSyntax(_))));
    }

    #[test]
    fn third_person_thought_is_flagged() {
        let m = Monologue {
            action_description: "Click the save button.".into(),
            thought: "The user clicks the save button and the dialog closes.".into(),
        };
        let v = validate_monologue(&m);
        assert_eq!(v, vec![MonologueViolation::MissingFirstPerson]);
    }

    #[test]
    fn extra_key_is_flagged_at_value_level() {
        let v: Value = serde_json::json!({
            "action_description": "Click the button.",
            "thought": "I click it.",
            "confidence": 0.9,
        });
        let violations = validate_monologue_value(&v);
        assert!(violations
            .iter()
            .any(|v| matches!(v, MonologueViolation::ExtraKey(k) if k == "confidence")));
    }

    struct ScriptedClient {
        responses: Mutex<Vec<String>>,
    }

    impl ScriptedClient {
        fn new(responses: Vec<&str>) -> Self {
            ScriptedClient {
                responses: Mutex::new(responses.into_iter().rev().map(String::from).collect()),
            }
        }
    }

    impl LlmClient for ScriptedClient {
        fn name(&self) -> &'static str {
            "scripted"
        }

        fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
            Ok(self.responses.lock().unwrap().pop().expect("scripted response available"))
        }
    }

    #[test]
    fn two_json_objects_fail_after_retry() {
        let bad = r#"{"action_description":"x","thought":"I do."} {"extra":1}"#;
        let client = ScriptedClient::new(vec![bad, bad]);
        let err = generate(&client, "prompt").unwrap_err();
        assert!(matches!(err, MonologueError::NotSingleObject(_)));
    }

    #[test]
    fn reprompt_recovers_from_one_violation() {
        let bad = r#"{"action_description":"Click at 512, 384","thought":"I click."}"#;
        let good = r#"{"action_description":"Click the save button.","thought":"I click it now."}"#;
        let client = ScriptedClient::new(vec![bad, good]);
        let m = generate(&client, "prompt").unwrap();
        assert_eq!(m.action_description, "Click the save button.");
    }

    #[test]
    fn persistent_violation_is_fatal_with_details() {
        let bad = r#"{"action_description":"ok","thought":"The user does things."}"#;
        let client = ScriptedClient::new(vec![bad, bad]);
        match generate(&client, "prompt").unwrap_err() {
            MonologueError::SchemaViolations(v) => {
                assert_eq!(v, vec![MonologueViolation::MissingFirstPerson]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn batch_generation_preserves_order() {
        let prompts: Vec<String> = (0..20)
            .map(|i| {
                build_prompt(&ctx(
                    ActionTypeCoarse::Type,
                    ParamPayload::Type { text: format!("file_{i}.txt") },
                ))
            })
            .collect();
        let results = generate_batch(&StubLlmClient, &prompts, 4);
        assert_eq!(results.len(), 20);
        for (i, r) in results.iter().enumerate() {
            let m = r.as_ref().unwrap();
            assert!(
                m.action_description.contains(&format!("file_{i}.txt")),
                "slot {i}: {m:?}"
            );
        }
    }
}
