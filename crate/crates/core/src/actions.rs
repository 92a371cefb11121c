//! Canonical action strings: the textual action rendering used in
//! serialized training sequences, bijective with [`ParamPayload`] given the
//! frame dimensions.
//!
//! Grammar (EBNF):
//!
//! ```text
//! action  = click | drag | scroll | press | type ;
//! click   = "click(x=" int ", y=" int ", button=" button ", count=" count ")" ;
//! drag    = "drag(x0=" int ", y0=" int ", x1=" int ", y1=" int ")" ;
//! scroll  = "scroll(dx=" int ", dy=" int ", horizontal=" bool ")" ;
//! press   = "press(keys=[" string { ", " string } "])" ;
//! type    = "type(text=" string ")" ;
//! button  = "left" | "right" | "middle" ;
//! count   = "1" | "2" | "3" ;
//! bool    = "true" | "false" ;
//! int     = [ "-" ] digit { digit } ;
//! string  = JSON string literal (double-quoted, escaped) ;
//! ```
//!
//! Frame dimensions are not part of the string; they come from the
//! surrounding context (the keyframe) and are supplied to [`parse`].

use std::fmt::Write as _;

use crate::types::{ActionParams, MouseButton, ParamPayload};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid action string at {at}: {message}")]
pub struct ActionStrError {
    pub at: usize,
    pub message: String,
}

fn err(at: usize, message: impl Into<String>) -> ActionStrError {
    ActionStrError { at, message: message.into() }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// Renders the payload as a canonical action string.
pub fn render(params: &ActionParams) -> String {
    let mut out = String::new();
    match &params.payload {
        ParamPayload::Click { x_px, y_px, button, count } => {
            write!(out, "click(x={x_px}, y={y_px}, button={}, count={count})", button.label())
        }
        ParamPayload::Drag { x0_px, y0_px, x1_px, y1_px } => {
            write!(out, "drag(x0={x0_px}, y0={y0_px}, x1={x1_px}, y1={y1_px})")
        }
        ParamPayload::Scroll { dx, dy, horizontal } => {
            write!(out, "scroll(dx={dx}, dy={dy}, horizontal={horizontal})")
        }
        ParamPayload::Press { keys } => {
            let rendered: Vec<String> = keys.iter().map(|k| quote(k)).collect();
            write!(out, "press(keys=[{}])", rendered.join(", "))
        }
        ParamPayload::Type { text } => write!(out, "type(text={})", quote(text)),
    }
    .expect("write to string");
    out
}

/// Splits `inner` on top-level `", "` separators, respecting JSON string
/// quoting.
fn split_args(inner: &str) -> Vec<&str> {
    let bytes = inner.as_bytes();
    let mut parts = Vec::new();
    let mut start = 0;
    let mut in_string = false;
    let mut escaped = false;
    let mut depth = 0usize;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
        } else {
            match b {
                b'"' => in_string = true,
                b'[' => depth += 1,
                b']' => depth = depth.saturating_sub(1),
                b',' if depth == 0 && bytes.get(i + 1) == Some(&b' ') => {
                    parts.push(&inner[start..i]);
                    start = i + 2;
                    i += 1;
                }
                _ => {}
            }
        }
        i += 1;
    }
    parts.push(&inner[start..]);
    parts
}

fn field<'a>(arg: &'a str, key: &str, offset: usize) -> Result<&'a str, ActionStrError> {
    arg.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| err(offset, format!("expected `{key}=`, found {arg:?}")))
}

fn parse_int<T: std::str::FromStr>(s: &str, offset: usize) -> Result<T, ActionStrError> {
    s.parse().map_err(|_| err(offset, format!("bad integer {s:?}")))
}

fn parse_string(s: &str, offset: usize) -> Result<String, ActionStrError> {
    serde_json::from_str(s).map_err(|e| err(offset, format!("bad string literal: {e}")))
}

/// Parses a canonical action string back into parameters. `frame_w_px` and
/// `frame_h_px` supply the coordinate context the string intentionally
/// omits.
pub fn parse(s: &str, frame_w_px: u32, frame_h_px: u32) -> Result<ActionParams, ActionStrError> {
    let open = s.find('(').ok_or_else(|| err(0, "missing `(`"))?;
    let head = &s[..open];
    if !s.ends_with(')') {
        return Err(err(s.len(), "missing trailing `)`"));
    }
    let inner = &s[open + 1..s.len() - 1];
    let args = split_args(inner);
    let at = |k: usize| open + 1 + k;

    let payload = match head {
        "click" => {
            if args.len() != 4 {
                return Err(err(open, format!("click takes 4 arguments, got {}", args.len())));
            }
            let button_s = field(args[2], "button", at(2))?;
            let button: MouseButton = button_s
                .parse()
                .map_err(|_| err(at(2), format!("bad button {button_s:?}")))?;
            let count: u8 = parse_int(field(args[3], "count", at(3))?, at(3))?;
            if !(1..=3).contains(&count) {
                return Err(err(at(3), format!("count {count} outside 1..=3")));
            }
            ParamPayload::Click {
                x_px: parse_int(field(args[0], "x", at(0))?, at(0))?,
                y_px: parse_int(field(args[1], "y", at(1))?, at(1))?,
                button,
                count,
            }
        }
        "drag" => {
            if args.len() != 4 {
                return Err(err(open, format!("drag takes 4 arguments, got {}", args.len())));
            }
            ParamPayload::Drag {
                x0_px: parse_int(field(args[0], "x0", at(0))?, at(0))?,
                y0_px: parse_int(field(args[1], "y0", at(1))?, at(1))?,
                x1_px: parse_int(field(args[2], "x1", at(2))?, at(2))?,
                y1_px: parse_int(field(args[3], "y1", at(3))?, at(3))?,
            }
        }
        "scroll" => {
            if args.len() != 3 {
                return Err(err(open, format!("scroll takes 3 arguments, got {}", args.len())));
            }
            let horizontal = match field(args[2], "horizontal", at(2))? {
                "true" => true,
                "false" => false,
                other => return Err(err(at(2), format!("bad bool {other:?}"))),
            };
            ParamPayload::Scroll {
                dx: parse_int(field(args[0], "dx", at(0))?, at(0))?,
                dy: parse_int(field(args[1], "dy", at(1))?, at(1))?,
                horizontal,
            }
        }
        "press" => {
            if args.len() != 1 {
                return Err(err(open, format!("press takes 1 argument, got {}", args.len())));
            }
            let list = field(args[0], "keys", at(0))?;
            let list = list
                .strip_prefix('[')
                .and_then(|l| l.strip_suffix(']'))
                .ok_or_else(|| err(at(0), "keys must be a [..] list"))?;
            let keys = split_args(list)
                .into_iter()
                .filter(|s| !s.is_empty())
                .map(|k| parse_string(k, at(0)))
                .collect::<Result<Vec<String>, _>>()?;
            if keys.is_empty() {
                return Err(err(at(0), "press requires at least one key"));
            }
            ParamPayload::Press { keys }
        }
        "type" => {
            if args.len() != 1 {
                return Err(err(open, format!("type takes 1 argument, got {}", args.len())));
            }
            let text = parse_string(field(args[0], "text", at(0))?, at(0))?;
            if text.is_empty() {
                return Err(err(at(0), "type requires non-empty text"));
            }
            ParamPayload::Type { text }
        }
        other => return Err(err(0, format!("unknown action {other:?}"))),
    };
    Ok(ActionParams::new(frame_w_px, frame_h_px, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(payload: ParamPayload) {
        let params = ActionParams::new(1920, 1080, payload);
        let s = render(&params);
        let back = parse(&s, 1920, 1080).unwrap_or_else(|e| panic!("{s:?}: {e}"));
        assert_eq!(back, params, "{s}");
        assert_eq!(render(&back), s);
    }

    #[test]
    fn every_variant_round_trips() {
        round_trip(ParamPayload::Click {
            x_px: 340,
            y_px: 220,
            button: MouseButton::Left,
            count: 1,
        });
        round_trip(ParamPayload::Click {
            x_px: 0,
            y_px: 1079,
            button: MouseButton::Middle,
            count: 3,
        });
        round_trip(ParamPayload::Drag { x0_px: 1, y0_px: 2, x1_px: 3, y1_px: 4 });
        round_trip(ParamPayload::Scroll { dx: 0, dy: -7, horizontal: false });
        round_trip(ParamPayload::Press { keys: vec!["ctrl".into(), "shift".into(), "s".into()] });
        round_trip(ParamPayload::Type { text: "budget.xlsx".into() });
    }

    #[test]
    fn hostile_text_round_trips() {
        round_trip(ParamPayload::Type { text: "a, b=\"c\", d)\nnewline, unicode: ಠ_ಠ".into() });
        round_trip(ParamPayload::Press { keys: vec!["], fake".into(), "\\\"".into()] });
        round_trip(ParamPayload::Type { text: "keys=[\"x\"], trailing".into() });
    }

    #[test]
    fn canonical_rendering_is_stable() {
        let params = ActionParams::new(
            800,
            600,
            ParamPayload::Click { x_px: 340, y_px: 220, button: MouseButton::Left, count: 1 },
        );
        assert_eq!(render(&params), "click(x=340, y=220, button=left, count=1)");
    }

    #[test]
    fn malformed_strings_are_rejected() {
        for bad in [
            "clack(x=1, y=2, button=left, count=1)",
            "click(x=1, y=2, button=left)",
            "click(x=1, y=2, button=up, count=1)",
            "click(x=1, y=2, button=left, count=4)",
            "type(text=unquoted)",
            "press(keys=[])",
            "type(text=\"\")",
            "scroll(dx=1, dy=2, horizontal=maybe)",
            "click(x=1, y=2, button=left, count=1",
        ] {
            assert!(parse(bad, 100, 100).is_err(), "{bad}");
        }
    }
}
