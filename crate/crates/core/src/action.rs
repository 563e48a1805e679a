//! Action grammar: parsing model output into typed actions and serializing
//! actions back to their canonical command syntax.
//!
//! The canonical command string (e.g. `click [5]`, `type [81] [guitar] [1]`)
//! is also the key used when aggregating votes over sampled completions, so
//! two raw outputs that mean the same action always canonicalize identically.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker phrase that precedes the action block in agent completions.
pub const ACTION_MARKER: &str = "In summary, the next action I will perform is";

/// Scroll direction for the `scroll` action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrollDirection {
    Up,
    Down,
}

impl fmt::Display for ScrollDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScrollDirection::Up => write!(f, "up"),
            ScrollDirection::Down => write!(f, "down"),
        }
    }
}

/// A typed browser action.
///
/// String arguments (`text`, `answer`, `key_comb`, `url`) are stored without
/// leading or trailing whitespace and must not rely on unbalanced square
/// brackets; the parser trims at most one space on each side of a bracketed
/// argument.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Click { element_id: u64 },
    Hover { element_id: u64 },
    Type { element_id: u64, text: String, press_enter_after: bool },
    Press { key_comb: String },
    NewTab,
    TabFocus { tab_index: usize },
    TabClose,
    Goto { url: String },
    GoBack,
    GoForward,
    Scroll { direction: ScrollDirection },
    Stop { answer: String },
}

impl Action {
    /// Canonical command syntax: lowercase keyword, single spaces, arguments
    /// in square brackets. This string is the vote-counting key.
    pub fn command(&self) -> String {
        match self {
            Action::Click { element_id } => format!("click [{element_id}]"),
            Action::Hover { element_id } => format!("hover [{element_id}]"),
            Action::Type { element_id, text, press_enter_after } => {
                let enter = if *press_enter_after { 1 } else { 0 };
                format!("type [{element_id}] [{text}] [{enter}]")
            }
            Action::Press { key_comb } => format!("press [{key_comb}]"),
            Action::NewTab => "new_tab".to_string(),
            Action::TabFocus { tab_index } => format!("tab_focus [{tab_index}]"),
            Action::TabClose => "tab_close".to_string(),
            Action::Goto { url } => format!("goto [{url}]"),
            Action::GoBack => "go_back".to_string(),
            Action::GoForward => "go_forward".to_string(),
            Action::Scroll { direction } => format!("scroll [{direction}]"),
            Action::Stop { answer } => {
                if answer.is_empty() {
                    "stop".to_string()
                } else {
                    format!("stop [{answer}]")
                }
            }
        }
    }

    /// True for `stop`; the episode loop ends once a stop action is committed.
    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Stop { .. })
    }

    /// Element id targeted by this action, if it has one.
    pub fn element_id(&self) -> Option<u64> {
        match self {
            Action::Click { element_id }
            | Action::Hover { element_id }
            | Action::Type { element_id, .. } => Some(*element_id),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.command())
    }
}

/// Why a raw completion failed to parse into an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("no action marker or backtick block found")]
    NoActionMarker,
    #[error("unrecognized action keyword")]
    UnknownKind,
    #[error("malformed action arguments")]
    MalformedArguments,
    #[error("multiple conflicting actions in one block")]
    MultipleConflictingActions,
}

/// Result of parsing a raw completion. `Err` carries the failure reason.
pub type ParseOutcome = Result<Action, ParseFailure>;

static CLICK_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:click|hover)\s*\[\s*(\d+)\s*\]$").unwrap());
static TYPE3_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^type\s*\[\s*(\d+)\s*\]\s*\[(.*)\]\s*\[\s*([01])\s*\]$").unwrap());
static TYPE2_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^type\s*\[\s*(\d+)\s*\]\s*\[(.*)\]$").unwrap());
static PRESS_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^press\s*\[(.*)\]$").unwrap());
static TAB_FOCUS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^tab_focus\s*\[\s*(\d+)\s*\]$").unwrap());
static GOTO_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^goto\s*\[(.*)\]$").unwrap());
static SCROLL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^scroll\s*\[?\s*(?i)(up|down)\s*\]?$").unwrap());
static STOP_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^stop(?:\s*\[(.*)\])?$").unwrap());

/// Strip at most one leading and one trailing space from a bracketed argument.
fn trim_one_space(s: &str) -> &str {
    let s = s.strip_prefix(' ').unwrap_or(s);
    s.strip_suffix(' ').unwrap_or(s)
}

/// Parse a single bare command line, e.g. `click [5]`.
///
/// The keyword is matched case-insensitively; `close_tab` is accepted as an
/// alias for `tab_close` since the standard agent prompt uses that spelling.
pub fn parse_command(line: &str) -> ParseOutcome {
    let line = line.trim();
    if line.is_empty() {
        return Err(ParseFailure::UnknownKind);
    }
    let keyword: String = line
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
        .collect::<String>()
        .to_ascii_lowercase();
    // Normalize the keyword portion to lowercase, leave arguments untouched.
    let lowered = format!("{}{}", keyword, &line[keyword.len()..]);
    let rest = lowered[keyword.len()..].trim();

    match keyword.as_str() {
        "click" | "hover" => {
            let caps = CLICK_RE.captures(&lowered).ok_or(ParseFailure::MalformedArguments)?;
            let element_id: u64 =
                caps[1].parse().map_err(|_| ParseFailure::MalformedArguments)?;
            if keyword == "click" {
                Ok(Action::Click { element_id })
            } else {
                Ok(Action::Hover { element_id })
            }
        }
        "type" => {
            if let Some(caps) = TYPE3_RE.captures(&lowered) {
                let element_id: u64 =
                    caps[1].parse().map_err(|_| ParseFailure::MalformedArguments)?;
                Ok(Action::Type {
                    element_id,
                    text: trim_one_space(&caps[2]).to_string(),
                    press_enter_after: &caps[3] == "1",
                })
            } else if let Some(caps) = TYPE2_RE.captures(&lowered) {
                let element_id: u64 =
                    caps[1].parse().map_err(|_| ParseFailure::MalformedArguments)?;
                // Enter is pressed after typing unless the third argument is 0.
                Ok(Action::Type {
                    element_id,
                    text: trim_one_space(&caps[2]).to_string(),
                    press_enter_after: true,
                })
            } else {
                Err(ParseFailure::MalformedArguments)
            }
        }
        "press" => {
            let caps = PRESS_RE.captures(&lowered).ok_or(ParseFailure::MalformedArguments)?;
            Ok(Action::Press { key_comb: trim_one_space(&caps[1]).to_string() })
        }
        "new_tab" => {
            if rest.is_empty() {
                Ok(Action::NewTab)
            } else {
                Err(ParseFailure::MalformedArguments)
            }
        }
        "tab_focus" => {
            let caps = TAB_FOCUS_RE.captures(&lowered).ok_or(ParseFailure::MalformedArguments)?;
            let tab_index: usize =
                caps[1].parse().map_err(|_| ParseFailure::MalformedArguments)?;
            Ok(Action::TabFocus { tab_index })
        }
        "tab_close" | "close_tab" => {
            if rest.is_empty() {
                Ok(Action::TabClose)
            } else {
                Err(ParseFailure::MalformedArguments)
            }
        }
        "goto" => {
            let caps = GOTO_RE.captures(&lowered).ok_or(ParseFailure::MalformedArguments)?;
            Ok(Action::Goto { url: trim_one_space(&caps[1]).to_string() })
        }
        "go_back" => {
            if rest.is_empty() {
                Ok(Action::GoBack)
            } else {
                Err(ParseFailure::MalformedArguments)
            }
        }
        "go_forward" => {
            if rest.is_empty() {
                Ok(Action::GoForward)
            } else {
                Err(ParseFailure::MalformedArguments)
            }
        }
        "scroll" => {
            let caps = SCROLL_RE.captures(&lowered).ok_or(ParseFailure::MalformedArguments)?;
            let direction = if caps[1].eq_ignore_ascii_case("up") {
                ScrollDirection::Up
            } else {
                ScrollDirection::Down
            };
            Ok(Action::Scroll { direction })
        }
        "stop" => {
            let caps = STOP_RE.captures(&lowered).ok_or(ParseFailure::MalformedArguments)?;
            let answer = caps.get(1).map(|m| trim_one_space(m.as_str())).unwrap_or("");
            Ok(Action::Stop { answer: answer.to_string() })
        }
        _ => Err(ParseFailure::UnknownKind),
    }
}

/// All triple-backtick block contents in `text`, in order of appearance.
fn backtick_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(open) = rest.find("```") {
        let after_open = open + 3;
        match rest[after_open..].find("```") {
            Some(close) => {
                blocks.push(&text[offset + after_open..offset + after_open + close]);
                let consumed = after_open + close + 3;
                offset += consumed;
                rest = &rest[consumed..];
            }
            None => break,
        }
    }
    blocks
}

/// Parse the contents of one backtick block. Multi-line blocks are accepted
/// when every parseable line agrees on the same action; distinct well-formed
/// actions in one block are a conflict.
fn parse_block(block: &str) -> ParseOutcome {
    let lines: Vec<&str> = block.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.is_empty() {
        return Err(ParseFailure::UnknownKind);
    }
    if lines.len() == 1 {
        return parse_command(lines[0]);
    }
    let mut parsed: Vec<Action> = Vec::new();
    let mut last_err = ParseFailure::UnknownKind;
    for line in &lines {
        match parse_command(line) {
            Ok(action) => {
                if !parsed.contains(&action) {
                    parsed.push(action);
                }
            }
            Err(e) => last_err = e,
        }
    }
    match parsed.len() {
        0 => Err(last_err),
        1 => Ok(parsed.remove(0)),
        _ => Err(ParseFailure::MultipleConflictingActions),
    }
}

/// Parse a raw model completion into an action.
///
/// The action is the content of the last triple-backtick block following the
/// final occurrence of the marker phrase. When the phrase is absent, the last
/// backtick block anywhere in the output is used instead. Never panics; every
/// input maps to a [`ParseOutcome`].
pub fn parse_action(raw: &str) -> ParseOutcome {
    let lowered = raw.to_ascii_lowercase();
    let marker = ACTION_MARKER.to_ascii_lowercase();
    let search_from = lowered.rfind(&marker).map(|idx| idx + marker.len());
    let region = match search_from {
        Some(idx) => &raw[idx..],
        None => raw,
    };
    let mut blocks = backtick_blocks(region);
    if blocks.is_empty() && search_from.is_some() {
        // Marker present but no block after it; fall back to the whole output.
        blocks = backtick_blocks(raw);
    }
    match blocks.last() {
        Some(block) => parse_block(block),
        None => Err(ParseFailure::NoActionMarker),
    }
}
