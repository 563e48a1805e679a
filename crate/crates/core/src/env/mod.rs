//! Deterministic web-like environment: a declarative page graph stepped with
//! typed actions under value semantics.
//!
//! A definition describes pages, interactive elements, and their navigation
//! and flag effects. States are plain data: stepping never mutates in place,
//! so any prefix of an action sequence can be rematerialized exactly by
//! replaying it from the initial state. Everything is deterministic — the
//! same sequence always yields the same state, which is what makes search
//! with backtracking-by-replay sound.

mod enumerate;

pub use enumerate::{
    enumerate_states, goal_reachable, legal_actions, reachable_states, ReachableState,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::{Action, ScrollDirection};

/// Observation length limit, counted in whitespace-delimited tokens.
pub const OBSERVATION_TOKEN_BUDGET: usize = 3840;

/// Lines visible at one scroll position.
pub const VIEWPORT_LINES: usize = 24;

/// Cap on states visited during exhaustive enumeration.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode already terminated")]
    Terminated,
    #[error("no element [{0}] on the current page")]
    UnknownElement(u64),
    #[error("unknown page '{0}'")]
    UnknownPage(String),
    #[error("action not applicable: {0}")]
    IllegalAction(String),
    #[error("state enumeration exceeded cap of {0}")]
    BudgetExceeded(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] serde_json::Error),
}

/// Element role, rendered into observations the way an accessibility tree
/// names nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Link,
    Button,
    Textbox,
    Img,
    Select,
    Heading,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tag::Link => "link",
            Tag::Button => "button",
            Tag::Textbox => "textbox",
            Tag::Img => "img",
            Tag::Select => "select",
            Tag::Heading => "heading",
        };
        f.write_str(s)
    }
}

/// How an element writes a flag when activated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlagOp {
    #[default]
    Set,
    Append,
}

/// A flag write attached to an element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagAssignment {
    pub flag: String,
    #[serde(default)]
    pub op: FlagOp,
    pub value: String,
}

/// One interactive (or display-only) element on a page.
///
/// `on_type` maps typed text to a target page; the key `"*"` is a wildcard
/// matched when no exact key applies. `irreversible` marks actions whose
/// effects a search must not explore speculatively (e.g. placing an order).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: u64,
    pub tag: Tag,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_click: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub on_type: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub irreversible: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub state_effects: Vec<FlagAssignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub id: String,
    pub url: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub static_text: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub elements: Vec<Element>,
}

/// A complete environment: a named page graph with a designated start page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvDefinition {
    pub name: String,
    pub start_page: String,
    pub pages: Vec<Page>,
}

impl EnvDefinition {
    pub fn page(&self, id: &str) -> Option<&Page> {
        self.pages.iter().find(|p| p.id == id)
    }

    /// Resolve a `goto` target: page id first, then exact url.
    pub fn page_by_id_or_url(&self, target: &str) -> Option<&Page> {
        self.page(target).or_else(|| self.pages.iter().find(|p| p.url == target))
    }

    pub fn element_on(&self, page_id: &str, element_id: u64) -> Option<&Element> {
        self.page(page_id)?.elements.iter().find(|e| e.id == element_id)
    }
}

/// One browser tab: current page, its history stacks, and remembered scroll
/// positions per page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabState {
    pub page: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub back_stack: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forward_stack: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scroll: BTreeMap<String, usize>,
}

impl TabState {
    fn at(page: &str) -> Self {
        TabState {
            page: page.to_string(),
            back_stack: Vec::new(),
            forward_stack: Vec::new(),
            scroll: BTreeMap::new(),
        }
    }
}

/// Full simulator state. Plain data with value semantics: `step` returns a
/// new state and never mutates its input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub tabs: Vec<TabState>,
    pub focused_tab: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub typed: BTreeMap<u64, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub terminated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_answer: Option<String>,
}

impl EnvState {
    pub fn page_id(&self) -> &str {
        &self.tabs[self.focused_tab].page
    }

    fn tab(&self) -> &TabState {
        &self.tabs[self.focused_tab]
    }

    fn tab_mut(&mut self) -> &mut TabState {
        &mut self.tabs[self.focused_tab]
    }

    pub fn scroll_offset(&self) -> usize {
        let tab = self.tab();
        tab.scroll.get(&tab.page).copied().unwrap_or(0)
    }
}

/// Success predicate for a task, evaluated on a final (or intermediate)
/// state together with the agent's stop answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RewardSpec {
    /// Stop answer equals the expected string exactly.
    StopAnswerExact { expected: String },
    /// Stop answer contains the expected substring (case-sensitive).
    StopAnswerContains { expected: String },
    /// Focused tab is on the given page (matched by page id or url).
    UrlMatch { expected: String },
    /// A flag holds exactly the given value.
    FlagEquals { flag: String, value: String },
    /// All sub-conditions hold.
    Conjunction { all: Vec<RewardSpec> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    /// Name of the environment definition this task runs in.
    pub env: String,
    /// Natural-language objective given to the agent.
    pub instruction: String,
    pub reward: RewardSpec,
    /// Site grouping used in result breakdowns; defaults to the env name.
    #[serde(default)]
    pub site: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
}

impl Task {
    /// Site label for reporting: the explicit one, or the env name.
    pub fn site_label(&self) -> &str {
        if self.site.is_empty() { &self.env } else { &self.site }
    }
}

/// Initial state for a definition: one tab on the start page, nothing typed,
/// no flags.
pub fn reset(def: &EnvDefinition) -> EnvState {
    EnvState {
        tabs: vec![TabState::at(&def.start_page)],
        focused_tab: 0,
        typed: BTreeMap::new(),
        flags: BTreeMap::new(),
        terminated: false,
        stop_answer: None,
    }
}

fn apply_flag_effects(state: &mut EnvState, effects: &[FlagAssignment]) {
    for eff in effects {
        match eff.op {
            FlagOp::Set => {
                state.flags.insert(eff.flag.clone(), eff.value.clone());
            }
            FlagOp::Append => {
                let entry = state.flags.entry(eff.flag.clone()).or_default();
                if entry.is_empty() {
                    *entry = eff.value.clone();
                } else {
                    entry.push(',');
                    entry.push_str(&eff.value);
                }
            }
        }
    }
}

/// Navigate the focused tab to `target`: current page is pushed onto the
/// back stack, the forward stack is cleared, and the target starts unscrolled.
fn navigate(state: &mut EnvState, target: &str) {
    let tab = state.tab_mut();
    let from = std::mem::replace(&mut tab.page, target.to_string());
    tab.back_stack.push(from);
    tab.forward_stack.clear();
    tab.scroll.insert(target.to_string(), 0);
}

/// Apply one action to a state, returning the successor.
///
/// Styled after a real browser: actions that reference something that does
/// not exist fail, while applicable-but-ineffective actions (scrolling at
/// the bottom, going back with empty history, clicking an inert element)
/// succeed as no-ops.
pub fn step(def: &EnvDefinition, state: &EnvState, action: &Action) -> Result<EnvState, EnvError> {
    if state.terminated {
        return Err(EnvError::Terminated);
    }
    let mut next = state.clone();
    match action {
        Action::Click { element_id } => {
            let page_id = next.page_id().to_string();
            let element = def
                .element_on(&page_id, *element_id)
                .ok_or(EnvError::UnknownElement(*element_id))?
                .clone();
            apply_flag_effects(&mut next, &element.state_effects);
            if let Some(target) = &element.on_click {
                navigate(&mut next, target);
            }
        }
        Action::Hover { element_id } => {
            let page_id = next.page_id().to_string();
            def.element_on(&page_id, *element_id).ok_or(EnvError::UnknownElement(*element_id))?;
        }
        Action::Type { element_id, text, press_enter_after } => {
            let page_id = next.page_id().to_string();
            let element = def
                .element_on(&page_id, *element_id)
                .ok_or(EnvError::UnknownElement(*element_id))?
                .clone();
            if element.tag != Tag::Textbox {
                return Err(EnvError::IllegalAction(format!(
                    "cannot type into [{element_id}] ({})",
                    element.tag
                )));
            }
            next.typed.insert(*element_id, text.clone());
            if *press_enter_after {
                apply_flag_effects(&mut next, &element.state_effects);
                let target =
                    element.on_type.get(text).or_else(|| element.on_type.get("*")).cloned();
                if let Some(target) = target {
                    navigate(&mut next, &target);
                }
            }
        }
        Action::Press { .. } => {}
        Action::NewTab => {
            next.tabs.push(TabState::at(&def.start_page));
            next.focused_tab = next.tabs.len() - 1;
        }
        Action::TabFocus { tab_index } => {
            if *tab_index >= next.tabs.len() {
                return Err(EnvError::IllegalAction(format!("no tab {tab_index}")));
            }
            next.focused_tab = *tab_index;
        }
        Action::TabClose => {
            if next.tabs.len() < 2 {
                return Err(EnvError::IllegalAction("cannot close the last tab".into()));
            }
            next.tabs.remove(next.focused_tab);
            next.focused_tab = next.focused_tab.min(next.tabs.len() - 1);
        }
        Action::Goto { url } => {
            let page =
                def.page_by_id_or_url(url).ok_or_else(|| EnvError::UnknownPage(url.clone()))?;
            let target = page.id.clone();
            navigate(&mut next, &target);
        }
        Action::GoBack => {
            let tab = next.tab_mut();
            if let Some(prev) = tab.back_stack.pop() {
                let from = std::mem::replace(&mut tab.page, prev);
                tab.forward_stack.push(from);
            }
        }
        Action::GoForward => {
            let tab = next.tab_mut();
            if let Some(fwd) = tab.forward_stack.pop() {
                let from = std::mem::replace(&mut tab.page, fwd);
                tab.back_stack.push(from);
            }
        }
        Action::Scroll { direction } => {
            let max = max_scroll(def, state);
            let offset = next.scroll_offset();
            let new_offset = match direction {
                ScrollDirection::Down => (offset + 1).min(max),
                ScrollDirection::Up => offset.saturating_sub(1),
            };
            let page = next.page_id().to_string();
            next.tab_mut().scroll.insert(page, new_offset);
        }
        Action::Stop { answer } => {
            next.terminated = true;
            next.stop_answer = Some(answer.clone());
        }
    }
    Ok(next)
}

/// Replay a full action sequence from the initial state. This is the
/// backtracking primitive: any node in a search tree is just its action
/// sequence, and this function materializes it.
pub fn replay(def: &EnvDefinition, actions: &[Action]) -> Result<EnvState, EnvError> {
    let mut state = reset(def);
    for action in actions {
        state = step(def, &state, action)?;
    }
    Ok(state)
}

/// True when the action would trigger an element marked irreversible on the
/// current page. Search uses this to keep destructive commits out of
/// speculative branches.
pub fn is_irreversible(def: &EnvDefinition, state: &EnvState, action: &Action) -> bool {
    if state.terminated {
        return false;
    }
    let enter = match action {
        Action::Type { press_enter_after, .. } => *press_enter_after,
        _ => true,
    };
    match action.element_id() {
        Some(id) if !matches!(action, Action::Hover { .. }) => def
            .element_on(state.page_id(), id)
            .map(|e| e.irreversible && enter)
            .unwrap_or(false),
        _ => false,
    }
}

fn page_lines(def: &EnvDefinition, state: &EnvState) -> Vec<String> {
    let page = match def.page(state.page_id()) {
        Some(p) => p,
        None => return vec![format!("[] [StaticText] [missing page {}]", state.page_id())],
    };
    let mut lines = Vec::new();
    for text in &page.static_text {
        lines.push(format!("[] [StaticText] [{text}]"));
    }
    for el in &page.elements {
        let mut line = format!("[{}] [{}] [{}]", el.id, el.tag, el.label);
        if el.tag == Tag::Textbox {
            if let Some(typed) = state.typed.get(&el.id) {
                line.push_str(&format!(" [value: {typed}]"));
            }
        }
        lines.push(line);
    }
    lines
}

/// Largest valid scroll offset for the current page (0 when everything fits
/// in one viewport).
pub fn max_scroll(def: &EnvDefinition, state: &EnvState) -> usize {
    let n = page_lines(def, state).len();
    if n == 0 {
        0
    } else {
        (n - 1) / VIEWPORT_LINES
    }
}

/// Render the visible accessibility-style observation of the focused tab,
/// truncated to `token_budget` whitespace-delimited tokens at line
/// granularity.
pub fn render_observation(def: &EnvDefinition, state: &EnvState, token_budget: usize) -> String {
    let lines = page_lines(def, state);
    let offset = state.scroll_offset().min(max_scroll(def, state));
    let window: Vec<&String> =
        lines.iter().skip(offset * VIEWPORT_LINES).take(VIEWPORT_LINES).collect();
    let mut used = 0;
    let mut kept: Vec<&str> = Vec::new();
    for line in window {
        let tokens = line.split_whitespace().count();
        if used + tokens > token_budget && !kept.is_empty() {
            break;
        }
        used += tokens;
        kept.push(line);
    }
    kept.join("\n")
}

/// Observation with the default token budget.
pub fn observe(def: &EnvDefinition, state: &EnvState) -> String {
    render_observation(def, state, OBSERVATION_TOKEN_BUDGET)
}

/// Url shown to the agent for the current state.
pub fn current_url(def: &EnvDefinition, state: &EnvState) -> String {
    def.page(state.page_id()).map(|p| p.url.clone()).unwrap_or_else(|| state.page_id().to_string())
}

/// Evaluate a task's success predicate against a state.
pub fn evaluate_reward(def: &EnvDefinition, spec: &RewardSpec, state: &EnvState) -> bool {
    match spec {
        RewardSpec::StopAnswerExact { expected } => state.stop_answer.as_deref() == Some(expected),
        RewardSpec::StopAnswerContains { expected } => {
            state.stop_answer.as_deref().is_some_and(|a| a.contains(expected.as_str()))
        }
        RewardSpec::UrlMatch { expected } => {
            let page = state.page_id();
            page == expected
                || def.page(page).map(|p| &p.url == expected).unwrap_or(false)
        }
        RewardSpec::FlagEquals { flag, value } => {
            state.flags.get(flag).map(|v| v == value).unwrap_or(false)
        }
        RewardSpec::Conjunction { all } => {
            all.iter().all(|s| evaluate_reward(def, s, state))
        }
    }
}

/// Stable content hash of a state: SHA-256 over its canonical JSON form.
/// Two states compare equal iff their hashes match, which is what state
/// deduplication keys on.
pub fn state_hash(state: &EnvState) -> String {
    let json = serde_json::to_vec(state).expect("state serializes");
    let mut hasher = Sha256::new();
    hasher.update(&json);
    format!("{:x}", hasher.finalize())
}

/// Structural checks on a definition. Returns all problems found; an empty
/// list means the definition is well-formed.
pub fn validate_definition(def: &EnvDefinition) -> Vec<String> {
    let mut problems = Vec::new();
    if def.page(&def.start_page).is_none() {
        problems.push(format!("start_page '{}' does not exist", def.start_page));
    }
    let mut page_ids = BTreeSet::new();
    let mut urls = BTreeSet::new();
    for page in &def.pages {
        if !page_ids.insert(&page.id) {
            problems.push(format!("duplicate page id '{}'", page.id));
        }
        if !urls.insert(&page.url) {
            problems.push(format!("duplicate page url '{}'", page.url));
        }
    }
    let mut element_ids = BTreeSet::new();
    for page in &def.pages {
        for el in &page.elements {
            if !element_ids.insert(el.id) {
                problems.push(format!("element id [{}] is not globally unique", el.id));
            }
            if let Some(target) = &el.on_click {
                if def.page(target).is_none() {
                    problems.push(format!(
                        "element [{}] on '{}' clicks through to unknown page '{target}'",
                        el.id, page.id
                    ));
                }
            }
            if !el.on_type.is_empty() && el.tag != Tag::Textbox {
                problems.push(format!(
                    "element [{}] on '{}' has on_type but is a {}",
                    el.id, page.id, el.tag
                ));
            }
            for target in el.on_type.values() {
                if def.page(target).is_none() {
                    problems.push(format!(
                        "element [{}] on '{}' types through to unknown page '{target}'",
                        el.id, page.id
                    ));
                }
            }
        }
    }
    problems
}

fn validate_reward(
    def: &EnvDefinition,
    task_id: &str,
    spec: &RewardSpec,
    problems: &mut Vec<String>,
) {
    match spec {
        RewardSpec::UrlMatch { expected } => {
            if def.page_by_id_or_url(expected).is_none() {
                problems.push(format!("task '{task_id}': url_match page '{expected}' not found"));
            }
        }
        RewardSpec::FlagEquals { flag, .. } => {
            let written = def
                .pages
                .iter()
                .flat_map(|p| &p.elements)
                .flat_map(|e| &e.state_effects)
                .any(|eff| &eff.flag == flag);
            if !written {
                problems
                    .push(format!("task '{task_id}': no element ever writes flag '{flag}'"));
            }
        }
        RewardSpec::Conjunction { all } => {
            if all.len() < 2 {
                problems.push(format!(
                    "task '{task_id}': conjunction needs at least 2 sub-conditions"
                ));
            }
            for sub in all {
                validate_reward(def, task_id, sub, problems);
            }
        }
        RewardSpec::StopAnswerExact { .. } | RewardSpec::StopAnswerContains { .. } => {}
    }
}

/// Cross-check tasks against the definitions they reference.
pub fn validate_tasks(defs: &[EnvDefinition], tasks: &[Task]) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    for task in tasks {
        if !seen.insert(&task.id) {
            problems.push(format!("duplicate task id '{}'", task.id));
        }
        match defs.iter().find(|d| d.name == task.env) {
            None => problems.push(format!(
                "task '{}' references unknown environment '{}'",
                task.id, task.env
            )),
            Some(def) => validate_reward(def, &task.id, &task.reward, &mut problems),
        }
    }
    problems
}

/// Load one or more definitions from a JSON file holding either a single
/// object or an array.
pub fn load_definitions(path: &Path) -> Result<Vec<EnvDefinition>, EnvError> {
    let raw = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&raw)?;
    let defs = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    Ok(defs)
}

/// Load tasks from a JSONL file (one task per non-blank line).
pub fn load_tasks(path: &Path) -> Result<Vec<Task>, EnvError> {
    let raw = std::fs::read_to_string(path)?;
    let mut tasks = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        tasks.push(serde_json::from_str(line)?);
    }
    Ok(tasks)
}
