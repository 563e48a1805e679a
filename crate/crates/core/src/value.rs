//! State valuation: prompt a judge model to grade a partial trajectory,
//! or consult a ground-truth oracle backed by exhaustive reachability.
//!
//! Each sampled judgment maps to 1.0 (success), 0.5 (failure but on the
//! right track), or 0.0 (anything else, unparseable output included), and
//! the state's value is the mean over all samples.

use thiserror::Error;

use crate::action::Action;
use crate::env::{
    evaluate_reward, goal_reachable, replay, EnvDefinition, EnvError, Task,
    DEFAULT_ENUMERATION_CAP,
};
use crate::lm::{ChatMessage, ChatRequest, LmClient, LmError, SamplingParams};

/// Completions sampled per valuation.
pub const DEFAULT_VALUE_SAMPLES: usize = 20;
/// Sampling temperature for valuation.
pub const DEFAULT_VALUE_TEMPERATURE: f64 = 1.0;
/// Nucleus sampling mass for valuation (full distribution).
pub const DEFAULT_VALUE_TOP_P: f64 = 1.0;
/// Most recent observations shown to the judge.
pub const VALUE_OBSERVATION_WINDOW: usize = 5;

static VALUE_SYSTEM: &str = include_str!("../assets/value_system.txt");

#[derive(Debug, Error)]
pub enum ValueError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// The trajectory being graded. `seq` is the absolute action sequence from
/// the start of the episode; `observations` are the rendered pages along it,
/// oldest first, the last being the current state.
pub struct ValueContext<'a> {
    pub task: &'a Task,
    pub seq: &'a [Action],
    pub observations: Vec<String>,
    pub url: String,
    /// Answer from a terminating stop action, if the trajectory ended.
    pub stop_answer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgmentStatus {
    Success,
    Failure,
    /// Output did not contain a recognizable status line.
    Invalid,
}

/// One parsed judge completion.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleJudgment {
    pub status: JudgmentStatus,
    /// Parsed "on the right track" verdict, when present.
    pub on_track: Option<bool>,
    pub thoughts: String,
}

impl SampleJudgment {
    pub fn score(&self) -> f64 {
        match (self.status, self.on_track) {
            (JudgmentStatus::Success, _) => 1.0,
            (JudgmentStatus::Failure, Some(true)) => 0.5,
            _ => 0.0,
        }
    }
}

/// Valuation result: the mean sample score and the samples behind it.
#[derive(Debug, Clone)]
pub struct ValueEstimate {
    pub score: f64,
    pub samples: Vec<SampleJudgment>,
}

impl ValueEstimate {
    pub fn from_samples(samples: Vec<SampleJudgment>) -> Self {
        let score = if samples.is_empty() {
            0.0
        } else {
            samples.iter().map(SampleJudgment::score).sum::<f64>() / samples.len() as f64
        };
        ValueEstimate { score, samples }
    }
}

pub trait ValueFn: Send + Sync {
    fn score(&self, ctx: &ValueContext) -> Result<ValueEstimate, ValueError>;
}

fn clean_token(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c: char| {
            c == '"' || c == '\'' || c == '`' || c == '.' || c == ',' || c == '*' || c == ':'
        })
        .trim()
        .to_ascii_lowercase()
}

/// Parse one judge completion into a judgment. The last `Status:` line and
/// the last `On the right track ...:` line win; a missing or unrecognizable
/// status makes the sample invalid (score 0).
pub fn parse_judgment(text: &str) -> SampleJudgment {
    let mut status = JudgmentStatus::Invalid;
    let mut on_track = None;
    let mut thoughts = String::new();
    for line in text.lines() {
        let trimmed = line.trim().trim_start_matches(|c: char| c == '*' || c == '#').trim();
        let lower = trimmed.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("status:") {
            status = match clean_token(rest).as_str() {
                "success" => JudgmentStatus::Success,
                "failure" => JudgmentStatus::Failure,
                _ => JudgmentStatus::Invalid,
            };
        } else if lower.starts_with("on the right track") {
            if let Some((_, rest)) = trimmed.split_once(':') {
                on_track = match clean_token(rest).as_str() {
                    "yes" => Some(true),
                    "no" => Some(false),
                    _ => None,
                };
            }
        } else if let Some(rest) = lower.strip_prefix("thoughts:") {
            let start = trimmed.len() - rest.len();
            thoughts = trimmed[start..].trim().to_string();
        }
    }
    SampleJudgment { status, on_track, thoughts }
}

/// The judge's user turn: intent, the trailing window of observations,
/// action history, the agent's final response, and the current url.
pub fn format_value_turn(ctx: &ValueContext) -> String {
    let window_start = ctx.observations.len().saturating_sub(VALUE_OBSERVATION_WINDOW);
    let window = &ctx.observations[window_start..];
    let mut turn = format!("User Intent: {}\n", ctx.task.instruction);
    for (i, obs) in window.iter().enumerate() {
        turn.push_str(&format!("\nOBSERVATION {}:\n{}\n", i + 1, obs));
    }
    let history = if ctx.seq.is_empty() {
        "None".to_string()
    } else {
        ctx.seq.iter().map(Action::command).collect::<Vec<_>>().join("; ")
    };
    let response = ctx.stop_answer.clone().unwrap_or_else(|| "None".to_string());
    turn.push_str(&format!(
        "\nAction History: {history}\nBot response to the user: {response}\nCurrent URL: {url}\n\
         The last {k} snapshots of the agent's trajectory are shown in the LAST {k} \
         observations. The LAST OBSERVATION represents the current state of the webpage.",
        url = ctx.url,
        k = window.len(),
    ));
    turn
}

pub fn build_value_prompt(ctx: &ValueContext) -> Vec<ChatMessage> {
    vec![ChatMessage::system(VALUE_SYSTEM.trim_end()), ChatMessage::user(format_value_turn(ctx))]
}

/// Judge backed by a sampling LM client.
pub struct LmValue {
    lm: Box<dyn LmClient>,
    pub model: String,
    pub samples: usize,
    pub temperature: f64,
    pub top_p: f64,
}

impl LmValue {
    pub fn new(lm: Box<dyn LmClient>, model: impl Into<String>) -> Self {
        LmValue {
            lm,
            model: model.into(),
            samples: DEFAULT_VALUE_SAMPLES,
            temperature: DEFAULT_VALUE_TEMPERATURE,
            top_p: DEFAULT_VALUE_TOP_P,
        }
    }

    pub fn request_for(&self, ctx: &ValueContext) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: build_value_prompt(ctx),
            params: SamplingParams {
                n: self.samples,
                temperature: self.temperature,
                top_p: self.top_p,
                max_tokens: None,
            },
        }
    }
}

impl ValueFn for LmValue {
    fn score(&self, ctx: &ValueContext) -> Result<ValueEstimate, ValueError> {
        let texts = self.lm.complete(&self.request_for(ctx))?;
        let samples = texts.iter().map(|t| parse_judgment(t)).collect();
        Ok(ValueEstimate::from_samples(samples))
    }
}

/// Ground-truth value: 1.0 when the trajectory's state satisfies the task
/// reward, 0.5 when the goal is still reachable within the remaining action
/// budget, 0.0 otherwise (dead ends and spent budgets).
pub struct OracleValue {
    def: EnvDefinition,
    /// Total episode action budget the remaining horizon is measured
    /// against.
    pub horizon: usize,
    pub cap: usize,
}

impl OracleValue {
    pub fn new(def: EnvDefinition, horizon: usize) -> Self {
        OracleValue { def, horizon, cap: DEFAULT_ENUMERATION_CAP }
    }
}

impl ValueFn for OracleValue {
    fn score(&self, ctx: &ValueContext) -> Result<ValueEstimate, ValueError> {
        let state = replay(&self.def, ctx.seq)?;
        let score = if evaluate_reward(&self.def, &ctx.task.reward, &state) {
            1.0
        } else {
            let remaining = self.horizon.saturating_sub(ctx.seq.len());
            let reachable = !state.terminated
                && goal_reachable(&self.def, ctx.task, &state, remaining, self.cap)?;
            if reachable {
                0.5
            } else {
                0.0
            }
        };
        let judgment = SampleJudgment {
            status: if score == 1.0 { JudgmentStatus::Success } else { JudgmentStatus::Failure },
            on_track: Some(score >= 0.5),
            thoughts: String::new(),
        };
        Ok(ValueEstimate { score, samples: vec![judgment] })
    }
}

/// Judgment text in the judge's own output format, used by deterministic
/// test doubles.
pub fn render_judgment(thoughts: &str, success: bool, on_track: bool) -> String {
    format!(
        "Thoughts: {thoughts}\nStatus: \"{}\"\nOn the right track to success: \"{}\"",
        if success { "success" } else { "failure" },
        if on_track { "yes" } else { "no" },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RewardSpec;
    use crate::lm::ScriptedLm;

    fn task() -> Task {
        Task {
            id: "t1".into(),
            env: "toy".into(),
            instruction: "Subscribe to the newsletter.".into(),
            reward: RewardSpec::FlagEquals { flag: "subscribed".into(), value: "1".into() },
            site: String::new(),
            difficulty: None,
        }
    }

    fn ctx<'a>(task: &'a Task, seq: &'a [Action]) -> ValueContext<'a> {
        ValueContext {
            task,
            seq,
            observations: vec!["[1] [link] [Home]".into()],
            url: "https://toy.example/".into(),
            stop_answer: None,
        }
    }

    #[test]
    fn parses_clean_judgment() {
        let j = parse_judgment(
            "Thoughts: The cart now holds the item.\nStatus: \"success\"\n\
             On the right track to success: \"yes\"",
        );
        assert_eq!(j.status, JudgmentStatus::Success);
        assert_eq!(j.on_track, Some(true));
        assert_eq!(j.thoughts, "The cart now holds the item.");
        assert_eq!(j.score(), 1.0);
    }

    #[test]
    fn parses_unquoted_and_mixed_case() {
        let j = parse_judgment("STATUS: Failure\nOn the right track to success: NO.");
        assert_eq!(j.status, JudgmentStatus::Failure);
        assert_eq!(j.on_track, Some(false));
        assert_eq!(j.score(), 0.0);
    }

    #[test]
    fn failure_on_track_scores_half() {
        let j = parse_judgment("Status: failure\nOn the right track to success: yes");
        assert_eq!(j.score(), 0.5);
    }

    #[test]
    fn failure_without_track_line_scores_zero() {
        let j = parse_judgment("Status: failure");
        assert_eq!(j.on_track, None);
        assert_eq!(j.score(), 0.0);
    }

    #[test]
    fn missing_or_garbled_status_is_invalid() {
        assert_eq!(parse_judgment("I think it went well.").status, JudgmentStatus::Invalid);
        assert_eq!(parse_judgment("Status: maybe?").status, JudgmentStatus::Invalid);
        assert_eq!(parse_judgment("").score(), 0.0);
    }

    #[test]
    fn last_status_line_wins() {
        let j = parse_judgment("Status: failure\nOn second thought...\nStatus: success");
        assert_eq!(j.status, JudgmentStatus::Success);
    }

    #[test]
    fn mean_over_all_samples_counts_invalid_as_zero() {
        let texts = vec![
            render_judgment("good", true, true),
            render_judgment("close", false, true),
            render_judgment("lost", false, false),
            "garbage output".to_string(),
        ];
        let lm = ScriptedLm::new(vec![texts]);
        let judge = LmValue::new(Box::new(lm), "judge-model");
        let task = task();
        let estimate = judge.score(&ctx(&task, &[])).unwrap();
        assert_eq!(estimate.score, (1.0 + 0.5 + 0.0 + 0.0) / 4.0);
        assert_eq!(estimate.samples.len(), 4);
    }

    #[test]
    fn value_turn_mentions_everything() {
        let task = task();
        let seq = vec![Action::Click { element_id: 2 }, Action::Click { element_id: 7 }];
        let mut c = ctx(&task, &seq);
        c.observations =
            vec!["page one".into(), "page two".into(), "page three".into()];
        let turn = format_value_turn(&c);
        assert!(turn.starts_with("User Intent: Subscribe to the newsletter.\n"));
        assert!(turn.contains("OBSERVATION 1:\npage one\n"));
        assert!(turn.contains("OBSERVATION 3:\npage three\n"));
        assert!(turn.contains("Action History: click [2]; click [7]\n"));
        assert!(turn.contains("Bot response to the user: None\n"));
        assert!(turn.contains("Current URL: https://toy.example/\n"));
        assert!(turn.contains("The last 3 snapshots"));
        assert!(turn.contains("LAST 3 observations"));
    }

    #[test]
    fn value_turn_windows_observations() {
        let task = task();
        let mut c = ctx(&task, &[]);
        c.observations = (0..8).map(|i| format!("obs {i}")).collect();
        let turn = format_value_turn(&c);
        assert!(!turn.contains("obs 2"));
        assert!(turn.contains("OBSERVATION 1:\nobs 3\n"));
        assert!(turn.contains("OBSERVATION 5:\nobs 7\n"));
        assert!(turn.contains("The last 5 snapshots"));
    }

    #[test]
    fn value_turn_shows_stop_answer() {
        let task = task();
        let seq = vec![Action::Stop { answer: "$5".into() }];
        let mut c = ctx(&task, &seq);
        c.stop_answer = Some("$5".into());
        let turn = format_value_turn(&c);
        assert!(turn.contains("Bot response to the user: $5\n"));
    }

    #[test]
    fn value_prompt_uses_judge_system_message() {
        let task = task();
        let messages = build_value_prompt(&ctx(&task, &[]));
        assert_eq!(messages.len(), 2);
        assert!(messages[0].text().contains("evaluating the performance"));
        assert!(messages[0].text().contains("three types of tasks"));
    }

    #[test]
    fn oracle_grades_goal_progress_and_dead_ends() {
        let def = crate::env::tests::toy_def();
        let task = task();
        let oracle = OracleValue::new(def.clone(), 5);

        // Root: goal two clicks away, budget five.
        let estimate = oracle.score(&ctx(&task, &[])).unwrap();
        assert_eq!(estimate.score, 0.5);

        // Subscribed: reward satisfied.
        let seq = vec![Action::Click { element_id: 2 }, Action::Click { element_id: 7 }];
        assert_eq!(oracle.score(&ctx(&task, &seq)).unwrap().score, 1.0);

        // Premature stop is a dead end even though the reward was reachable.
        let seq = vec![Action::Stop { answer: String::new() }];
        assert_eq!(oracle.score(&ctx(&task, &seq)).unwrap().score, 0.0);

        // Horizon too short to ever reach the goal.
        let tight = OracleValue::new(def.clone(), 1);
        assert_eq!(tight.score(&ctx(&task, &[])).unwrap().score, 0.0);

        // Success already achieved stays 1.0 regardless of remaining budget.
        let spent = OracleValue::new(def, 2);
        let seq = vec![Action::Click { element_id: 2 }, Action::Click { element_id: 7 }];
        assert_eq!(spent.score(&ctx(&task, &seq)).unwrap().score, 1.0);
    }
}
