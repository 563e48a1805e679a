//! Action proposal: prompt a language model for the next action, sample
//! several completions, and aggregate them into a ranked candidate list by
//! counting votes on the canonical command string.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{parse_action, parse_command, Action, ParseFailure};
use crate::env::Task;
use crate::lm::{ChatMessage, ChatRequest, LmClient, LmError, SamplingParams};

/// Completions sampled per proposal.
pub const DEFAULT_PROPOSAL_SAMPLES: usize = 20;
/// Sampling temperature for action proposal.
pub const DEFAULT_PROPOSAL_TEMPERATURE: f64 = 1.0;
/// Nucleus sampling mass for action proposal.
pub const DEFAULT_PROPOSAL_TOP_P: f64 = 0.95;
/// Distinct candidates kept after vote aggregation.
pub const DEFAULT_MAX_CANDIDATES: usize = 5;

static AGENT_SYSTEM: &str = include_str!("../assets/agent_system.txt");
static AGENT_EXAMPLES_JSON: &str = include_str!("../assets/agent_examples.json");

#[derive(Debug, Clone, Deserialize, Serialize)]
struct FewShotExample {
    user: String,
    assistant: String,
}

static AGENT_EXAMPLES: LazyLock<Vec<FewShotExample>> = LazyLock::new(|| {
    serde_json::from_str(AGENT_EXAMPLES_JSON).expect("bundled examples parse")
});

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("none of {0} sampled completions contained a well-formed action")]
    NoValidAction(usize),
    #[error("script has no actions for task '{task}' after [{after}]")]
    ScriptMiss { task: String, after: String },
    #[error("script contains a malformed command '{command}': {reason}")]
    BadScript { command: String, reason: ParseFailure },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] serde_json::Error),
}

/// Everything a policy may condition on when proposing the next action.
/// `seq` is the absolute action sequence from the start of the episode up to
/// the state being expanded.
pub struct PolicyContext<'a> {
    pub task: &'a Task,
    pub seq: &'a [Action],
    pub observation: String,
    pub url: String,
}

impl PolicyContext<'_> {
    pub fn previous_action(&self) -> Option<&Action> {
        self.seq.last()
    }
}

/// One distinct proposed action with its vote weight. `rank` is the position
/// after sorting by votes (0 = most voted); ties keep sampling order.
#[derive(Debug, Clone)]
pub struct ActionCandidate {
    pub action: Action,
    pub votes: usize,
    pub rank: usize,
    /// Raw completions that voted for this action.
    pub raw_samples: Vec<String>,
}

/// Aggregated result of one proposal round.
#[derive(Debug, Clone, Default)]
pub struct Proposal {
    pub candidates: Vec<ActionCandidate>,
    pub parse_failures: Vec<ParseFailure>,
}

impl Proposal {
    /// Total completions behind this proposal.
    pub fn sample_count(&self) -> usize {
        self.candidates.iter().map(|c| c.votes).sum::<usize>() + self.parse_failures.len()
    }
}

pub trait Policy: Send + Sync {
    fn propose(&self, ctx: &PolicyContext) -> Result<Proposal, PolicyError>;
}

/// The final user turn of the agent prompt.
pub fn format_current_turn(ctx: &PolicyContext) -> String {
    let previous = match ctx.previous_action() {
        Some(action) => action.command(),
        None => "None".to_string(),
    };
    format!(
        "OBSERVATION:\n{}\nURL: {}\nOBJECTIVE: {}\nPREVIOUS ACTION: {}",
        ctx.observation, ctx.url, ctx.task.instruction, previous
    )
}

/// Full message list for one proposal: system instructions, the bundled
/// few-shot dialogues, then the current turn.
pub fn build_agent_prompt(ctx: &PolicyContext) -> Vec<ChatMessage> {
    let mut messages = Vec::with_capacity(2 + 2 * AGENT_EXAMPLES.len());
    messages.push(ChatMessage::system(AGENT_SYSTEM.trim_end()));
    for example in AGENT_EXAMPLES.iter() {
        messages.push(ChatMessage::user(example.user.clone()));
        messages.push(ChatMessage::assistant(example.assistant.clone()));
    }
    messages.push(ChatMessage::user(format_current_turn(ctx)));
    messages
}

/// Group raw completions into vote-ranked candidates. Completions that fail
/// to parse are dropped from voting but their failure reasons are kept.
pub fn aggregate_votes(texts: &[String], max_candidates: usize) -> Proposal {
    let mut order: Vec<Action> = Vec::new();
    let mut votes: BTreeMap<String, (Action, usize, Vec<String>)> = BTreeMap::new();
    let mut parse_failures = Vec::new();
    for text in texts {
        match parse_action(text) {
            Ok(action) => {
                let key = action.command();
                let entry =
                    votes.entry(key).or_insert_with(|| (action.clone(), 0, Vec::new()));
                if entry.1 == 0 {
                    order.push(action);
                }
                entry.1 += 1;
                entry.2.push(text.clone());
            }
            Err(reason) => parse_failures.push(reason),
        }
    }
    let mut candidates: Vec<ActionCandidate> = order
        .into_iter()
        .map(|action| {
            let (_, n, raws) = votes.remove(&action.command()).expect("voted action");
            ActionCandidate { action, votes: n, rank: 0, raw_samples: raws }
        })
        .collect();
    candidates.sort_by(|a, b| b.votes.cmp(&a.votes));
    candidates.truncate(max_candidates);
    for (rank, c) in candidates.iter_mut().enumerate() {
        c.rank = rank;
    }
    Proposal { candidates, parse_failures }
}

/// Policy backed by a sampling LM client.
pub struct LmPolicy {
    lm: Box<dyn LmClient>,
    pub model: String,
    pub samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_candidates: usize,
}

impl LmPolicy {
    pub fn new(lm: Box<dyn LmClient>, model: impl Into<String>) -> Self {
        LmPolicy {
            lm,
            model: model.into(),
            samples: DEFAULT_PROPOSAL_SAMPLES,
            temperature: DEFAULT_PROPOSAL_TEMPERATURE,
            top_p: DEFAULT_PROPOSAL_TOP_P,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }

    pub fn request_for(&self, ctx: &PolicyContext) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: build_agent_prompt(ctx),
            params: SamplingParams {
                n: self.samples,
                temperature: self.temperature,
                top_p: self.top_p,
                max_tokens: None,
            },
        }
    }
}

impl Policy for LmPolicy {
    fn propose(&self, ctx: &PolicyContext) -> Result<Proposal, PolicyError> {
        let texts = self.lm.complete(&self.request_for(ctx))?;
        let proposal = aggregate_votes(&texts, self.max_candidates);
        if proposal.candidates.is_empty() {
            return Err(PolicyError::NoValidAction(texts.len()));
        }
        Ok(proposal)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScriptEntry {
    task: String,
    #[serde(default)]
    after: Vec<String>,
    actions: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScriptFile {
    entries: Vec<ScriptEntry>,
    #[serde(default)]
    default: Option<Vec<String>>,
}

struct CompiledEntry {
    task: String,
    after: Vec<String>,
    actions: Vec<Action>,
}

/// Deterministic policy driven by a script: ranked action lists keyed by
/// (task id, exact action prefix). Candidates carry synthetic descending
/// votes so downstream ordering behaves as with a real model.
pub struct ScriptedPolicy {
    entries: Vec<CompiledEntry>,
    default: Option<Vec<Action>>,
}

fn compile_commands(commands: &[String]) -> Result<Vec<Action>, PolicyError> {
    commands
        .iter()
        .map(|c| {
            parse_command(c)
                .map_err(|reason| PolicyError::BadScript { command: c.clone(), reason })
        })
        .collect()
}

impl ScriptedPolicy {
    pub fn from_json(raw: &str) -> Result<Self, PolicyError> {
        let file: ScriptFile = serde_json::from_str(raw)?;
        let entries = file
            .entries
            .iter()
            .map(|e| {
                Ok(CompiledEntry {
                    task: e.task.clone(),
                    after: e.after.clone(),
                    actions: compile_commands(&e.actions)?,
                })
            })
            .collect::<Result<Vec<_>, PolicyError>>()?;
        let default = file.default.as_deref().map(compile_commands).transpose()?;
        Ok(ScriptedPolicy { entries, default })
    }

    pub fn from_path(path: &Path) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Policy for ScriptedPolicy {
    fn propose(&self, ctx: &PolicyContext) -> Result<Proposal, PolicyError> {
        let after: Vec<String> = ctx.seq.iter().map(Action::command).collect();
        let actions = self
            .entries
            .iter()
            .find(|e| e.task == ctx.task.id && e.after == after)
            .map(|e| &e.actions)
            .or(self.default.as_ref())
            .ok_or_else(|| PolicyError::ScriptMiss {
                task: ctx.task.id.clone(),
                after: after.join(", "),
            })?;
        let n = actions.len();
        let candidates = actions
            .iter()
            .enumerate()
            .map(|(i, action)| ActionCandidate {
                action: action.clone(),
                votes: n - i,
                rank: i,
                raw_samples: Vec::new(),
            })
            .collect();
        Ok(Proposal { candidates, parse_failures: Vec::new() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RewardSpec;
    use crate::lm::{Role, ScriptedLm};

    fn task() -> Task {
        Task {
            id: "t1".into(),
            env: "toy".into(),
            instruction: "Find the price.".into(),
            reward: RewardSpec::StopAnswerExact { expected: "$5".into() },
            site: String::new(),
            difficulty: None,
        }
    }

    fn ctx_with<'a>(task: &'a Task, seq: &'a [Action]) -> PolicyContext<'a> {
        PolicyContext {
            task,
            seq,
            observation: "[1] [link] [Home]".into(),
            url: "https://shop.example/".into(),
        }
    }

    fn completion(cmd: &str) -> String {
        format!("Let's think. In summary, the next action I will perform is ```{cmd}```")
    }

    #[test]
    fn prompt_has_system_examples_and_current_turn() {
        let task = task();
        let ctx = ctx_with(&task, &[]);
        let messages = build_agent_prompt(&ctx);
        assert_eq!(messages.len(), 8);
        assert_eq!(messages[0].role, Role::System);
        assert!(messages[0].text().contains("autonomous intelligent agent"));
        assert_eq!(messages[1].role, Role::User);
        assert_eq!(messages[2].role, Role::Assistant);
        assert!(messages[2].text().ends_with("```stop [$279.49]```"));
        assert!(messages[4].text().ends_with("```click [1499]```"));
        assert!(messages[6].text().ends_with("```type [81] [guitar] [1]```"));
        let turn = messages[7].text();
        assert!(turn.starts_with("OBSERVATION:\n[1] [link] [Home]\n"));
        assert!(turn.contains("URL: https://shop.example/"));
        assert!(turn.contains("OBJECTIVE: Find the price."));
        assert!(turn.ends_with("PREVIOUS ACTION: None"));
    }

    #[test]
    fn current_turn_shows_previous_action() {
        let task = task();
        let seq = vec![Action::Click { element_id: 4 }];
        let turn = format_current_turn(&ctx_with(&task, &seq));
        assert!(turn.ends_with("PREVIOUS ACTION: click [4]"));
    }

    #[test]
    fn votes_rank_by_count_with_first_seen_tiebreak() {
        let texts: Vec<String> = [
            "click [2]", "click [1]", "click [2]", "click [3]", "click [1]", "click [3]",
            "click [9]",
        ]
        .iter()
        .map(|c| completion(c))
        .collect();
        let proposal = aggregate_votes(&texts, 5);
        let ranked: Vec<(String, usize, usize)> = proposal
            .candidates
            .iter()
            .map(|c| (c.action.command(), c.votes, c.rank))
            .collect();
        // 2, 1, 3 all have two votes; sampling order breaks the tie.
        assert_eq!(
            ranked,
            vec![
                ("click [2]".to_string(), 2, 0),
                ("click [1]".to_string(), 2, 1),
                ("click [3]".to_string(), 2, 2),
                ("click [9]".to_string(), 1, 3),
            ]
        );
        assert!(proposal.parse_failures.is_empty());
        assert_eq!(proposal.sample_count(), 7);
    }

    #[test]
    fn equivalent_spellings_share_one_candidate() {
        let texts =
            vec![completion("click [5]"), completion("CLICK  [ 5 ]"), completion("click [6]")];
        let proposal = aggregate_votes(&texts, 5);
        assert_eq!(proposal.candidates.len(), 2);
        assert_eq!(proposal.candidates[0].votes, 2);
        assert_eq!(proposal.candidates[0].raw_samples.len(), 2);
    }

    #[test]
    fn failures_counted_but_not_voted() {
        let texts = vec![
            completion("click [5]"),
            "no block here".to_string(),
            completion("fly [5]"),
        ];
        let proposal = aggregate_votes(&texts, 5);
        assert_eq!(proposal.candidates.len(), 1);
        assert_eq!(
            proposal.parse_failures,
            vec![ParseFailure::NoActionMarker, ParseFailure::UnknownKind]
        );
        assert_eq!(proposal.sample_count(), 3);
    }

    #[test]
    fn truncates_to_max_candidates() {
        let texts: Vec<String> =
            (0..7).map(|i| completion(&format!("click [{i}]"))).collect();
        let proposal = aggregate_votes(&texts, 5);
        assert_eq!(proposal.candidates.len(), 5);
    }

    #[test]
    fn lm_policy_requests_default_sampling() {
        let lm = ScriptedLm::new(vec![vec![completion("click [2]"); 3]]);
        let policy = LmPolicy::new(Box::new(lm), "test-model");
        let task = task();
        let proposal = policy.propose(&ctx_with(&task, &[])).unwrap();
        assert_eq!(proposal.candidates[0].action, Action::Click { element_id: 2 });
        let request = policy.request_for(&ctx_with(&task, &[]));
        assert_eq!(request.params.n, DEFAULT_PROPOSAL_SAMPLES);
        assert_eq!(request.params.temperature, DEFAULT_PROPOSAL_TEMPERATURE);
        assert_eq!(request.params.top_p, DEFAULT_PROPOSAL_TOP_P);
        assert_eq!(request.model, "test-model");
    }

    #[test]
    fn lm_policy_with_no_valid_action_errors() {
        let lm = ScriptedLm::new(vec![vec!["garbage".into(), "more garbage".into()]]);
        let policy = LmPolicy::new(Box::new(lm), "m");
        let task = task();
        let err = policy.propose(&ctx_with(&task, &[]));
        assert!(matches!(err, Err(PolicyError::NoValidAction(2))));
    }

    #[test]
    fn scripted_policy_matches_task_and_prefix() {
        let script = serde_json::json!({
            "entries": [
                {"task": "t1", "after": [], "actions": ["click [11]", "click [9]"]},
                {"task": "t1", "after": ["click [11]"], "actions": ["stop"]}
            ],
            "default": ["go_back"]
        });
        let policy = ScriptedPolicy::from_json(&script.to_string()).unwrap();
        let task = task();

        let root = policy.propose(&ctx_with(&task, &[])).unwrap();
        assert_eq!(root.candidates.len(), 2);
        assert_eq!(root.candidates[0].action, Action::Click { element_id: 11 });
        assert_eq!(root.candidates[0].votes, 2);
        assert_eq!(root.candidates[1].votes, 1);

        let seq = vec![Action::Click { element_id: 11 }];
        let next = policy.propose(&ctx_with(&task, &seq)).unwrap();
        assert_eq!(next.candidates[0].action, Action::Stop { answer: String::new() });

        // Unmatched prefix falls back to the default entry.
        let seq = vec![Action::GoBack];
        let fallback = policy.propose(&ctx_with(&task, &seq)).unwrap();
        assert_eq!(fallback.candidates[0].action, Action::GoBack);
    }

    #[test]
    fn scripted_policy_without_match_or_default_misses() {
        let script = serde_json::json!({
            "entries": [{"task": "other", "after": [], "actions": ["stop"]}]
        });
        let policy = ScriptedPolicy::from_json(&script.to_string()).unwrap();
        let task = task();
        let err = policy.propose(&ctx_with(&task, &[]));
        assert!(matches!(err, Err(PolicyError::ScriptMiss { .. })));
    }

    #[test]
    fn scripted_policy_rejects_bad_commands() {
        let script = serde_json::json!({
            "entries": [{"task": "t1", "after": [], "actions": ["clickk [1]"]}]
        });
        let err = ScriptedPolicy::from_json(&script.to_string());
        assert!(matches!(err, Err(PolicyError::BadScript { .. })));
    }
}
