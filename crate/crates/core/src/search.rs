//! Best-first search over action sequences against the simulator.
//!
//! A node is nothing but the absolute action sequence that reaches it;
//! backtracking is replaying that sequence from the initial state. Each
//! search round pops the most promising node from a max-priority frontier,
//! values its state, and enqueues the top proposed child actions at the
//! parent's value (children are only valued when they are themselves
//! popped). The round ends when a value reaches the threshold, the
//! expansion budget is spent, or the frontier empties; the episode then
//! commits the best sequence found and searches again from there.

use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Action;
use crate::env::{
    evaluate_reward, is_irreversible, observe, replay, reset, state_hash, step, current_url,
    EnvDefinition, EnvError, EnvState, Task,
};
use crate::policy::{Policy, PolicyContext, PolicyError};
use crate::trace::{EventKind, TraceEvent, TraceLog};
use crate::value::{ValueContext, ValueError, ValueFn};

/// Node expansions allowed per search round.
pub const DEFAULT_BUDGET: usize = 20;
/// Maximum tree depth below the committed state.
pub const DEFAULT_MAX_DEPTH: usize = 5;
/// Children enqueued per expanded node.
pub const DEFAULT_BRANCHING: usize = 5;
/// Value at which search commits immediately.
pub const DEFAULT_THETA: f64 = 1.0;
/// Actions an episode may commit in total.
pub const DEFAULT_MAX_ACTIONS: usize = 5;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("no viable action to force progress with")]
    DeadEnd,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Budget c: maximum node valuations per round. 0 disables search
    /// entirely (the episode acts greedily).
    pub budget_c: usize,
    /// Depth d: how far below the committed state the tree may grow.
    pub max_depth: usize,
    /// Branching b: children kept per expansion.
    pub branching: usize,
    /// Threshold θ: a value this high ends the round at once.
    pub theta: f64,
    /// Skip nodes whose state was already valued this round.
    pub dedupe_states: bool,
    /// Keep actions marked irreversible out of speculative branches.
    pub forbid_irreversible: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            budget_c: DEFAULT_BUDGET,
            max_depth: DEFAULT_MAX_DEPTH,
            branching: DEFAULT_BRANCHING,
            theta: DEFAULT_THETA,
            dedupe_states: true,
            forbid_irreversible: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Hard cap on committed actions (the final commit may finish a longer
    /// best sequence).
    pub max_actions: usize,
    /// Search again after every commit; otherwise later rounds act greedily.
    pub rerun_search: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { max_actions: DEFAULT_MAX_ACTIONS, rerun_search: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// A node's value reached θ.
    Theta,
    /// The expansion budget c was spent.
    Budget,
    /// Every reachable node in the tree was considered.
    FrontierExhausted,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::Theta => "theta",
            TerminationReason::Budget => "budget",
            TerminationReason::FrontierExhausted => "frontier_exhausted",
        }
    }
}

/// Result of one search round, relative to the committed prefix it started
/// from. An empty `best_seq` means no explored extension beat the current
/// state's own value.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_seq: Vec<Action>,
    pub best_value: f64,
    pub expansions: usize,
    pub terminated_by: TerminationReason,
}

/// Completed episode: the committed actions and where they led.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub actions: Vec<Action>,
    pub success: bool,
    pub final_state: EnvState,
    /// Commit rounds performed.
    pub rounds: usize,
    /// Node valuations across all rounds.
    pub expansions: usize,
}

struct FrontierNode {
    seq: Vec<Action>,
    priority: f64,
    depth: usize,
    order: u64,
}

impl PartialEq for FrontierNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for FrontierNode {}

impl PartialOrd for FrontierNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FrontierNode {
    /// Highest priority first; earliest enqueued first among equals.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.order.cmp(&self.order))
    }
}

fn commands(seq: &[Action]) -> Vec<String> {
    seq.iter().map(Action::command).collect()
}

/// Replay a sequence, collecting the observation after every prefix along
/// with the final state.
fn materialize(
    def: &EnvDefinition,
    seq: &[Action],
) -> Result<(Vec<String>, EnvState), EnvError> {
    let mut observations = Vec::with_capacity(seq.len() + 1);
    let mut state = reset(def);
    observations.push(observe(def, &state));
    for action in seq {
        state = step(def, &state, action)?;
        observations.push(observe(def, &state));
    }
    Ok((observations, state))
}

fn value_of(
    def: &EnvDefinition,
    task: &Task,
    value_fn: &dyn ValueFn,
    seq: &[Action],
    observations: Vec<String>,
    state: &EnvState,
) -> Result<f64, ValueError> {
    let ctx = ValueContext {
        task,
        seq,
        observations,
        url: current_url(def, state),
        stop_answer: state.stop_answer.clone(),
    };
    Ok(value_fn.score(&ctx)?.score)
}

/// One best-first search round from the committed prefix.
#[allow(clippy::too_many_arguments)]
pub fn search_step(
    def: &EnvDefinition,
    task: &Task,
    policy: &dyn Policy,
    value_fn: &dyn ValueFn,
    committed: &[Action],
    cfg: &SearchConfig,
    round: usize,
    trace: &mut TraceLog,
) -> Result<SearchOutcome, SearchError> {
    let mut begin = TraceEvent::new(EventKind::SearchBegin, &task.id, round);
    begin.seq = commands(committed);
    trace.emit(begin);

    let mut frontier = BinaryHeap::new();
    let mut order = 0u64;
    frontier.push(FrontierNode {
        seq: committed.to_vec(),
        priority: f64::INFINITY,
        depth: 0,
        order,
    });
    let mut seen = BTreeSet::new();
    let mut expansions = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    let mut best_seq = committed.to_vec();
    let mut reason = TerminationReason::FrontierExhausted;

    while let Some(node) = frontier.pop() {
        let mut popped = TraceEvent::new(EventKind::NodePopped, &task.id, round);
        popped.seq = commands(&node.seq);
        popped.priority = node.priority.is_finite().then_some(node.priority);
        popped.expansions = expansions;

        let (observations, state) = match materialize(def, &node.seq) {
            Ok(m) => m,
            Err(
                EnvError::UnknownElement(_)
                | EnvError::UnknownPage(_)
                | EnvError::IllegalAction(_)
                | EnvError::Terminated,
            ) => {
                popped.pruned = Some(true);
                popped.reason = Some("invalid_action".into());
                trace.emit(popped);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if cfg.dedupe_states && !seen.insert(state_hash(&state)) {
            popped.pruned = Some(true);
            popped.reason = Some("duplicate_state".into());
            trace.emit(popped);
            continue;
        }
        trace.emit(popped);

        let value = value_of(def, task, value_fn, &node.seq, observations, &state)?;
        expansions += 1;
        if value > best_value {
            best_value = value;
            best_seq = node.seq.clone();
        }
        let mut valued = TraceEvent::new(EventKind::NodeValued, &task.id, round);
        valued.seq = commands(&node.seq);
        valued.value = Some(value);
        valued.best_value = Some(best_value);
        valued.expansions = expansions;
        trace.emit(valued);

        if value >= cfg.theta {
            reason = TerminationReason::Theta;
            break;
        }
        if expansions >= cfg.budget_c {
            reason = TerminationReason::Budget;
            break;
        }
        if node.depth >= cfg.max_depth || state.terminated {
            continue;
        }

        let pctx = PolicyContext {
            task,
            seq: &node.seq,
            observation: observe(def, &state),
            url: current_url(def, &state),
        };
        let proposal = match policy.propose(&pctx) {
            Ok(p) => p,
            Err(PolicyError::NoValidAction(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let mut children = Vec::new();
        for candidate in &proposal.candidates {
            if children.len() >= cfg.branching {
                break;
            }
            if cfg.forbid_irreversible && is_irreversible(def, &state, &candidate.action) {
                continue;
            }
            let mut child_seq = node.seq.clone();
            child_seq.push(candidate.action.clone());
            order += 1;
            frontier.push(FrontierNode {
                seq: child_seq,
                priority: value,
                depth: node.depth + 1,
                order,
            });
            children.push(candidate.action.command());
        }
        if !children.is_empty() {
            let mut enqueued = TraceEvent::new(EventKind::ChildrenEnqueued, &task.id, round);
            enqueued.seq = commands(&node.seq);
            enqueued.children = Some(children);
            enqueued.expansions = expansions;
            trace.emit(enqueued);
        }
    }

    Ok(SearchOutcome {
        best_seq: best_seq[committed.len()..].to_vec(),
        best_value,
        expansions,
        terminated_by: reason,
    })
}

/// The highest-voted proposal from the committed state: the entire decision
/// rule of the no-search baseline.
pub fn greedy_step(
    def: &EnvDefinition,
    task: &Task,
    policy: &dyn Policy,
    committed: &[Action],
) -> Result<Action, SearchError> {
    let state = replay(def, committed)?;
    greedy_from(def, task, policy, committed, &state)
}

fn greedy_from(
    def: &EnvDefinition,
    task: &Task,
    policy: &dyn Policy,
    committed: &[Action],
    state: &EnvState,
) -> Result<Action, SearchError> {
    let pctx = PolicyContext {
        task,
        seq: committed,
        observation: observe(def, state),
        url: current_url(def, state),
    };
    match policy.propose(&pctx) {
        Ok(p) => Ok(p.candidates[0].action.clone()),
        Err(PolicyError::NoValidAction(_)) => Err(SearchError::DeadEnd),
        Err(e) => Err(e.into()),
    }
}

/// Highest-ranked candidate that is executable from `state` (and reversible,
/// when the guard is on).
fn forced_action(
    def: &EnvDefinition,
    state: &EnvState,
    proposal: &crate::policy::Proposal,
    forbid_irreversible: bool,
) -> Option<Action> {
    proposal
        .candidates
        .iter()
        .find(|c| {
            (!forbid_irreversible || !is_irreversible(def, state, &c.action))
                && step(def, state, &c.action).is_ok()
        })
        .map(|c| c.action.clone())
}

/// Run one task episode: search (or act greedily when the budget is 0),
/// commit, repeat until a stop action lands or the action cap is reached.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    def: &EnvDefinition,
    task: &Task,
    policy: &dyn Policy,
    value_fn: &dyn ValueFn,
    scfg: &SearchConfig,
    ecfg: &EpisodeConfig,
    trace: &mut TraceLog,
) -> Result<EpisodeResult, SearchError> {
    if ecfg.max_actions == 0 {
        return Err(SearchError::InvalidConfig("max_actions must be at least 1".into()));
    }
    let mut committed: Vec<Action> = Vec::new();
    let mut state = reset(def);
    let mut rounds = 0usize;
    let mut expansions = 0usize;

    while committed.len() < ecfg.max_actions && !state.terminated {
        let use_search = scfg.budget_c > 0 && (rounds == 0 || ecfg.rerun_search);
        if use_search {
            let outcome =
                search_step(def, task, policy, value_fn, &committed, scfg, rounds, trace)?;
            expansions += outcome.expansions;
            if outcome.best_seq.is_empty() {
                let pctx = PolicyContext {
                    task,
                    seq: &committed,
                    observation: observe(def, &state),
                    url: current_url(def, &state),
                };
                let proposal = policy.propose(&pctx)?;
                let action = forced_action(def, &state, &proposal, scfg.forbid_irreversible)
                    .ok_or(SearchError::DeadEnd)?;
                state = step(def, &state, &action)?;
                committed.push(action);
                let mut forced = TraceEvent::new(EventKind::ForcedProgress, &task.id, rounds);
                forced.seq = commands(&committed);
                forced.expansions = outcome.expansions;
                trace.emit(forced);
            } else {
                for action in &outcome.best_seq {
                    state = step(def, &state, action)?;
                    committed.push(action.clone());
                }
                let mut commit = TraceEvent::new(EventKind::Committed, &task.id, rounds);
                commit.seq = commands(&committed);
                commit.value = Some(outcome.best_value);
                commit.reason = Some(outcome.terminated_by.as_str().into());
                commit.expansions = outcome.expansions;
                trace.emit(commit);
            }
        } else {
            let action = greedy_from(def, task, policy, &committed, &state)?;
            state = step(def, &state, &action)?;
            committed.push(action);
            let mut commit = TraceEvent::new(EventKind::Committed, &task.id, rounds);
            commit.seq = commands(&committed);
            trace.emit(commit);
        }
        rounds += 1;
    }

    let success = evaluate_reward(def, &task.reward, &state);
    let mut end = TraceEvent::new(EventKind::EpisodeEnd, &task.id, rounds);
    end.seq = commands(&committed);
    end.success = Some(success);
    end.expansions = expansions;
    end.reason =
        Some(if state.terminated { "stop".to_string() } else { "max_actions".to_string() });
    trace.emit(end);

    Ok(EpisodeResult { actions: committed, success, final_state: state, rounds, expansions })
}

fn rollout(
    def: &EnvDefinition,
    task: &Task,
    policy: &dyn Policy,
    first_rank: usize,
    max_actions: usize,
) -> Result<(Vec<Action>, EnvState), SearchError> {
    let mut committed: Vec<Action> = Vec::new();
    let mut state = reset(def);
    while committed.len() < max_actions && !state.terminated {
        let pctx = PolicyContext {
            task,
            seq: &committed,
            observation: observe(def, &state),
            url: current_url(def, &state),
        };
        let proposal = policy.propose(&pctx)?;
        let rank = if committed.is_empty() {
            first_rank.min(proposal.candidates.len() - 1)
        } else {
            0
        };
        let action = proposal.candidates[rank].action.clone();
        state = step(def, &state, &action)?;
        committed.push(action);
    }
    Ok((committed, state))
}

/// Trajectory-level baseline: roll out `k` complete greedy trajectories
/// (the i-th diverges by taking the i-th ranked action at the first step),
/// grade each with the value function, and commit the best-scoring one
/// (earliest wins ties). With `k = 1` this is exactly the greedy agent.
pub fn rerank_trajectories(
    def: &EnvDefinition,
    task: &Task,
    policy: &dyn Policy,
    value_fn: &dyn ValueFn,
    k: usize,
    ecfg: &EpisodeConfig,
) -> Result<EpisodeResult, SearchError> {
    if k == 0 {
        return Err(SearchError::InvalidConfig("k must be at least 1".into()));
    }
    if ecfg.max_actions == 0 {
        return Err(SearchError::InvalidConfig("max_actions must be at least 1".into()));
    }
    let mut best: Option<(f64, Vec<Action>, EnvState)> = None;
    for i in 0..k {
        let (actions, state) = rollout(def, task, policy, i, ecfg.max_actions)?;
        let (observations, _) = materialize(def, &actions)?;
        let score = value_of(def, task, value_fn, &actions, observations, &state)?;
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, actions, state));
        }
    }
    let (_, actions, state) = best.expect("at least one rollout");
    let success = evaluate_reward(def, &task.reward, &state);
    let rounds = actions.len();
    Ok(EpisodeResult {
        actions,
        success,
        final_state: state,
        rounds,
        expansions: k,
    })
}
