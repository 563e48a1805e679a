//! Inference-time tree search for language-model agents in deterministic
//! web-like environments.
//!
//! Instead of committing to the single highest-vote action at every step, an
//! agent built on this crate runs a best-first search over candidate action
//! sequences before each commit: sampled proposals fan out into a frontier
//! ordered by model-estimated state values, budgeted valuation prunes the
//! tree, and the best-scoring sequence found is executed. Because the
//! environment is deterministic, any node can be rematerialized exactly by
//! replaying its action sequence from the start state, which is what makes
//! backtracking sound without snapshots.
//!
//! The crate splits into focused layers:
//!
//! - [`action`]: the typed action grammar the agent speaks, with
//!   parse/serialize round-tripping.
//! - [`env`]: the declarative page-graph simulator — stepping, replay,
//!   observation rendering, rewards, and exhaustive enumeration.
//! - [`lm`]: chat-completion clients — HTTP, scripted, and a record/replay
//!   cache for hermetic runs.
//! - [`policy`]: action proposal via sampled completions with vote
//!   aggregation, or deterministic scripts.
//! - [`value`]: state valuation via sampled judge completions, or a
//!   simulator oracle for testing.
//! - [`search`]: the best-first loop itself — frontier, budget, commit, and
//!   the greedy / trajectory-reranking baselines.
//! - [`trace`]: structured event logs every search emits, replayable into
//!   renderings and metrics.
//! - [`harness`]: suite runner, metrics aggregation, ablation sweeps, and
//!   Graphviz tree rendering behind the `scout` CLI.

pub mod action;
pub mod env;
pub mod harness;
pub mod lm;
pub mod policy;
pub mod search;
pub mod trace;
pub mod value;
