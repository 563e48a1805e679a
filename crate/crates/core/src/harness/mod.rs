//! Suite runner: resolves a run configuration into concrete policy, value,
//! and LM backends, runs every task to an episode result, and writes the
//! artifact set (config echo, per-task traces, metrics, a success-rate
//! table).
//!
//! Runs that touch no live endpoint use the logical trace clock, so their
//! artifacts are byte-identical across repetitions.

pub mod render;
pub mod sweep;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    load_definitions, load_tasks, validate_definition, validate_tasks, Difficulty,
    EnvDefinition, Task,
};
use crate::lm::{CachedLm, HttpConfig, HttpLm, LmClient, NeverLm, ScriptedLm};
use crate::policy::{LmPolicy, Policy, ScriptedPolicy};
use crate::search::{
    rerank_trajectories, run_episode, EpisodeConfig, EpisodeResult, SearchConfig,
};
use crate::trace::{EventKind, TraceEvent, TraceLog};
use crate::value::{LmValue, OracleValue, ValueFn};

/// Greedy rollouts graded per trajectory when the agent is `rerank`.
pub const DEFAULT_RERANK_K: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("task file: {0}")]
    Tasks(String),
    #[error("write artifact: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Execute the top-voted action each step, no lookahead.
    Greedy,
    /// Best-first search before every commit.
    Search,
    /// Roll out complete trajectories and keep the best-graded one.
    Rerank,
}

/// Where proposals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyBackend {
    /// Sample the configured LM endpoint.
    Lm,
    /// Follow a deterministic action script file.
    Scripted { path: PathBuf },
}

impl Default for PolicyBackend {
    fn default() -> Self {
        PolicyBackend::Lm
    }
}

/// Where state values come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueBackend {
    /// Sample the configured LM endpoint as a judge.
    Lm,
    /// Grade by reward plus bounded goal-reachability in the simulator.
    Oracle {
        /// Total action horizon goals must fit in; defaults to the episode
        /// action cap.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<usize>,
        /// State cap for the reachability sweep.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<usize>,
    },
}

impl Default for ValueBackend {
    fn default() -> Self {
        ValueBackend::Lm
    }
}

/// Transport behind the LM-backed policy and value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LmSpec {
    /// Live endpoint; exchanges are persisted when `record` is set.
    Http {
        #[serde(default)]
        endpoint: HttpConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record: Option<PathBuf>,
    },
    /// Canned completion batches from a JSON file, consumed in order.
    Scripted {
        script: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record: Option<PathBuf>,
    },
    /// Serve every request from a recorded store; unseen requests fail.
    Replay { store: PathBuf },
}

impl Default for LmSpec {
    fn default() -> Self {
        LmSpec::Http { endpoint: HttpConfig::default(), record: None }
    }
}

/// Sampling shape for action proposals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalConfig {
    pub samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_candidates: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            samples: crate::policy::DEFAULT_PROPOSAL_SAMPLES,
            temperature: crate::policy::DEFAULT_PROPOSAL_TEMPERATURE,
            top_p: crate::policy::DEFAULT_PROPOSAL_TOP_P,
            max_candidates: crate::policy::DEFAULT_MAX_CANDIDATES,
        }
    }
}

/// Sampling shape for value judgments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueConfig {
    pub samples: usize,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for ValueConfig {
    fn default() -> Self {
        ValueConfig {
            samples: crate::value::DEFAULT_VALUE_SAMPLES,
            temperature: crate::value::DEFAULT_VALUE_TEMPERATURE,
            top_p: crate::value::DEFAULT_VALUE_TOP_P,
        }
    }
}

/// Fully describes one suite run; the resolved form is echoed into the
/// output directory so every run is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env_path: PathBuf,
    pub tasks_path: PathBuf,
    pub agent: AgentKind,
    pub search: SearchConfig,
    pub episode: EpisodeConfig,
    pub proposal: ProposalConfig,
    pub value: ValueConfig,
    pub policy_backend: PolicyBackend,
    pub value_backend: ValueBackend,
    pub lm: LmSpec,
    pub model: String,
    pub rerank_k: usize,
    /// Shuffles suite execution order only; backend nondeterminism is
    /// handled by record/replay, not seeding.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env_path: PathBuf::from("env.json"),
            tasks_path: PathBuf::from("tasks.jsonl"),
            agent: AgentKind::Search,
            search: SearchConfig::default(),
            episode: EpisodeConfig::default(),
            proposal: ProposalConfig::default(),
            value: ValueConfig::default(),
            policy_backend: PolicyBackend::default(),
            value_backend: ValueBackend::default(),
            lm: LmSpec::default(),
            model: "gpt-4o".into(),
            rerank_k: DEFAULT_RERANK_K,
            seed: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| HarnessError::Config(format!("parse {}: {e}", path.display())))
    }

    fn uses_lm(&self) -> bool {
        matches!(self.policy_backend, PolicyBackend::Lm)
            || matches!(self.value_backend, ValueBackend::Lm)
    }

    /// True when no live endpoint can be touched, so repeated runs are
    /// byte-identical and traces use the logical clock.
    pub fn is_hermetic(&self) -> bool {
        !(self.uses_lm() && matches!(self.lm, LmSpec::Http { .. }))
    }
}

/// Success counts for one breakdown group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub successes: usize,
    pub sr: f64,
}

impl GroupStats {
    fn tally(records: impl Iterator<Item = bool>) -> GroupStats {
        let mut n = 0;
        let mut successes = 0;
        for ok in records {
            n += 1;
            successes += ok as usize;
        }
        GroupStats { n, successes, sr: if n == 0 { 0.0 } else { successes as f64 / n as f64 } }
    }
}

/// One task's outcome inside a suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: String,
    pub site: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    pub success: bool,
    pub actions: Vec<String>,
    pub rounds: usize,
    pub expansions: usize,
    /// Search invocations observed in the trace.
    pub search_rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregated suite results, serialized as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Fraction of tasks succeeding; null when the suite is empty.
    pub overall_sr: Option<f64>,
    pub per_site: BTreeMap<String, GroupStats>,
    pub per_difficulty: BTreeMap<String, GroupStats>,
    pub n_tasks: usize,
    pub mean_actions: Option<f64>,
    /// Mean valuations per search invocation; never exceeds the budget.
    pub mean_expansions: Option<f64>,
    /// Measured only on runs that touch a live endpoint, so hermetic
    /// artifacts stay reproducible.
    pub wall_time_ms: Option<u64>,
    pub tasks: Vec<TaskRecord>,
}

struct Backends {
    policy: Box<dyn Policy>,
    make_value: Box<dyn Fn(&EnvDefinition) -> Box<dyn ValueFn>>,
}

fn load_script_batches(path: &Path) -> Result<Vec<Vec<String>>, HarnessError> {
    let raw = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| HarnessError::Config(format!("parse {}: {e}", path.display())))
}

fn build_client(spec: &LmSpec) -> Result<Arc<dyn LmClient>, HarnessError> {
    Ok(match spec {
        LmSpec::Http { endpoint, record } => {
            let http = HttpLm::new(endpoint.clone())
                .map_err(|e| HarnessError::Config(format!("http client: {e}")))?;
            match record {
                Some(dir) => Arc::new(CachedLm::recording(http, dir.clone())),
                None => Arc::new(http),
            }
        }
        LmSpec::Scripted { script, record } => {
            let lm = ScriptedLm::new(load_script_batches(script)?);
            match record {
                Some(dir) => Arc::new(CachedLm::recording(lm, dir.clone())),
                None => Arc::new(lm),
            }
        }
        LmSpec::Replay { store } => Arc::new(CachedLm::<NeverLm>::replay(store.clone())),
    })
}

fn build_backends(cfg: &RunConfig) -> Result<Backends, HarnessError> {
    let client = if cfg.uses_lm() { Some(build_client(&cfg.lm)?) } else { None };

    let policy: Box<dyn Policy> = match &cfg.policy_backend {
        PolicyBackend::Lm => {
            let mut p = LmPolicy::new(
                Box::new(client.clone().expect("client built when an LM backend is used")),
                cfg.model.clone(),
            );
            p.samples = cfg.proposal.samples;
            p.temperature = cfg.proposal.temperature;
            p.top_p = cfg.proposal.top_p;
            p.max_candidates = cfg.proposal.max_candidates;
            Box::new(p)
        }
        PolicyBackend::Scripted { path } => {
            let raw = fs::read_to_string(path)
                .map_err(|e| HarnessError::Config(format!("read {}: {e}", path.display())))?;
            Box::new(
                ScriptedPolicy::from_json(&raw)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?,
            )
        }
    };

    let make_value: Box<dyn Fn(&EnvDefinition) -> Box<dyn ValueFn>> = match &cfg.value_backend {
        ValueBackend::Lm => {
            let client = client.expect("client built when an LM backend is used");
            let model = cfg.model.clone();
            let sampling = cfg.value;
            Box::new(move |_| {
                let mut v = LmValue::new(Box::new(client.clone()), model.clone());
                v.samples = sampling.samples;
                v.temperature = sampling.temperature;
                v.top_p = sampling.top_p;
                Box::new(v)
            })
        }
        ValueBackend::Oracle { horizon, cap } => {
            let horizon = horizon.unwrap_or(cfg.episode.max_actions);
            let cap = *cap;
            Box::new(move |def| {
                let mut oracle = OracleValue::new(def.clone(), horizon);
                if let Some(cap) = cap {
                    oracle.cap = cap;
                }
                Box::new(oracle)
            })
        }
    };

    Ok(Backends { policy, make_value })
}

/// Load and cross-validate the environment and task files for a run.
pub fn load_suite(cfg: &RunConfig) -> Result<(Vec<EnvDefinition>, Vec<Task>), HarnessError> {
    let defs = load_definitions(&cfg.env_path)
        .map_err(|e| HarnessError::Tasks(format!("{}: {e}", cfg.env_path.display())))?;
    let mut problems = Vec::new();
    for def in &defs {
        for p in validate_definition(def) {
            problems.push(format!("env {}: {p}", def.name));
        }
    }
    let tasks = load_tasks(&cfg.tasks_path)
        .map_err(|e| HarnessError::Tasks(format!("{}: {e}", cfg.tasks_path.display())))?;
    problems.extend(validate_tasks(&defs, &tasks));
    if !problems.is_empty() {
        return Err(HarnessError::Tasks(problems.join("; ")));
    }
    Ok((defs, tasks))
}

fn run_task(
    def: &EnvDefinition,
    task: &Task,
    backends: &Backends,
    cfg: &RunConfig,
    trace: &mut TraceLog,
) -> Result<EpisodeResult, crate::search::SearchError> {
    let value_fn = (backends.make_value)(def);
    match cfg.agent {
        AgentKind::Greedy => {
            let greedy = SearchConfig { budget_c: 0, ..cfg.search };
            run_episode(def, task, backends.policy.as_ref(), value_fn.as_ref(), &greedy,
                &cfg.episode, trace)
        }
        AgentKind::Search => run_episode(
            def, task, backends.policy.as_ref(), value_fn.as_ref(), &cfg.search,
            &cfg.episode, trace,
        ),
        AgentKind::Rerank => {
            let result = rerank_trajectories(
                def, task, backends.policy.as_ref(), value_fn.as_ref(), cfg.rerank_k,
                &cfg.episode,
            )?;
            let mut end = TraceEvent::new(EventKind::EpisodeEnd, &task.id, result.rounds);
            end.seq = result.actions.iter().map(crate::action::Action::command).collect();
            end.success = Some(result.success);
            end.expansions = result.expansions;
            trace.emit(end);
            Ok(result)
        }
    }
}

fn aggregate(mut records: Vec<TaskRecord>, wall_time_ms: Option<u64>) -> Metrics {
    records.sort_by(|a, b| a.task.cmp(&b.task));
    let n_tasks = records.len();
    let overall_sr = if n_tasks == 0 {
        None
    } else {
        Some(records.iter().filter(|r| r.success).count() as f64 / n_tasks as f64)
    };
    let mut sites: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    let mut difficulties: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for r in &records {
        sites.entry(r.site.clone()).or_default().push(r.success);
        if let Some(d) = r.difficulty {
            difficulties.entry(d.to_string()).or_default().push(r.success);
        }
    }
    let per_site =
        sites.into_iter().map(|(k, v)| (k, GroupStats::tally(v.into_iter()))).collect();
    let per_difficulty =
        difficulties.into_iter().map(|(k, v)| (k, GroupStats::tally(v.into_iter()))).collect();
    let mean_actions = (n_tasks > 0)
        .then(|| records.iter().map(|r| r.actions.len()).sum::<usize>() as f64 / n_tasks as f64);
    let search_rounds: usize = records.iter().map(|r| r.search_rounds).sum();
    let mean_expansions = (search_rounds > 0).then(|| {
        records.iter().map(|r| r.expansions).sum::<usize>() as f64 / search_rounds as f64
    });
    Metrics {
        overall_sr,
        per_site,
        per_difficulty,
        n_tasks,
        mean_actions,
        mean_expansions,
        wall_time_ms,
        tasks: records,
    }
}

pub(crate) fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

/// Fixed-width success-rate table with per-site and per-difficulty blocks.
pub fn format_table(cfg: &RunConfig, metrics: &Metrics) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "agent={:?} c={} d={} b={} theta={:.2} max_actions={} model={}\n",
        cfg.agent,
        cfg.search.budget_c,
        cfg.search.max_depth,
        cfg.search.branching,
        cfg.search.theta,
        cfg.episode.max_actions,
        cfg.model,
    ));
    out.push_str(&format!(
        "tasks={}  SR={}\n",
        metrics.n_tasks,
        metrics.overall_sr.map_or("n/a".into(), pct),
    ));
    let block = |title: &str, groups: &BTreeMap<String, GroupStats>| -> String {
        if groups.is_empty() {
            return String::new();
        }
        let mut b = format!("\n{title:<24} {:>4} {:>8} {:>8}\n", "n", "success", "SR");
        for (name, g) in groups {
            b.push_str(&format!(
                "{name:<24} {:>4} {:>8} {:>8}\n",
                g.n,
                g.successes,
                pct(g.sr)
            ));
        }
        b
    };
    out.push_str(&block("site", &metrics.per_site));
    out.push_str(&block("difficulty", &metrics.per_difficulty));
    out
}

/// Run every task in the suite and write `config.json`, `metrics.json`,
/// `table.txt`, and one trace file per task under `out_dir`. A failing task
/// is recorded as unsuccessful with its error; the suite never aborts.
pub fn run_suite(cfg: &RunConfig, out_dir: &Path) -> Result<Metrics, HarnessError> {
    let (defs, tasks) = load_suite(cfg)?;
    let by_name: BTreeMap<&str, &EnvDefinition> =
        defs.iter().map(|d| (d.name.as_str(), d)).collect();
    let backends = build_backends(cfg)?;
    let hermetic = cfg.is_hermetic();

    let traces_dir = out_dir.join("traces");
    fs::create_dir_all(&traces_dir)?;
    let mut echoed = cfg.clone();
    echoed.out_dir = Some(out_dir.to_path_buf());
    fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(&echoed).expect("config serializes") + "\n",
    )?;

    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let started = Instant::now();
    let mut records = Vec::with_capacity(tasks.len());
    for idx in order {
        let task = &tasks[idx];
        let def = by_name[task.env.as_str()];
        let mut trace = if hermetic { TraceLog::logical() } else { TraceLog::system() };
        log::info!("task {} ({})", task.id, task.site_label());
        let outcome = run_task(def, task, &backends, cfg, &mut trace);
        if let Err(e) = &outcome {
            log::warn!("task {} failed: {e}", task.id);
        }
        let search_rounds =
            trace.events().iter().filter(|e| e.kind == EventKind::SearchBegin).count();
        trace.write_jsonl(&traces_dir.join(format!("{}.jsonl", task.id)))?;
        let record = match outcome {
            Ok(ep) => TaskRecord {
                task: task.id.clone(),
                site: task.site_label().to_string(),
                difficulty: task.difficulty,
                success: ep.success,
                actions: ep.actions.iter().map(crate::action::Action::command).collect(),
                rounds: ep.rounds,
                expansions: ep.expansions,
                search_rounds,
                error: None,
            },
            Err(e) => TaskRecord {
                task: task.id.clone(),
                site: task.site_label().to_string(),
                difficulty: task.difficulty,
                success: false,
                actions: Vec::new(),
                rounds: 0,
                expansions: 0,
                search_rounds,
                error: Some(e.to_string()),
            },
        };
        records.push(record);
    }

    let wall_time_ms =
        (!hermetic).then(|| u64::try_from(started.elapsed().as_millis()).unwrap_or(u64::MAX));
    let metrics = aggregate(records, wall_time_ms);
    fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n",
    )?;
    fs::write(out_dir.join("table.txt"), format_table(cfg, &metrics))?;
    Ok(metrics)
}
