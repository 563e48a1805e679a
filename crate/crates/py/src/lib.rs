//! Python bindings for the scout engine: action-grammar parsing, an
//! interactive environment session, and scripted episode runs.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use scout::action::{self, Action};
use scout::env::{
    self, evaluate_reward, observe, replay, reset, state_hash, step, validate_definition,
    EnvDefinition, EnvState, RewardSpec, Task,
};
use scout::policy::ScriptedPolicy;
use scout::search::{run_episode as run_episode_rs, EpisodeConfig, SearchConfig};
use scout::trace::TraceLog;
use scout::value::OracleValue;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parse env definitions from a JSON string holding either one definition
/// object or an array of them, then pick by name (first when unnamed).
fn definition_from_json(env_json: &str, name: Option<&str>) -> PyResult<EnvDefinition> {
    let value: serde_json::Value = serde_json::from_str(env_json).map_err(value_error)?;
    let defs: Vec<EnvDefinition> = if value.is_array() {
        serde_json::from_value(value).map_err(value_error)?
    } else {
        vec![serde_json::from_value(value).map_err(value_error)?]
    };
    let def = match name {
        Some(n) => defs
            .into_iter()
            .find(|d| d.name == n)
            .ok_or_else(|| value_error(format!("no environment named '{n}'")))?,
        None => defs.into_iter().next().ok_or_else(|| value_error("no environments in input"))?,
    };
    let problems = validate_definition(&def);
    if !problems.is_empty() {
        return Err(value_error(problems.join("; ")));
    }
    Ok(def)
}

/// Parse a raw model completion down to its canonical action command.
#[pyfunction]
fn parse_action(raw: &str) -> PyResult<String> {
    action::parse_action(raw).map(|a| a.command()).map_err(value_error)
}

/// Parse a single action command string, canonicalizing its spelling.
#[pyfunction]
fn parse_command(line: &str) -> PyResult<String> {
    action::parse_command(line).map(|a| a.command()).map_err(value_error)
}

fn parse_commands(commands: &[String]) -> PyResult<Vec<Action>> {
    commands.iter().map(|c| action::parse_command(c).map_err(value_error)).collect()
}

/// An environment instance stepped with action command strings.
#[pyclass]
struct Session {
    def: EnvDefinition,
    state: EnvState,
}

#[pymethods]
impl Session {
    /// Open a session on the definition in `env_json` (an object or an
    /// array; `name` selects from an array).
    #[new]
    #[pyo3(signature = (env_json, name=None))]
    fn new(env_json: &str, name: Option<&str>) -> PyResult<Self> {
        let def = definition_from_json(env_json, name)?;
        let state = reset(&def);
        Ok(Session { def, state })
    }

    /// Return to the initial state and hand back its observation.
    fn reset(&mut self) -> String {
        self.state = reset(&self.def);
        observe(&self.def, &self.state)
    }

    /// Apply one action command, returning the next observation.
    fn step(&mut self, command: &str) -> PyResult<String> {
        let action = action::parse_command(command).map_err(value_error)?;
        self.state = step(&self.def, &self.state, &action).map_err(value_error)?;
        Ok(observe(&self.def, &self.state))
    }

    /// Reset, apply every command in order, and return the observation.
    fn replay(&mut self, commands: Vec<String>) -> PyResult<String> {
        let actions = parse_commands(&commands)?;
        self.state = replay(&self.def, &actions).map_err(value_error)?;
        Ok(observe(&self.def, &self.state))
    }

    /// Render the current observation without stepping.
    fn observe(&self) -> String {
        observe(&self.def, &self.state)
    }

    fn url(&self) -> String {
        env::current_url(&self.def, &self.state)
    }

    fn state_hash(&self) -> String {
        state_hash(&self.state)
    }

    /// Evaluate a reward condition (JSON) against the current state.
    fn evaluate(&self, reward_json: &str) -> PyResult<bool> {
        let spec: RewardSpec = serde_json::from_str(reward_json).map_err(value_error)?;
        Ok(evaluate_reward(&self.def, &spec, &self.state))
    }

    #[getter]
    fn terminated(&self) -> bool {
        self.state.terminated
    }

    #[getter]
    fn stop_answer(&self) -> Option<String> {
        self.state.stop_answer.clone()
    }

    fn flags<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let out = PyDict::new(py);
        for (k, v) in &self.state.flags {
            out.set_item(k, v)?;
        }
        Ok(out)
    }
}

/// Run one episode of best-first search (greedy when `budget_c` is 0) with
/// a scripted policy and simulator-oracle valuation. Returns a dict with
/// `success`, `actions`, `rounds`, and `expansions`.
#[pyfunction]
#[pyo3(signature = (env_json, task_json, policy_json, budget_c=20, max_depth=5, branching=5, max_actions=5))]
#[allow(clippy::too_many_arguments)]
fn run_episode<'py>(
    py: Python<'py>,
    env_json: &str,
    task_json: &str,
    policy_json: &str,
    budget_c: usize,
    max_depth: usize,
    branching: usize,
    max_actions: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let task: Task = serde_json::from_str(task_json).map_err(value_error)?;
    let def = definition_from_json(env_json, Some(task.env.as_str()))?;
    let policy = ScriptedPolicy::from_json(policy_json).map_err(value_error)?;
    let value_fn = OracleValue::new(def.clone(), max_actions);
    let scfg = SearchConfig { budget_c, max_depth, branching, ..SearchConfig::default() };
    let ecfg = EpisodeConfig { max_actions, ..EpisodeConfig::default() };
    let mut trace = TraceLog::logical();
    let result = run_episode_rs(&def, &task, &policy, &value_fn, &scfg, &ecfg, &mut trace)
        .map_err(value_error)?;

    let out = PyDict::new(py);
    out.set_item("success", result.success)?;
    out.set_item("actions", result.actions.iter().map(Action::command).collect::<Vec<_>>())?;
    out.set_item("rounds", result.rounds)?;
    out.set_item("expansions", result.expansions)?;
    Ok(out)
}

#[pymodule]
fn scout_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_action, m)?)?;
    m.add_function(wrap_pyfunction!(parse_command, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_class::<Session>()?;
    Ok(())
}
