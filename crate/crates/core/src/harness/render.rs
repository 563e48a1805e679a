//! Post-hoc Graphviz rendering of search traces: one cluster per search
//! round, nodes labeled with action, value, and valuation order; pruned
//! nodes faded, enqueued-but-unexplored nodes dotted, the committed path
//! emphasized.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::trace::{read_jsonl, EventKind, TraceEvent};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("task {0} not present in trace")]
    UnknownTask(String),
}

#[derive(Default)]
struct NodeInfo {
    action: String,
    value: Option<f64>,
    order: Option<usize>,
    pruned: Option<String>,
    enqueued_only: bool,
    committed: bool,
    forced: bool,
}

#[derive(Default)]
struct RoundGraph {
    prefix_len: usize,
    /// Relative action path (joined) → node.
    nodes: BTreeMap<String, NodeInfo>,
}

const SEP: char = '\u{1f}';

fn key(rel: &[String]) -> String {
    rel.join(&SEP.to_string())
}

fn parent_key(k: &str) -> Option<String> {
    if k.is_empty() {
        return None;
    }
    Some(match k.rfind(SEP) {
        Some(i) => k[..i].to_string(),
        None => String::new(),
    })
}

fn escape(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

fn rel_of<'a>(seq: &'a [String], prefix_len: usize) -> &'a [String] {
    &seq[prefix_len.min(seq.len())..]
}

fn build_rounds(events: &[TraceEvent]) -> Vec<RoundGraph> {
    let mut rounds: Vec<RoundGraph> = Vec::new();
    for event in events {
        match event.kind {
            EventKind::SearchBegin => {
                let mut round = RoundGraph { prefix_len: event.seq.len(), ..Default::default() };
                round.nodes.insert(
                    String::new(),
                    NodeInfo { action: "start".into(), ..Default::default() },
                );
                rounds.push(round);
            }
            EventKind::NodePopped if event.pruned == Some(true) => {
                if let Some(round) = rounds.last_mut() {
                    let rel = rel_of(&event.seq, round.prefix_len);
                    let entry = round.nodes.entry(key(rel)).or_default();
                    entry.action = rel.last().cloned().unwrap_or_else(|| "start".into());
                    entry.pruned = event.reason.clone();
                    entry.enqueued_only = false;
                }
            }
            EventKind::NodeValued => {
                if let Some(round) = rounds.last_mut() {
                    let rel = rel_of(&event.seq, round.prefix_len);
                    let entry = round.nodes.entry(key(rel)).or_default();
                    if rel.is_empty() {
                        entry.action = "start".into();
                    } else {
                        entry.action = rel.last().cloned().unwrap();
                    }
                    entry.value = event.value;
                    entry.order = Some(event.expansions);
                    entry.enqueued_only = false;
                }
            }
            EventKind::ChildrenEnqueued => {
                if let Some(round) = rounds.last_mut() {
                    let rel = rel_of(&event.seq, round.prefix_len).to_vec();
                    for child in event.children.iter().flatten() {
                        let mut child_rel = rel.clone();
                        child_rel.push(child.clone());
                        round.nodes.entry(key(&child_rel)).or_insert_with(|| NodeInfo {
                            action: child.clone(),
                            enqueued_only: true,
                            ..Default::default()
                        });
                    }
                }
            }
            EventKind::Committed | EventKind::ForcedProgress => {
                let forced = event.kind == EventKind::ForcedProgress;
                if let Some(round) = rounds.last_mut() {
                    // The event's seq is the whole committed prefix; the part
                    // taken this round extends the round's own root.
                    let rel = rel_of(&event.seq, round.prefix_len);
                    for end in 0..=rel.len() {
                        let entry = round.nodes.entry(key(&rel[..end])).or_default();
                        if entry.action.is_empty() {
                            entry.action = if end == 0 {
                                "start".into()
                            } else {
                                rel[end - 1].clone()
                            };
                        }
                        entry.committed = true;
                        if forced && end == rel.len() {
                            entry.forced = true;
                        }
                        if end > 0 {
                            entry.enqueued_only = false;
                        }
                    }
                }
            }
            _ => {}
        }
    }
    rounds
}

/// Render the search tree(s) of one task as a Graphviz document.
pub fn render_tree(events: &[TraceEvent], task_id: &str) -> Result<String, RenderError> {
    let events: Vec<&TraceEvent> = events.iter().filter(|e| e.task_id == task_id).collect();
    if events.is_empty() {
        return Err(RenderError::UnknownTask(task_id.to_string()));
    }
    let owned: Vec<TraceEvent> = events.into_iter().cloned().collect();
    let rounds = build_rounds(&owned);

    let mut dot = String::new();
    writeln!(dot, "digraph search {{").unwrap();
    writeln!(dot, "  labelloc=t;").unwrap();
    writeln!(dot, "  label=\"{}\";", escape(task_id)).unwrap();
    writeln!(dot, "  rankdir=TB;").unwrap();
    writeln!(dot, "  node [shape=box, fontname=\"monospace\", fontsize=10];").unwrap();
    for (r, round) in rounds.iter().enumerate() {
        let ids: BTreeMap<&String, String> = round
            .nodes
            .keys()
            .enumerate()
            .map(|(i, k)| (k, format!("r{r}_n{i}")))
            .collect();
        writeln!(dot, "  subgraph cluster_r{r} {{").unwrap();
        writeln!(dot, "    label=\"search round {r}\";").unwrap();
        writeln!(dot, "    color=gray70;").unwrap();
        for (k, node) in &round.nodes {
            let mut parts = vec![escape(&node.action)];
            if let (Some(v), Some(o)) = (node.value, node.order) {
                parts.push(format!("v={v:.2} #{o}"));
            }
            if let Some(reason) = &node.pruned {
                parts.push(format!("pruned: {}", escape(reason)));
            }
            let mut attrs = vec![format!("label=\"{}\"", parts.join("\\n"))];
            if node.pruned.is_some() {
                attrs.push("style=dashed".into());
                attrs.push("color=gray50".into());
                attrs.push("fontcolor=gray40".into());
            } else if node.enqueued_only {
                attrs.push("style=dotted".into());
                attrs.push("color=gray60".into());
                attrs.push("fontcolor=gray50".into());
            } else if node.committed {
                let fill = if node.forced { "lightyellow" } else { "lightgray" };
                attrs.push(format!("style=filled, fillcolor={fill}, penwidth=2"));
            }
            writeln!(dot, "    {} [{}];", ids[k], attrs.join(", ")).unwrap();
        }
        writeln!(dot, "  }}").unwrap();
        for (k, node) in &round.nodes {
            if let Some(parent) = parent_key(k) {
                let attrs = if node.committed && round.nodes[&parent].committed {
                    "[color=black, penwidth=2.5]"
                } else {
                    "[color=gray60]"
                };
                writeln!(dot, "  {} -> {} {};", ids[&parent], ids[k], attrs).unwrap();
            }
        }
    }
    writeln!(dot, "}}").unwrap();
    Ok(dot)
}

/// Read a trace file and render one task's search tree from it.
pub fn render_tree_file(trace_path: &Path, task_id: &str) -> Result<String, RenderError> {
    let events = read_jsonl(trace_path)?;
    render_tree(&events, task_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::tests::toy_def;
    use crate::env::{RewardSpec, Task};
    use crate::policy::ScriptedPolicy;
    use crate::search::{run_episode, EpisodeConfig, SearchConfig};
    use crate::trace::TraceLog;
    use crate::value::OracleValue;

    fn traced_run() -> TraceLog {
        let def = toy_def();
        let task = Task {
            id: "t-flag".into(),
            env: "toy".into(),
            instruction: "subscribe".into(),
            reward: RewardSpec::FlagEquals { flag: "subscribed".into(), value: "1".into() },
            site: String::new(),
            difficulty: None,
        };
        let script = serde_json::json!({
            "entries": [
                {"task": "t-flag", "after": [], "actions": ["go_back", "click [2]"]},
                {"task": "t-flag", "after": ["click [2]"], "actions": ["click [7]"]}
            ],
            "default": ["stop"]
        });
        let policy = ScriptedPolicy::from_json(&script.to_string()).unwrap();
        let value = OracleValue::new(def.clone(), 5);
        let mut trace = TraceLog::logical();
        let scfg = SearchConfig { budget_c: 20, max_depth: 3, branching: 2, ..Default::default() };
        run_episode(&def, &task, &policy, &value, &scfg, &EpisodeConfig::default(), &mut trace)
            .unwrap();
        trace
    }

    #[test]
    fn renders_rounds_nodes_and_committed_path() {
        let trace = traced_run();
        let dot = render_tree(trace.events(), "t-flag").unwrap();
        assert!(dot.starts_with("digraph search {"));
        assert!(dot.contains("subgraph cluster_r0"));
        assert!(dot.contains("v=0.50"));
        assert!(dot.contains("v=1.00"));
        // The no-op go_back child collapses into the root and is pruned.
        assert!(dot.contains("pruned: duplicate_state"));
        assert!(dot.contains("style=dashed"));
        // Committed path edges carry the emphasis attribute.
        assert!(dot.contains("penwidth=2.5"));
        assert!(dot.ends_with("}\n"));
    }

    #[test]
    fn unknown_task_is_an_error() {
        let trace = traced_run();
        let err = render_tree(trace.events(), "nope");
        assert!(matches!(err, Err(RenderError::UnknownTask(_))));
    }
}
