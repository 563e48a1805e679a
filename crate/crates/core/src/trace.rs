//! Structured episode traces: a flat JSONL event stream describing every
//! frontier pop, valuation, enqueue, and commit of a run.
//!
//! Timestamps come from a [`Clock`] so that hermetic runs (scripted or
//! replayed models) can use a logical clock and produce byte-identical
//! traces, while live runs record real elapsed time.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Millisecond timestamps for trace events, relative to the clock's origin.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Real elapsed time since construction.
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

/// Deterministic clock that advances one tick per reading.
#[derive(Default)]
pub struct LogicalClock {
    ticks: AtomicU64,
}

impl LogicalClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for LogicalClock {
    fn now_ms(&self) -> u64 {
        self.ticks.fetch_add(1, Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SearchBegin,
    NodePopped,
    NodeValued,
    ChildrenEnqueued,
    Committed,
    ForcedProgress,
    EpisodeEnd,
}

/// One trace record. `seq` is the absolute action sequence (canonical
/// command strings) of the node or commit the event describes, and
/// `expansions` is the number of nodes valued so far in the current search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub task_id: String,
    /// Episode round the event belongs to.
    pub step: usize,
    pub seq: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_value: Option<f64>,
    pub expansions: usize,
    /// Child actions enqueued, for `children_enqueued` events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub children: Option<Vec<String>>,
    /// Set on `node_popped` events for nodes skipped without valuation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruned: Option<bool>,
    /// Why the node was pruned, or why a search/episode ended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    pub wall_ms: u64,
}

impl TraceEvent {
    /// Skeleton event; the caller fills in the relevant optional fields and
    /// [`TraceLog::emit`] stamps the time.
    pub fn new(kind: EventKind, task_id: &str, step: usize) -> Self {
        TraceEvent {
            kind,
            task_id: task_id.to_string(),
            step,
            seq: Vec::new(),
            priority: None,
            value: None,
            best_value: None,
            expansions: 0,
            children: None,
            pruned: None,
            reason: None,
            success: None,
            wall_ms: 0,
        }
    }
}

/// In-memory event log for one task episode.
pub struct TraceLog {
    clock: Box<dyn Clock>,
    events: Vec<TraceEvent>,
}

impl TraceLog {
    pub fn new(clock: Box<dyn Clock>) -> Self {
        TraceLog { clock, events: Vec::new() }
    }

    /// Log with real timestamps.
    pub fn system() -> Self {
        Self::new(Box::new(SystemClock::new()))
    }

    /// Log with deterministic timestamps.
    pub fn logical() -> Self {
        Self::new(Box::new(LogicalClock::new()))
    }

    pub fn emit(&mut self, mut event: TraceEvent) {
        event.wall_ms = self.clock.now_ms();
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }
}

/// Parse a JSONL trace file back into events.
pub fn read_jsonl(path: &Path) -> Result<Vec<TraceEvent>, std::io::Error> {
    let raw = std::fs::read_to_string(path)?;
    parse_jsonl(&raw).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn parse_jsonl(raw: &str) -> Result<Vec<TraceEvent>, serde_json::Error> {
    raw.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logical_clock_ticks_deterministically() {
        let clock = LogicalClock::new();
        assert_eq!(clock.now_ms(), 0);
        assert_eq!(clock.now_ms(), 1);
        assert_eq!(clock.now_ms(), 2);
    }

    #[test]
    fn jsonl_round_trips() {
        let mut log = TraceLog::logical();
        let mut begin = TraceEvent::new(EventKind::SearchBegin, "t1", 0);
        begin.seq = vec![];
        log.emit(begin);
        let mut valued = TraceEvent::new(EventKind::NodeValued, "t1", 0);
        valued.seq = vec!["click [2]".into()];
        valued.value = Some(0.5);
        valued.best_value = Some(0.5);
        valued.expansions = 1;
        log.emit(valued);

        let jsonl = log.to_jsonl();
        assert_eq!(jsonl.lines().count(), 2);
        let parsed = parse_jsonl(&jsonl).unwrap();
        assert_eq!(parsed, log.events());
        assert_eq!(parsed[0].wall_ms, 0);
        assert_eq!(parsed[1].wall_ms, 1);
        assert!(jsonl.contains("\"kind\":\"node_valued\""));
        // Unset optional fields stay out of the wire format.
        assert!(!jsonl.lines().next().unwrap().contains("priority"));
    }

    #[test]
    fn identical_logical_runs_serialize_identically() {
        let build = || {
            let mut log = TraceLog::logical();
            for i in 0..3 {
                let mut e = TraceEvent::new(EventKind::NodePopped, "t", 0);
                e.expansions = i;
                log.emit(e);
            }
            log.to_jsonl()
        };
        assert_eq!(build(), build());
    }
}
