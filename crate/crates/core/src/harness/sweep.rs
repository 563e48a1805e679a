//! Ablation grids over (budget, depth, branching), reported with relative
//! change against the no-search baseline cell.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{pct, run_suite, AgentKind, HarnessError, RunConfig};
use crate::search::SearchConfig;

/// Axes of the sweep; an empty axis reuses the base config's value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub budgets: Vec<usize>,
    pub depths: Vec<usize>,
    pub branches: Vec<usize>,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.budgets.is_empty() && self.depths.is_empty() && self.branches.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub budget_c: usize,
    pub max_depth: usize,
    pub branching: usize,
    pub sr: Option<f64>,
    /// Relative change vs the baseline SR, in percent.
    pub delta_pct: Option<f64>,
    pub n_tasks: usize,
}

/// Sweep results, serialized as `sweep.json` next to the text table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Success rate of the no-search cell (c=0, d=0).
    pub baseline_sr: Option<f64>,
    pub cells: Vec<SweepCell>,
}

/// Relative change in percent from a baseline rate to a new rate; undefined
/// for a zero baseline.
pub fn relative_delta_pct(base: f64, new: f64) -> Option<f64> {
    (base != 0.0).then(|| (new - base) / base * 100.0)
}

/// Render a relative change the way result tables print it: sign, one
/// decimal, percent.
pub fn format_delta(delta: Option<f64>) -> String {
    match delta {
        Some(d) => format!("{d:+.1}%"),
        None => "n/a".into(),
    }
}

fn sr_text(sr: Option<f64>) -> String {
    sr.map_or("n/a".into(), pct)
}

/// One suite run per grid cell plus the shared baseline, written under
/// `out_dir/cells/`; emits `sweep.json` and an aligned `sweep.txt`.
pub fn ablation_sweep(
    base: &RunConfig,
    grid: &SweepGrid,
    out_dir: &Path,
) -> Result<SweepTable, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::Config("sweep grid has no axes".into()));
    }
    let pick = |axis: &[usize], fallback: usize| -> Vec<usize> {
        if axis.is_empty() { vec![fallback] } else { axis.to_vec() }
    };
    let budgets = pick(&grid.budgets, base.search.budget_c);
    let depths = pick(&grid.depths, base.search.max_depth);
    let branches = pick(&grid.branches, base.search.branching);

    let baseline_cfg = RunConfig {
        agent: AgentKind::Search,
        search: SearchConfig { budget_c: 0, max_depth: 0, ..base.search },
        ..base.clone()
    };
    let baseline = run_suite(&baseline_cfg, &out_dir.join("cells/baseline"))?;
    let baseline_sr = baseline.overall_sr;

    let mut cells = Vec::new();
    for &c in &budgets {
        for &d in &depths {
            for &b in &branches {
                let cfg = RunConfig {
                    agent: AgentKind::Search,
                    search: SearchConfig {
                        budget_c: c,
                        max_depth: d,
                        branching: b,
                        ..base.search
                    },
                    ..base.clone()
                };
                let cell_dir = out_dir.join(format!("cells/c{c}_d{d}_b{b}"));
                let metrics = run_suite(&cfg, &cell_dir)?;
                let delta_pct = match (baseline_sr, metrics.overall_sr) {
                    (Some(base_sr), Some(sr)) => relative_delta_pct(base_sr, sr),
                    _ => None,
                };
                cells.push(SweepCell {
                    budget_c: c,
                    max_depth: d,
                    branching: b,
                    sr: metrics.overall_sr,
                    delta_pct,
                    n_tasks: metrics.n_tasks,
                });
            }
        }
    }

    let table = SweepTable { baseline_sr, cells };
    fs::write(
        out_dir.join("sweep.json"),
        serde_json::to_string_pretty(&table).expect("sweep serializes") + "\n",
    )?;
    fs::write(out_dir.join("sweep.txt"), format_sweep(&table))?;
    Ok(table)
}

/// Fixed-width text table: baseline line, then one row per cell.
pub fn format_sweep(table: &SweepTable) -> String {
    let mut out = format!("baseline c=0 d=0  SR={}\n", sr_text(table.baseline_sr));
    out.push_str(&format!("{:>5} {:>4} {:>4} {:>9} {:>10}\n", "c", "d", "b", "SR", "Δ"));
    for cell in &table.cells {
        out.push_str(&format!(
            "{:>5} {:>4} {:>4} {:>9} {:>10}\n",
            cell.budget_c,
            cell.max_depth,
            cell.branching,
            sr_text(cell.sr),
            format_delta(cell.delta_pct),
        ));
    }
    out
}
