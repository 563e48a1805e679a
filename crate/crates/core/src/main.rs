//! Command-line front end: run task suites, sweep ablation grids, render
//! search-tree graphs from traces, and validate task files.
//!
//! Exit codes: 0 on success, 1 for configuration problems, 2 for problems
//! in input data files.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scout::env::{load_definitions, load_tasks, validate_definition, validate_tasks};
use scout::harness::render::{render_tree_file, RenderError};
use scout::harness::sweep::{ablation_sweep, format_sweep, SweepGrid};
use scout::harness::{
    format_table, run_suite, AgentKind, HarnessError, LmSpec, PolicyBackend, RunConfig,
    ValueBackend,
};

#[derive(Parser)]
#[command(
    name = "scout",
    version,
    about = "Best-first search agent for deterministic scripted web environments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a task suite and write metrics, traces, and a results table.
    Run(RunArgs),
    /// Run one suite per cell of a (budget, depth, branching) grid.
    Sweep(SweepArgs),
    /// Convert a trace file into a Graphviz search-tree document.
    Render(RenderArgs),
    /// Check environment and task files for structural problems.
    ValidateTasks(ValidateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum LmMode {
    Http,
    Scripted,
    Replay,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (JSON); the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment definitions file.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Task suite file (JSON lines).
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Agent variant to run.
    #[arg(long, value_enum)]
    agent: Option<AgentKind>,
    /// Node valuations allowed per search round; 0 means act greedily.
    #[arg(short = 'c', long)]
    budget: Option<usize>,
    /// How deep the search tree may grow below the committed state.
    #[arg(short = 'd', long)]
    depth: Option<usize>,
    /// Children kept per expansion.
    #[arg(short = 'b', long)]
    branch: Option<usize>,
    /// Value at which search commits immediately.
    #[arg(long)]
    theta: Option<f64>,
    /// Hard cap on committed actions per episode.
    #[arg(long)]
    max_actions: Option<usize>,
    /// LM samples per proposal call and per value call.
    #[arg(long)]
    samples: Option<usize>,
    /// LM transport: live endpoint, scripted completions, or replay store.
    #[arg(long, value_enum)]
    lm: Option<LmMode>,
    /// Completion-batches file for `--lm scripted`.
    #[arg(long)]
    lm_script: Option<PathBuf>,
    /// Exchange store: recording target for http/scripted, source for replay.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Endpoint root for `--lm http`.
    #[arg(long)]
    base_url: Option<String>,
    /// Model name placed in requests.
    #[arg(long)]
    model: Option<String>,
    /// Take proposals from this action-script file instead of an LM.
    #[arg(long)]
    policy_script: Option<PathBuf>,
    /// Grade states by simulator goal-reachability instead of an LM judge.
    #[arg(long)]
    oracle_value: bool,
    /// Shuffles suite execution order.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Budget axis, e.g. `--budgets 0,1,3,5,20`.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<usize>,
    /// Depth axis.
    #[arg(long, value_delimiter = ',')]
    depths: Vec<usize>,
    /// Branching axis.
    #[arg(long, value_delimiter = ',')]
    branches: Vec<usize>,
}

#[derive(Args)]
struct RenderArgs {
    /// Trace file (JSON lines).
    trace: PathBuf,
    /// Task id inside the trace.
    task: String,
    /// Write the graph here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Environment definitions file.
    env: PathBuf,
    /// Task suite file (JSON lines).
    tasks: PathBuf,
}

fn resolve_config(args: &CommonArgs) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &args.env {
        cfg.env_path = p.clone();
    }
    if let Some(p) = &args.tasks {
        cfg.tasks_path = p.clone();
    }
    if let Some(agent) = args.agent {
        cfg.agent = agent;
    }
    if let Some(c) = args.budget {
        cfg.search.budget_c = c;
    }
    if let Some(d) = args.depth {
        cfg.search.max_depth = d;
    }
    if let Some(b) = args.branch {
        cfg.search.branching = b;
    }
    if let Some(theta) = args.theta {
        cfg.search.theta = theta;
    }
    if let Some(m) = args.max_actions {
        cfg.episode.max_actions = m;
    }
    if let Some(s) = args.samples {
        cfg.proposal.samples = s;
        cfg.value.samples = s;
    }
    if let Some(mode) = args.lm {
        cfg.lm = match mode {
            LmMode::Http => {
                let endpoint = match cfg.lm {
                    LmSpec::Http { endpoint, .. } => endpoint,
                    _ => Default::default(),
                };
                LmSpec::Http { endpoint, record: args.store.clone() }
            }
            LmMode::Scripted => LmSpec::Scripted {
                script: args.lm_script.clone().ok_or_else(|| {
                    HarnessError::Config("--lm scripted requires --lm-script".into())
                })?,
                record: args.store.clone(),
            },
            LmMode::Replay => LmSpec::Replay {
                store: args.store.clone().ok_or_else(|| {
                    HarnessError::Config("--lm replay requires --store".into())
                })?,
            },
        };
    }
    if let Some(url) = &args.base_url {
        if let LmSpec::Http { endpoint, .. } = &mut cfg.lm {
            endpoint.base_url = url.clone();
        } else {
            return Err(HarnessError::Config("--base-url only applies to --lm http".into()));
        }
    }
    if let Some(path) = &args.policy_script {
        cfg.policy_backend = PolicyBackend::Scripted { path: path.clone() };
    }
    if args.oracle_value {
        cfg.value_backend = ValueBackend::Oracle { horizon: None, cap: None };
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir_of(cfg: &RunConfig, fallback: &str) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn exit_code_for(err: &HarnessError) -> ExitCode {
    match err {
        HarnessError::Tasks(_) => ExitCode::from(2),
        HarnessError::Config(_) | HarnessError::Io(_) => ExitCode::from(1),
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), HarnessError> {
    let cfg = resolve_config(&args.common)?;
    let out_dir = out_dir_of(&cfg, "scout-out");
    let metrics = run_suite(&cfg, &out_dir)?;
    print!("{}", format_table(&cfg, &metrics));
    println!("\nartifacts: {}", out_dir.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), HarnessError> {
    let cfg = resolve_config(&args.common)?;
    let out_dir = out_dir_of(&cfg, "scout-sweep");
    let grid = SweepGrid {
        budgets: args.budgets.clone(),
        depths: args.depths.clone(),
        branches: args.branches.clone(),
    };
    let table = ablation_sweep(&cfg, &grid, &out_dir)?;
    print!("{}", format_sweep(&table));
    println!("\nartifacts: {}", out_dir.display());
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<(), ExitCode> {
    match render_tree_file(&args.trace, &args.task) {
        Ok(dot) => {
            if let Some(out) = &args.out {
                if let Err(e) = fs::write(out, &dot) {
                    eprintln!("error: write {}: {e}", out.display());
                    return Err(ExitCode::from(1));
                }
                println!("wrote {}", out.display());
            } else {
                print!("{dot}");
            }
            Ok(())
        }
        Err(e @ RenderError::UnknownTask(_)) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(2))
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(1))
        }
    }
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), ExitCode> {
    let fail = |msg: String| {
        eprintln!("error: {msg}");
        ExitCode::from(2)
    };
    let defs = match load_definitions(&args.env) {
        Ok(d) => d,
        Err(e) => return Err(fail(format!("{}: {e}", args.env.display()))),
    };
    let tasks = match load_tasks(&args.tasks) {
        Ok(t) => t,
        Err(e) => return Err(fail(format!("{}: {e}", args.tasks.display()))),
    };
    let mut problems = Vec::new();
    for def in &defs {
        for p in validate_definition(def) {
            problems.push(format!("env {}: {p}", def.name));
        }
    }
    problems.extend(validate_tasks(&defs, &tasks));
    if problems.is_empty() {
        println!("ok: {} environment(s), {} task(s)", defs.len(), tasks.len());
        Ok(())
    } else {
        for p in &problems {
            println!("problem: {p}");
        }
        Err(ExitCode::from(2))
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args).map_err(|e| {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }),
        Command::Sweep(args) => cmd_sweep(args).map_err(|e| {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }),
        Command::Render(args) => cmd_render(args),
        Command::ValidateTasks(args) => cmd_validate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
