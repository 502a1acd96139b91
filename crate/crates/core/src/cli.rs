//! The `listwise` command line.
//!
//! Exit codes: 0 success, 1 runtime or audit failure, 2 usage or
//! validation failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::metrics::{self, cutoff_depth, cutoff_label, format_value};
use crate::model::{validate_config, CandidatePool, JudgeSpec, StoppingRule, Strategy, TournamentConfig, UtilityState};
use crate::report;
use crate::rundir::{self, RunStatus};
use crate::synth::{synthetic_pool, UtilityGen};
use crate::tournament::{self, RunArtifacts, RunError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Largest per-component state difference a replay may show.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "listwise", version, about = "Active listwise-tournament ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a tournament against a simulated judge.
    Simulate(SimulateArgs),
    /// Run a tournament against an external or interactive judge.
    Run(RunArgs),
    /// Score fitted utilities against a reference ranking.
    Evaluate(EvaluateArgs),
    /// Recompute a run's states from its observation log and audit them.
    Replay(ReplayArgs),
    /// Emit plot-ready series (and optional SVG charts) for a run.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct TournamentArgs {
    /// JSON file with TournamentConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Subset size K.
    #[arg(long)]
    k: Option<usize>,
    /// Number of iterations T.
    #[arg(long)]
    iters: Option<usize>,
    /// uniform, variance_topk, boundary (kl_ucb), qbc or mckg.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    /// Separate seed for the judge's random stream.
    #[arg(long)]
    judge_seed: Option<u64>,
    /// L2 regularization strength.
    #[arg(long)]
    lambda: Option<f64>,
    /// Gradient infinity-norm at which a fit counts as converged.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// NDCG cutoffs in percent, e.g. 10,15,20,25.
    #[arg(long, value_delimiter = ',')]
    cutoffs: Option<Vec<f64>>,
    /// Shortlist fraction for boundary probing.
    #[arg(long)]
    shortlist: Option<f64>,
    /// QBC committee size.
    #[arg(long)]
    committee: Option<usize>,
    /// Random proposals scored per iteration (qbc, mckg).
    #[arg(long)]
    proposals: Option<usize>,
    /// MC-KG rollouts per proposal.
    #[arg(long)]
    rollouts: Option<usize>,
    /// Send the current fitted order of the subset with each request.
    #[arg(long)]
    prior_ordering: bool,
    /// Stop once rankings stabilize (see --stop-window/--stop-tau/--stop-du).
    #[arg(long)]
    early_stop: bool,
    #[arg(long, requires = "early_stop")]
    stop_window: Option<usize>,
    #[arg(long, requires = "early_stop")]
    stop_tau: Option<f64>,
    #[arg(long, requires = "early_stop")]
    stop_du: Option<f64>,
    /// Write per-iteration acquisition scores to diagnostics.jsonl.
    #[arg(long)]
    diagnostics: bool,
    /// Run directory to create.
    #[arg(long, env = "LISTWISE_OUT_DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    tournament: TournamentArgs,
    /// Pool file with true utilities.
    #[arg(long, conflicts_with_all = ["n", "utility_gen"], required_unless_present = "n")]
    pool: Option<PathBuf>,
    /// Synthesize a pool of this many candidates.
    #[arg(long)]
    n: Option<usize>,
    /// normal:sd=1, uniform:lo,hi or tiered:tiers=3,gap=2[,sd=0.6].
    #[arg(long, default_value = "normal:sd=1")]
    utility_gen: UtilityGen,
    /// pl (Plackett-Luce noise) or swap (adjacent swaps).
    #[arg(long, value_parser = ["pl", "swap"])]
    judge: Option<String>,
    /// PL judge sharpness; `inf` for a deterministic judge.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    p_swap: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    tournament: TournamentArgs,
    #[arg(long)]
    pool: PathBuf,
    /// Judge command line, split on whitespace.
    #[arg(long, conflicts_with = "interactive", required_unless_present = "interactive")]
    judge_cmd: Option<String>,
    /// Rank subsets by hand at the terminal.
    #[arg(long)]
    interactive: bool,
    #[arg(long, default_value_t = 2)]
    retries: u32,
    #[arg(long, default_value_t = 60_000)]
    timeout_ms: u64,
    /// Reference ranking (one id per line, strongest first).
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Run directory; uses its pool.json and last state.
    #[arg(long, conflicts_with_all = ["state", "pool"], required_unless_present = "state")]
    run: Option<PathBuf>,
    /// UtilityState JSON, or a states.jsonl whose last line is used.
    #[arg(long, requires = "pool")]
    state: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    reference: PathBuf,
    /// Cutoffs in percent.
    #[arg(long, value_delimiter = ',', default_value = "10,15,20,25")]
    cutoffs: Vec<f64>,
    /// Also write the scores as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    run: PathBuf,
    /// Replay only the first t observations.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Output directory (defaults to the run directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG line charts.
    #[arg(long)]
    svg: bool,
}

/// A failure with its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

pub fn main() -> i32 {
    main_from(std::env::args_os())
}

pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Run(a) => cmd_run(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_config(args: &TournamentArgs) -> Result<TournamentConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => TournamentConfig::default(),
    };
    macro_rules! set {
        ($flag:ident => $field:ident) => {
            if let Some(v) = args.$flag.clone() {
                config.$field = v;
            }
        };
    }
    set!(k => subset_size);
    set!(iters => iterations);
    set!(strategy => strategy);
    set!(seed => seed);
    set!(lambda => lambda);
    set!(tolerance => fit_tolerance);
    set!(max_steps => max_fit_steps);
    set!(shortlist => shortlist_fraction);
    set!(committee => qbc_committee);
    set!(proposals => proposal_pool);
    set!(rollouts => mckg_rollouts);
    if args.judge_seed.is_some() {
        config.judge_seed = args.judge_seed;
    }
    if let Some(c) = &args.cutoffs {
        config.cutoffs = c.iter().map(|p| p / 100.0).collect();
    }
    if args.prior_ordering {
        config.prior_ordering_in_prompt = true;
    }
    if args.diagnostics {
        config.dump_diagnostics = true;
    }
    if args.early_stop {
        let mut rule = config.early_stopping.unwrap_or_default();
        rule = StoppingRule {
            window: args.stop_window.unwrap_or(rule.window),
            tau_threshold: args.stop_tau.unwrap_or(rule.tau_threshold),
            du_threshold: args.stop_du.unwrap_or(rule.du_threshold),
        };
        config.early_stopping = Some(rule);
    }
    Ok(config)
}

fn check_config(config: &TournamentConfig) -> CmdResult {
    let violations = validate_config(config);
    if violations.is_empty() {
        return Ok(());
    }
    let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
    Err(Failure::usage(text.join("; ")))
}

fn read_pool_file(path: &Path) -> Result<CandidatePool, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    CandidatePool::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Reads a reference ranking: a JSON array of ids or one id per line
/// (blank lines and `#` comments ignored).
fn read_reference_ids(path: &Path) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())));
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Maps reference ids onto pool indices, naming every missing or unknown id.
fn resolve_reference(pool: &CandidatePool, ids: &[String]) -> Result<Vec<usize>, Failure> {
    let listed: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    let unknown: Vec<&str> = ids.iter().map(String::as_str).filter(|id| pool.index_of(id).is_err()).collect();
    let missing: Vec<&str> = pool.ids().filter(|id| !listed.contains(id)).collect();
    let mut problems = Vec::new();
    if !missing.is_empty() {
        problems.push(format!("missing ids: {}", missing.join(", ")));
    }
    if !unknown.is_empty() {
        problems.push(format!("unknown ids: {}", unknown.join(", ")));
    }
    if listed.len() != ids.len() {
        problems.push("reference lists an id more than once".to_string());
    }
    if !problems.is_empty() {
        return Err(Failure::runtime(format!("reference does not match the pool ({})", problems.join("; "))));
    }
    Ok(ids.iter().map(|id| pool.index_of(id).expect("checked")).collect())
}

fn execute(config: &TournamentConfig, pool: &CandidatePool, reference: Option<&[usize]>, out: &Path) -> CmdResult {
    let mut judge = tournament::judge_for(config, pool).map_err(|e| Failure::usage(e.to_string()))?;
    match tournament::run(config, pool, judge.as_mut(), reference) {
        Ok(artifacts) => {
            rundir::write_run_dir(out, &artifacts, pool, RunStatus::Completed, None)?;
            print_summary(&artifacts, pool, out);
            Ok(())
        }
        Err(RunError::Setup(e)) => Err(Failure::usage(e.to_string())),
        Err(RunError::Aborted { completed, partial, source }) => {
            let status = match source {
                Error::Judge(_) => RunStatus::Partial,
                _ if completed > 0 => RunStatus::Partial,
                _ => RunStatus::Failed,
            };
            rundir::write_run_dir(out, &partial, pool, status, Some(source.to_string()))?;
            Err(Failure::runtime(format!(
                "run aborted after {completed} of {} iterations: {source}; partial results in {}",
                config.iterations,
                out.display()
            )))
        }
    }
}

fn print_summary(artifacts: &RunArtifacts, pool: &CandidatePool, out: &Path) {
    let order: Vec<&str> = artifacts.final_state().ranking().into_iter().map(|i| pool.id_of(i)).collect();
    println!("iterations: {}{}", artifacts.completed(), if artifacts.stopped_early { " (stopped early)" } else { "" });
    println!("final ranking: {}", order.join(" "));
    if let Some(last) = artifacts.metrics.last() {
        if let Some(tau) = last.kendall_tau_successive {
            println!("kendall_tau_successive: {}", format_value(tau));
        }
        println!("delta_u: {}", format_value(last.delta_u));
        if let Some(ndcg) = &last.ndcg {
            for (p, v) in artifacts.config.cutoffs.iter().zip(ndcg) {
                println!("ndcg@{}%: {}", cutoff_label(*p), format_value(*v));
            }
        }
        if let Some(tau) = last.kendall_tau_vs_reference {
            println!("kendall_tau_vs_reference: {}", format_value(tau));
        }
    }
    println!("run directory: {}", out.display());
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    let mut config = load_config(&args.tournament)?;
    let judge = match args.judge.as_deref() {
        Some("swap") => Some(JudgeSpec::Swap {
            p_swap: args.p_swap.unwrap_or(0.1),
        }),
        Some(_) => Some(JudgeSpec::pl(args.beta.unwrap_or(1.5))),
        None if args.beta.is_some() => Some(JudgeSpec::pl(args.beta.unwrap_or(1.5))),
        None if args.p_swap.is_some() => Some(JudgeSpec::Swap {
            p_swap: args.p_swap.unwrap_or(0.1),
        }),
        None => None,
    };
    match judge {
        Some(j) => config.judge = j,
        None if !config.judge.needs_true_utilities() => config.judge = JudgeSpec::pl(1.5),
        None => {}
    }
    if let Some(n) = args.n {
        config.n_candidates = n;
    }
    let pool = match &args.pool {
        Some(path) => {
            let pool = read_pool_file(path)?;
            if !pool.is_synthetic() {
                return Err(Failure::usage(format!("{} has no true utilities to simulate from", path.display())));
            }
            config.n_candidates = pool.len();
            check_config(&config)?;
            pool
        }
        None => {
            check_config(&config)?;
            synthetic_pool(config.n_candidates, &args.utility_gen, config.seed).map_err(|e| Failure::usage(e.to_string()))?
        }
    };
    let truth = pool.true_order().expect("synthetic pool");
    execute(&config, &pool, Some(&truth), &args.tournament.out)
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let mut config = load_config(&args.tournament)?;
    let pool = read_pool_file(&args.pool)?;
    config.n_candidates = pool.len();
    config.judge = match &args.judge_cmd {
        Some(cmd) => JudgeSpec::External {
            command: cmd.split_whitespace().map(str::to_string).collect(),
            retries: args.retries,
            timeout_ms: args.timeout_ms,
        },
        None => JudgeSpec::Interactive,
    };
    check_config(&config)?;
    let reference = match &args.reference {
        Some(path) => Some(resolve_reference(&pool, &read_reference_ids(path)?).map_err(|f| Failure::usage(f.message))?),
        None => None,
    };
    execute(&config, &pool, reference.as_deref(), &args.tournament.out)
}

fn read_state_file(path: &Path) -> Result<UtilityState, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    if let Ok(state) = serde_json::from_str::<UtilityState>(&text) {
        return Ok(state);
    }
    rundir::parse_states(&text)
        .map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?
        .pop()
        .ok_or_else(|| Failure::runtime(format!("{} holds no state", path.display())))
}

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let (state, pool) = match &args.run {
        Some(dir) => {
            let pool = rundir::read_pool(dir)?;
            let state = rundir::read_states(dir)?
                .pop()
                .ok_or_else(|| Failure::runtime("run has no states"))?;
            (state, pool)
        }
        None => {
            let pool = read_pool_file(args.pool.as_deref().expect("clap requires --pool"))?;
            (read_state_file(args.state.as_deref().expect("clap requires --state"))?, pool)
        }
    };
    if state.len() != pool.len() {
        return Err(Failure::runtime(format!(
            "state has {} utilities but the pool has {} candidates",
            state.len(),
            pool.len()
        )));
    }
    let reference = resolve_reference(&pool, &read_reference_ids(&args.reference)?)?;
    let cutoffs: Vec<f64> = args.cutoffs.iter().map(|p| p / 100.0).collect();
    if let Some(bad) = cutoffs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Failure::usage(format!("cutoff {}% outside (0, 100]", bad * 100.0)));
    }
    let predicted = state.ranking();
    let mut header = Vec::new();
    let mut values = Vec::new();
    println!("{:<8} {:>6} {:>10}", "cutoff", "depth", "ndcg");
    for &p in &cutoffs {
        let v = metrics::ndcg_at(&predicted, &reference, p)?;
        println!("{:<8} {:>6} {:>10}", format!("{}%", cutoff_label(p)), cutoff_depth(p, pool.len()), format_value(v));
        header.push(format!("ndcg_{}", cutoff_label(p)));
        values.push(format_value(v));
    }
    let tau = metrics::kendall_tau(&predicted, &reference)?;
    println!("kendall_tau: {}", format_value(tau));
    header.push("kendall_tau_vs_reference".into());
    values.push(format_value(tau));
    if let Some(path) = &args.csv {
        fs::write(path, format!("{}\n{}\n", header.join(","), values.join(",")))
            .map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> CmdResult {
    let dir = &args.run;
    let config = rundir::read_config(dir)?;
    let pool = rundir::read_pool(dir)?;
    let log_text = rundir::read_observation_text(dir)?;
    match rundir::read_manifest(dir)? {
        Some(manifest) => {
            let tampered = rundir::tampered_lines(&manifest, &log_text);
            if !tampered.is_empty() {
                let lines: Vec<String> = tampered.iter().map(usize::to_string).collect();
                return Err(Failure::runtime(format!(
                    "audit failed: observations.jsonl line(s) {} differ from the manifest digests",
                    lines.join(", ")
                )));
            }
        }
        None => eprintln!("warning: no manifest.json; skipping log digest check"),
    }
    let mut observations = crate::model::decode_observation_log(&log_text, &pool).map_err(|e| Failure::runtime(format!("audit failed: observations.jsonl {e}")))?;
    if let Some(t) = args.iters {
        if t > observations.len() {
            return Err(Failure::usage(format!("--iters {t} exceeds the {} logged observations", observations.len())));
        }
        observations.truncate(t);
    }
    let replayed = tournament::replay(&observations, &config, &pool)?;
    let stored = rundir::read_states(dir)?;
    if stored.len() < replayed.len() {
        return Err(Failure::runtime(format!(
            "audit failed: states.jsonl holds {} states, replay produced {}",
            stored.len(),
            replayed.len()
        )));
    }
    let deviation = max_deviation(&replayed, &stored[..replayed.len()]);
    println!("replayed {} iteration(s); max deviation {deviation:e}", observations.len());
    if !(deviation <= REPLAY_TOLERANCE) {
        return Err(Failure::runtime(format!("audit failed: deviation {deviation:e} exceeds {REPLAY_TOLERANCE:e}")));
    }
    Ok(())
}

/// Largest absolute difference across utilities and variances.
pub fn max_deviation(a: &[UtilityState], b: &[UtilityState]) -> f64 {
    let mut worst = 0.0_f64;
    for (x, y) in a.iter().zip(b) {
        if x.len() != y.len() {
            return f64::INFINITY;
        }
        for (p, q) in x.u.iter().zip(&y.u).chain(x.sigma2.iter().zip(&y.sigma2)) {
            let d = (p - q).abs();
            worst = if d.is_nan() { f64::INFINITY } else { worst.max(d) };
        }
    }
    worst
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let path = args.run.join(rundir::METRICS_FILE);
    let file = fs::File::open(&path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    let table = metrics::read_metrics_csv(file)?;
    let out = args.out.unwrap_or_else(|| args.run.clone());
    fs::create_dir_all(&out).map_err(|e| Failure::runtime(e.to_string()))?;
    let write = |name: &str, body: String| -> CmdResult {
        let p = out.join(name);
        fs::write(&p, body).map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))?;
        println!("wrote {}", p.display());
        Ok(())
    };
    match report::ndcg_progression_csv(&table) {
        Some(csv) => {
            write("ndcg_progression.csv", csv)?;
            if args.svg {
                write("ndcg_progression.svg", report::ndcg_svg(&table).expect("ndcg columns present"))?;
            }
        }
        None => eprintln!("warning: run has no reference ranking; skipping ndcg_progression.csv"),
    }
    write("convergence.csv", report::convergence_csv(&table))?;
    if args.svg {
        write("convergence.svg", report::convergence_svg(&table))?;
    }
    Ok(())
}
