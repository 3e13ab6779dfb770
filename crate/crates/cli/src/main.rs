//! Command-line front end: `solve`, `sweep` and `check`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 divergence,
//! 3 failed check.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nash_cbo::checks::{run_checks, CheckOptions, Suite};
use nash_cbo::dynamics::DiffusionMode;
use nash_cbo::experiments::{aggregate, build_case, run_sweep, solve, CaseId, Preset};
use nash_cbo::game::{GameConfig, GameKind};
use nash_cbo::io::{
    fmt_f64, load_run_config, load_sweep_spec, summary_csv, to_json, trace_csv, write_output,
    RunConfig, RunManifest, SweepManifest,
};

#[derive(Parser)]
#[command(
    name = "nash-cbo",
    version,
    about = "Consensus-based solver for Nash equilibria"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solve and write trace.csv and manifest.json.
    Solve(SolveArgs),
    /// Run a parameter sweep and write sweep_summary.csv and manifest.json.
    Sweep(SweepArgs),
    /// Run the numerical self-checks.
    Check(CheckArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// TOML config or a solve manifest; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// quadratic_perturbed, quadratic or cournot.
    #[arg(long, required_unless_present = "config")]
    game: Option<GameKind>,
    /// Number of players.
    #[arg(long)]
    m: Option<usize>,
    /// Strategy dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Particles per player.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// aniso or iso.
    #[arg(long)]
    mode: Option<DiffusionMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trace_every: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// a1..a4, b1..b3 or the long names such as a1_alpha.
    #[arg(long, required_unless_present = "config")]
    case: Option<String>,
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// Sweep spec as TOML or a sweep manifest; replaces --case and --preset.
    #[arg(long, conflicts_with_all = ["case"])]
    config: Option<PathBuf>,
    /// Use seeds 0..k.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long, env = "NASH_CBO_THREADS")]
    threads: Option<usize>,
    /// Also write one trace CSV per run under traces/.
    #[arg(long)]
    trace: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Run a single suite.
    #[arg(long)]
    only: Option<Suite>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    flip_gradient_sign: bool,
}

enum Outcome {
    Done,
    Diverged,
    ChecksFailed(Vec<String>),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Check(args) => cmd_check(args),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => ExitCode::from(2),
        Ok(Outcome::ChecksFailed(names)) => {
            eprintln!("failed checks: {}", names.join(", "));
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn solve_config(args: &SolveArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, args.game) {
        (Some(path), _) => {
            let mut cfg = load_run_config(path)?;
            if let Some(kind) = args.game {
                cfg.game.kind = kind;
            }
            cfg.game.players = args.m.unwrap_or(cfg.game.players);
            cfg.game.dim = args.d.unwrap_or(cfg.game.dim);
            cfg
        }
        (None, Some(kind)) => {
            let players = args.m.unwrap_or(4);
            let game = match kind {
                GameKind::Cournot => GameConfig::cournot(args.d.unwrap_or(5), players, 0),
                _ => GameConfig {
                    dim: args.d.unwrap_or(1),
                    ..GameConfig::quadratic(players)
                },
            };
            RunConfig::defaults(GameConfig { kind, ..game })
        }
        (None, None) => bail!("--game is required without --config"),
    };
    let s = &mut cfg.solver;
    s.particles = args.n.unwrap_or(s.particles);
    s.lambda = args.lambda.unwrap_or(s.lambda);
    s.sigma = args.sigma.unwrap_or(s.sigma);
    s.alpha = args.alpha.unwrap_or(s.alpha);
    s.dt = args.dt.unwrap_or(s.dt);
    s.steps = args.steps.unwrap_or(s.steps);
    s.mode = args.mode.unwrap_or(s.mode);
    s.seed = args.seed.unwrap_or(s.seed);
    cfg.output.trace_every = args.trace_every.unwrap_or(cfg.output.trace_every);
    if cfg.output.trace_every == 0 {
        bail!("--trace-every must be at least 1");
    }
    Ok(cfg)
}

fn cmd_solve(args: SolveArgs) -> Result<Outcome> {
    let cfg = solve_config(&args)?;
    cfg.solver.validate()?;
    let instance = cfg.game.instantiate().context("invalid game")?;
    let init = cfg.resolve_init(&instance.nash)?;
    for w in cfg.solver.warnings() {
        eprintln!("warning: {w}");
    }
    let start = Instant::now();
    let out = solve(&instance, &cfg.solver, &init, Some(cfg.output.trace_every))
        .context("solve failed")?;
    let wall = start.elapsed().as_secs_f64();

    let (dim, players) = (cfg.game.dim, cfg.game.players);
    let csv = trace_csv(&out.records, dim, players, instance.cournot.is_some());
    write_output(&args.out_dir, "trace.csv", &csv)?;
    let manifest = RunManifest::new(&cfg, &init, &instance.nash);
    write_output(&args.out_dir, "manifest.json", &to_json(&manifest)?)?;

    let residual = out
        .final_residual
        .map(|r| format!(" residual={}", fmt_f64(r)))
        .unwrap_or_default();
    println!(
        "final V={}{residual} wall_time={wall:.3}s",
        fmt_f64(out.final_v())
    );
    match out.divergence {
        Some(e) => {
            eprintln!("diverged: {e}");
            Ok(Outcome::Diverged)
        }
        None => Ok(Outcome::Done),
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(usize::from)
        .unwrap_or(1)
}

fn cmd_sweep(args: SweepArgs) -> Result<Outcome> {
    let mut spec = match (&args.config, &args.case) {
        (Some(path), _) => load_sweep_spec(path)?,
        (None, Some(case)) => {
            let case: CaseId = case.parse()?;
            build_case(case, args.preset)
        }
        (None, None) => bail!("--case is required without --config"),
    };
    if let Some(k) = args.seeds {
        spec.seeds = (0..k).collect();
    }
    spec.trace |= args.trace;
    let threads = args.threads.unwrap_or_else(default_threads).max(1);
    let start = Instant::now();
    let result = run_sweep(&spec, threads).context("sweep failed")?;
    let cells = aggregate(&result);
    write_output(
        &args.out_dir,
        "sweep_summary.csv",
        &summary_csv(&result, &cells),
    )?;
    let manifest = SweepManifest::new(&result, threads);
    write_output(&args.out_dir, "manifest.json", &to_json(&manifest)?)?;
    if spec.trace {
        write_traces(&args.out_dir.join("traces"), &result)?;
    }
    println!(
        "{}: {} runs over {} cells, {} diverged, wall_time={:.3}s",
        spec.case.as_str(),
        result.runs.len(),
        cells.len(),
        manifest.diverged,
        start.elapsed().as_secs_f64()
    );
    Ok(Outcome::Done)
}

fn write_traces(dir: &Path, result: &nash_cbo::experiments::SweepResult) -> Result<()> {
    let (dim, players) = (result.spec.game.dim, result.spec.game.players);
    let has_residual = result.spec.game.kind == GameKind::Cournot;
    for r in &result.runs {
        let Some(trace) = &r.trace else { continue };
        // Runs on a d axis have their own dimension.
        let dim = trace.first().map_or(dim, |t| t.consensus.dim());
        let name = format!("run_{}_{}_{}.csv", r.point, r.mode.as_str(), r.seed);
        write_output(dir, &name, &trace_csv(trace, dim, players, has_residual))?;
    }
    Ok(())
}

fn cmd_check(args: CheckArgs) -> Result<Outcome> {
    let opts = CheckOptions {
        seed: args.seed,
        flip_gradient_sign: args.flip_gradient_sign,
    };
    let outcomes = run_checks(args.only, &opts);
    let width = outcomes
        .iter()
        .map(|o| o.suite.as_str().len())
        .max()
        .unwrap_or(0);
    let mut failed = Vec::new();
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        let kind = if o.suite.is_statistical() {
            " (statistical)"
        } else {
            ""
        };
        println!("{status}  {:width$}  {}{kind}", o.suite.as_str(), o.detail);
        if !o.passed {
            failed.push(o.suite.as_str().to_string());
        }
    }
    Ok(if failed.is_empty() {
        Outcome::Done
    } else {
        Outcome::ChecksFailed(failed)
    })
}
