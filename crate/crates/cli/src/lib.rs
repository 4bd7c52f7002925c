//! Command-line driver: config ingestion, the `solve`, `certify`,
//! `simulate` and `report` subcommands, CSV artifacts and SVG plots.

pub mod config;
pub mod io;
pub mod manifest;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mdpcg::game::nash_gap;
use mdpcg::mdp::flow_residual;
use mdpcg::rollout::evaluate;
use mdpcg::solver::{extract_certificate, frank_wolfe, verify_certificate, KktCondition};
use mdpcg::warehouse::{ArrivalRule, CongestionSign};

pub use config::{Problem, RunConfig};
pub use manifest::RunManifest;

/// Flow residual above which a loaded distribution is rejected.
pub const FEASIBILITY_TOL: f64 = 1e-6;
pub const DEFAULT_CERTIFY_TOL: f64 = 1e-6;
pub const CERTIFICATE_FILE: &str = "certificate.txt";

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    IterationCap,
    CertificationFailed,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Success => 0,
            Status::IterationCap => 2,
            Status::CertificationFailed => 3,
        }
    }
}

/// Exit code for input and structural errors.
pub const INPUT_ERROR: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "mdpcg", version, about = "Solve, certify and simulate MDP congestion games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute an equilibrium with Frank-Wolfe.
    Solve(RunArgs),
    /// Check an equilibrium through its KKT certificate.
    Certify(RunArgs),
    /// Roll out an equilibrium in the warehouse scenario.
    Simulate(RunArgs),
    /// Render SVG plots from a run directory.
    Report(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration; defaults reproduce the warehouse scenario.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seeds both the solver and the rollouts.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Solver gap and movement tolerance, or the certification tolerance.
    #[arg(long, value_name = "REAL")]
    pub tol: Option<f64>,
    #[arg(long, value_name = "N")]
    pub max_iters: Option<usize>,
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    /// Use the negative congestion sign (fails the admissibility check).
    #[arg(long)]
    pub paper_literal_congestion_sign: bool,
    /// Use `1 − exp(−λΔt)` as the arrival probability.
    #[arg(long)]
    pub arrival_complement: bool,
    /// Directory holding `x_player*.csv`; defaults to the output directory.
    #[arg(long, value_name = "DIR")]
    pub equilibrium: Option<PathBuf>,
}

/// Config after flag overrides, plus where to read and write.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub out: PathBuf,
    pub equilibrium: PathBuf,
    pub tol: Option<f64>,
}

impl Resolved {
    pub fn config_text(&self) -> String {
        self.config.to_toml()
    }
}

pub fn resolve(args: &RunArgs) -> Result<Resolved> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.solver.seed = seed;
        config.rollout.seed = seed;
    }
    if let Some(n) = args.max_iters {
        config.solver.max_iters = n;
    }
    if let Some(n) = args.trials {
        config.rollout.trials = n;
    }
    if args.paper_literal_congestion_sign {
        config.scenario.congestion_sign = CongestionSign::PaperLiteral;
    }
    if args.arrival_complement {
        config.scenario.arrival_rule = ArrivalRule::Complement;
    }
    if let Some(tol) = args.tol {
        if !(tol >= 0.0 && tol.is_finite()) {
            bail!("tol: must be a nonnegative number, got {tol}");
        }
    }
    if let Some(out) = &args.out {
        config.output.dir = out.clone();
    }
    let out = config.output.dir.clone();
    let equilibrium = args.equilibrium.clone().unwrap_or_else(|| out.clone());
    Ok(Resolved { config, out, equilibrium, tol: args.tol })
}

pub fn cmd_solve(run: &Resolved) -> Result<Status> {
    let mut config = run.config.clone();
    if let Some(tol) = run.tol {
        config.solver.gap_tol = tol;
        config.solver.move_tol = tol;
    }
    config.validate()?;
    let text = config.to_toml();
    let manifest = RunManifest::new("solve", &text, config.solver.seed);
    manifest.write(&run.out, &text)?;
    let problem = config.build()?;
    let instance = problem.instance();
    if !instance.is_admissible() {
        eprintln!("warning: cost model fails the admissibility check; the potential may be nonconvex");
    }
    let solution = frank_wolfe(instance, &config.solve_options()?)?;
    for (i, xi) in solution.x.players().iter().enumerate() {
        io::write_distribution(&io::distribution_path(&run.out, i), xi)?;
    }
    io::write_trace(&run.out.join(io::TRACE_FILE), &solution.trace, instance.players())?;
    let status = if solution.stop.converged() { Status::Success } else { Status::IterationCap };
    let last = solution.trace.last().expect("at least one iteration");
    println!(
        "solve: {} iterations, stop {:?}, potential {:.6e}, fw_gap {:.3e}, max movement {:.3e}",
        solution.trace.len(),
        solution.stop,
        last.potential,
        last.fw_gap,
        last.max_movement()
    );
    manifest.record_status(&run.out, &format!("{:?}", solution.stop))?;
    Ok(status)
}

fn load_equilibrium(run: &Resolved, problem: &Problem) -> Result<mdpcg::Joint> {
    let instance = problem.instance();
    let x = io::read_joint(&run.equilibrium, instance.players(), instance.dims())?;
    for i in 0..instance.players() {
        let r = flow_residual(x.player(i), instance.kernel(i), instance.initial(i))?;
        if !(r <= FEASIBILITY_TOL) {
            bail!("player {i}: distribution is infeasible, flow_residual {r:.3e} exceeds {FEASIBILITY_TOL:e}");
        }
    }
    Ok(x)
}

pub fn cmd_certify(run: &Resolved) -> Result<Status> {
    let tol = run.tol.unwrap_or(DEFAULT_CERTIFY_TOL);
    let text = run.config_text();
    let manifest = RunManifest::new("certify", &text, run.config.solver.seed);
    manifest.write(&run.out, &text)?;
    let problem = run.config.build()?;
    let instance = problem.instance();
    let x = load_equilibrium(run, &problem)?;
    let cert = extract_certificate(&x, instance)?;
    let verdict = verify_certificate(&x, &cert, instance, tol)?;
    let gap = nash_gap(&x, instance.model(), instance.kernels())?;
    let r = verdict.residuals;
    let mut report = format!(
        "tol={}\nprimal={}\ndual_min={}\ncomplementary={}\nstationarity={}\nnash_gap={}\n",
        io::real(tol),
        io::real(r.primal),
        io::real(r.dual_min),
        io::real(r.complementary),
        io::real(r.stationarity),
        io::real(gap.gap)
    );
    for (i, g) in gap.per_player.iter().enumerate() {
        report.push_str(&format!("nash_gap_player{i}={}\n", io::real(*g)));
    }
    let failed: Vec<&str> = verdict.failed.iter().map(|c| condition_name(*c)).collect();
    report.push_str(&format!("failed={}\npassed={}\n", failed.join(";"), verdict.passed()));
    let path = run.out.join(CERTIFICATE_FILE);
    fs::write(&path, report).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "certify: {} at tol {tol:e} (stationarity {:.3e}, complementary {:.3e}, dual_min {:.3e}, nash_gap {:.3e})",
        if verdict.passed() { "passed" } else { "FAILED" },
        r.stationarity,
        r.complementary,
        r.dual_min,
        gap.gap
    );
    let status = if verdict.passed() { Status::Success } else { Status::CertificationFailed };
    manifest.record_status(&run.out, if verdict.passed() { "passed" } else { "failed" })?;
    Ok(status)
}

fn condition_name(c: KktCondition) -> &'static str {
    match c {
        KktCondition::PrimalFeasibility => "primal",
        KktCondition::DualFeasibility => "dual",
        KktCondition::ComplementarySlackness => "complementary",
        KktCondition::Stationarity => "stationarity",
    }
}

pub fn cmd_simulate(run: &Resolved) -> Result<Status> {
    let text = run.config_text();
    let manifest = RunManifest::new("simulate", &text, run.config.rollout.seed);
    manifest.write(&run.out, &text)?;
    let problem = run.config.build()?;
    let Problem::Warehouse(scenario) = &problem else {
        bail!("simulate: rollouts need a warehouse scenario, not a custom game");
    };
    let x = load_equilibrium(run, &problem)?;
    let trials = run.config.rollout.trials;
    let report = if trials == 0 {
        None
    } else {
        Some(evaluate(&scenario.instance, &scenario.grid, &scenario.players, &x, trials, run.config.rollout.seed)?)
    };
    let alpha: Vec<f64> = scenario.players.iter().map(|p| p.alpha).collect();
    io::write_rollout(&run.out, report.as_ref(), &alpha, scenario.instance.dims().stages())?;
    if let Some(r) = &report {
        for (i, c) in r.mean_collisions.iter().enumerate() {
            println!(
                "simulate: player {i} alpha {} mean collisions {c:.3} mean wait {}",
                alpha[i],
                r.mean_wait[i].map(|w| format!("{w:.2}")).unwrap_or_else(|| "n/a".into())
            );
        }
    } else {
        println!("simulate: zero trials, empty report");
    }
    manifest.record_status(&run.out, "done")?;
    Ok(Status::Success)
}

pub const CONVERGENCE_SVG: &str = "convergence.svg";
pub const COLLISIONS_SVG: &str = "collisions.svg";
pub const WAIT_SVG: &str = "wait_times.svg";

/// Renders whatever plots the run directory supports. The trace is
/// required; missing rollout files only produce warnings.
pub fn cmd_report(dir: &Path) -> Result<Status> {
    let trace_path = dir.join(io::TRACE_FILE);
    if !trace_path.is_file() {
        bail!("report: {} not found", trace_path.display());
    }
    let rows = io::read_trace(&trace_path)?;
    if rows.is_empty() {
        bail!("report: {} has no iterations", trace_path.display());
    }
    let players = rows[0].norms.len();
    let mut series = Vec::new();
    for i in 0..players {
        series.push(plot::Series {
            label: format!("norm player {i}"),
            points: rows.iter().map(|r| (r.k as f64, r.norms[i])).collect(),
            dashed: false,
        });
    }
    for i in 0..players {
        series.push(plot::Series {
            label: format!("movement player {i}"),
            points: rows.iter().map(|r| (r.k as f64, r.movement[i])).collect(),
            dashed: true,
        });
    }
    let svg = plot::line_chart("Iterate norm and movement", "iteration k", "2-norm", &series, true);
    write_svg(dir, CONVERGENCE_SVG, &svg)?;

    let collisions = dir.join(io::COLLISIONS_FILE);
    if collisions.is_file() {
        let data = io::read_collisions(&collisions)?;
        let series: Vec<plot::Series> = data
            .iter()
            .enumerate()
            .map(|(i, s)| plot::Series {
                label: format!("player {i}"),
                points: s.iter().enumerate().map(|(t, v)| (t as f64, *v)).collect(),
                dashed: false,
            })
            .collect();
        write_svg(dir, COLLISIONS_SVG, &plot::line_chart("Mean collisions per step", "t", "collisions", &series, false))?;
    } else {
        eprintln!("warning: {} missing, skipping collision plot", collisions.display());
    }

    let rollout = dir.join(io::ROLLOUT_FILE);
    if rollout.is_file() {
        let rows = io::read_rollout(&rollout)?;
        let cats: Vec<String> = rows.iter().map(|r| r.player.to_string()).collect();
        let mean: Vec<f64> = rows.iter().map(|r| r.mean_wait.unwrap_or(f64::NAN)).collect();
        let worst: Vec<f64> = rows.iter().map(|r| r.worst_wait.map_or(f64::NAN, |v| v as f64)).collect();
        let svg = plot::bar_chart(
            "Package cycle time",
            "steps",
            &cats,
            &[("mean".to_string(), mean), ("worst".to_string(), worst)],
        );
        write_svg(dir, WAIT_SVG, &svg)?;
    } else {
        eprintln!("warning: {} missing, skipping wait-time plot", rollout.display());
    }
    println!("report: plots written to {}", dir.display());
    Ok(Status::Success)
}

fn write_svg(dir: &Path, name: &str, svg: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(&resolve(a)?),
        Command::Certify(a) => cmd_certify(&resolve(a)?),
        Command::Simulate(a) => cmd_simulate(&resolve(a)?),
        Command::Report(a) => cmd_report(&resolve(a)?.out),
    }
}

/// Runs the CLI and maps the outcome to a process exit code.
pub fn exit_code(cli: &Cli) -> u8 {
    match run(cli) {
        Ok(status) => status.code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            INPUT_ERROR
        }
    }
}
