//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 input or validation error,
//! 3 solver non-convergence (or flagged derivatives).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::aladin::{aladin_solve, partition_problem};
use crate::empc::{assemble_empc_with, EmpcProblem};
use crate::error::{Error, Result};
use crate::io::{
    day_profile, generate_lebanon_synthetic, read_case_file, read_profile, save_case, write_consensus_table,
    write_deviation_table, write_manifest, write_profile, write_run, CaseFile, Manifest, CONSENSUS_TABLE,
    DEVIATION_TABLE, MANIFEST_FILE,
};
use crate::nlp::{check_derivatives_with, IpmOptions, IpmSolver, NlpInstance, StartPoint, FLAG_THRESHOLD};
use crate::sim::{compute_metrics, deviation_pct, run_mpc, DayProfile, SimMode, SimOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

pub const DEFAULT_CASE_FILE: &str = "case.toml";
pub const DEFAULT_PROFILE_FILE: &str = "profiles.csv";

#[derive(Debug, Parser)]
#[command(name = "dempc", version, about = "Distributed economic MPC of the AC optimal power flow")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Case file; the built-in synthetic feeder when omitted.
    #[arg(long, global = true)]
    pub case: Option<PathBuf>,
    /// Profile table; the built-in synthetic day when omitted.
    #[arg(long, global = true)]
    pub profiles: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// ALADIN termination tolerance, or the relative error threshold of
    /// `check-derivatives`.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed for forecast noise and random derivative probes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for the area solves.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Centralized,
    Distributed,
    Both,
}

impl From<ModeArg> for SimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Centralized => SimMode::Centralized,
            ModeArg::Distributed => SimMode::Distributed,
            ModeArg::Both => SimMode::Both,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic 13-bus case and its day profile.
    GenerateCase,
    /// Solve one horizon problem at interval `t`.
    Solve {
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        t: usize,
    },
    /// Run the receding-horizon simulation over the profile.
    RunDay {
        #[arg(long, value_enum, default_value = "both")]
        mode: ModeArg,
        /// Simulate only the first intervals.
        #[arg(long)]
        intervals: Option<usize>,
        /// Relative standard deviation of forecast error.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Compare analytic derivatives with central differences.
    CheckDerivatives {
        /// Random points per problem.
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        t: usize,
    },
    /// Run both solvers over the profile and write deviation and consensus tables.
    Compare {
        #[arg(long)]
        intervals: Option<usize>,
    },
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::LocalSolve { .. } => EXIT_SOLVER,
        _ => EXIT_INPUT,
    }
}

/// Case file and profile records, from disk or generated.
struct Inputs {
    case_path: PathBuf,
    profile_path: PathBuf,
    file: CaseFile,
    day: DayProfile,
}

fn load_inputs(g: &GlobalArgs) -> Result<Inputs> {
    let (synthetic, records) = generate_lebanon_synthetic();
    let file = match &g.case {
        Some(p) => read_case_file(p)?,
        None => synthetic,
    };
    let records = match &g.profiles {
        Some(p) => read_profile(p)?,
        None => records,
    };
    let mut file = file.with_explicit_defaults();
    if let Some(tol) = g.tol {
        file.aladin.tol = tol;
    }
    if g.threads.is_some() {
        file.aladin.threads = g.threads;
    }
    let case = file.resolve()?;
    let day = day_profile(&records, &case.fleet, file.base_kw())?;
    let builtin = PathBuf::from("<synthetic>");
    Ok(Inputs {
        case_path: g.case.clone().unwrap_or_else(|| builtin.clone()),
        profile_path: g.profiles.clone().unwrap_or(builtin),
        file,
        day,
    })
}

fn execute(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::GenerateCase => generate(&g.out),
        Command::Solve { mode, t } => solve_once(g, (*mode).into(), *t),
        Command::RunDay { mode, intervals, noise } => {
            let opts = SimOptions {
                mode: (*mode).into(),
                seed: g.seed,
                forecast_noise: *noise,
                max_intervals: *intervals,
                ..SimOptions::default()
            };
            run_day(g, "run-day", &opts)
        }
        Command::CheckDerivatives { points, t } => derivatives(g, *points, *t),
        Command::Compare { intervals } => {
            let opts = SimOptions { mode: SimMode::Both, seed: g.seed, max_intervals: *intervals, ..SimOptions::default() };
            compare(g, &opts)
        }
    }
}

fn generate(out: &Path) -> Result<i32> {
    fs::create_dir_all(out)?;
    let (file, records) = generate_lebanon_synthetic();
    let case_path = out.join(DEFAULT_CASE_FILE);
    let profile_path = out.join(DEFAULT_PROFILE_FILE);
    save_case(&case_path, &file)?;
    write_profile(&profile_path, &records)?;
    println!("wrote {} and {}", case_path.display(), profile_path.display());
    Ok(EXIT_OK)
}

fn horizon_problem(inputs: &Inputs, t: usize) -> Result<(crate::io::Case, EmpcProblem)> {
    let case = inputs.file.resolve()?;
    if t >= inputs.day.n_intervals() {
        return Err(Error::Input(format!("--t {t} is past the last interval {}", inputs.day.n_intervals() - 1)));
    }
    let forecasts = inputs.day.forecasts(t, case.horizon.steps);
    let problem = assemble_empc_with(&case.network, &case.fleet, &forecasts, case.horizon, &case.x0, None, case.empc)?;
    Ok((case, problem))
}

#[derive(Debug, Serialize)]
struct SolveReport {
    interval: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    central_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    central_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    distributed_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    distributed_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    consensus_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deviation_pct: Option<f64>,
}

fn solve_once(g: &GlobalArgs, mode: SimMode, t: usize) -> Result<i32> {
    let inputs = load_inputs(g)?;
    let (case, problem) = horizon_problem(&inputs, t)?;
    let mut report = SolveReport {
        interval: t,
        central_objective: None,
        central_iterations: None,
        distributed_objective: None,
        distributed_iterations: None,
        consensus_residual: None,
        deviation_pct: None,
    };
    let mut converged = true;
    if mode.runs_central() {
        let clock = Instant::now();
        let sol = IpmSolver::new(IpmOptions::default()).solve(&problem, &StartPoint::primal(problem.flat_start()));
        info!("centralized solve took {:.3} s", clock.elapsed().as_secs_f64());
        converged &= sol.is_converged();
        println!("centralized: objective {} $/h, {} iterations, {}", sol.objective, sol.iterations, sol.message);
        report.central_objective = Some(sol.objective);
        report.central_iterations = Some(sol.iterations);
    }
    if mode.runs_distributed() {
        let clock = Instant::now();
        let sol = aladin_solve(&problem, &case.partition, &case.aladin)?;
        info!("distributed solve took {:.3} s", clock.elapsed().as_secs_f64());
        converged &= sol.converged;
        println!(
            "distributed: objective {} $/h, {} iterations, consensus residual {:e}",
            sol.objective, sol.iterations, sol.consensus_residual
        );
        report.distributed_objective = Some(sol.objective);
        report.distributed_iterations = Some(sol.iterations);
        report.consensus_residual = Some(sol.consensus_residual);
    }
    if let (Some(c), Some(d)) = (report.central_objective, report.distributed_objective) {
        let dev = deviation_pct(c, d);
        println!("deviation: {dev:.6} %");
        report.deviation_pct = Some(dev);
    }
    fs::create_dir_all(&g.out)?;
    let text = toml::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))?;
    fs::write(g.out.join("solve.toml"), text)?;
    let sim = SimOptions { mode, seed: g.seed, max_intervals: Some(1), ..SimOptions::default() };
    write_manifest(
        &g.out.join(MANIFEST_FILE),
        &Manifest::new("solve", &inputs.case_path, &inputs.profile_path, &inputs.file, &sim),
    )?;
    Ok(if converged { EXIT_OK } else { EXIT_SOLVER })
}

fn run_day(g: &GlobalArgs, command: &str, opts: &SimOptions) -> Result<i32> {
    let inputs = load_inputs(g)?;
    let case = inputs.file.resolve()?;
    let clock = Instant::now();
    let result = run_mpc(&case, &inputs.day, opts)?;
    info!("simulation took {:.1} s", clock.elapsed().as_secs_f64());
    let manifest = Manifest::new(command, &inputs.case_path, &inputs.profile_path, &inputs.file, opts);
    let (m, written) = write_run(&g.out, &result, &manifest)?;
    println!("intervals: {}", result.intervals.len());
    if opts.mode == SimMode::Both {
        println!("max cost deviation: {:.6} %", m.max_deviation_pct);
        println!("max generation mismatch: {:.6} % of peak", m.max_generation_mismatch_pct);
    }
    if opts.mode.runs_distributed() {
        println!("max consensus residual: {:e}", m.max_boundary_mismatch);
    }
    println!("losses: {:.3} % of served energy", 100.0 * m.loss_fraction);
    println!("held intervals: {}", m.held_intervals);
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(if m.held_intervals == 0 { EXIT_OK } else { EXIT_SOLVER })
}

fn compare(g: &GlobalArgs, opts: &SimOptions) -> Result<i32> {
    let inputs = load_inputs(g)?;
    let case = inputs.file.resolve()?;
    let result = run_mpc(&case, &inputs.day, opts)?;
    let m = compute_metrics(&result);
    fs::create_dir_all(&g.out)?;
    write_deviation_table(&g.out.join(DEVIATION_TABLE), &result, &m)?;
    write_consensus_table(&g.out.join(CONSENSUS_TABLE), &result)?;
    write_manifest(
        &g.out.join(MANIFEST_FILE),
        &Manifest::new("compare", &inputs.case_path, &inputs.profile_path, &inputs.file, opts),
    )?;
    println!("max cost deviation: {:.6} %", m.max_deviation_pct);
    println!("max consensus residual: {:e}", m.max_boundary_mismatch);
    let all_converged = result
        .intervals
        .iter()
        .all(|r| r.central.as_ref().is_some_and(|c| c.converged) && r.distributed.as_ref().is_some_and(|d| d.converged));
    Ok(if all_converged { EXIT_OK } else { EXIT_SOLVER })
}

/// Random point inside the variable bounds, with unbounded entries drawn
/// around the flat start.
fn random_point(inst: &dyn NlpInstance, center: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let lo = inst.lower_bounds();
    let hi = inst.upper_bounds();
    DVector::from_fn(center.len(), |j, _| {
        let u: f64 = rng.random();
        if lo[j].is_finite() && hi[j].is_finite() && hi[j] - lo[j] < 1e3 {
            lo[j] + u * (hi[j] - lo[j])
        } else {
            center[j] + 0.2 * (u - 0.5)
        }
    })
}

fn derivatives(g: &GlobalArgs, points: usize, t: usize) -> Result<i32> {
    let inputs = load_inputs(g)?;
    let (case, problem) = horizon_problem(&inputs, t)?;
    let threshold = g.tol.unwrap_or(FLAG_THRESHOLD);
    let subs = partition_problem(&problem, &case.partition)?;
    let mut instances: Vec<(String, &dyn NlpInstance, DVector<f64>)> =
        vec![("horizon problem".into(), &problem, problem.flat_start())];
    for s in &subs {
        instances.push((format!("area {}", s.area), &s.region, s.restrict(&problem.flat_start())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let mut flagged = 0;
    for (name, inst, center) in &instances {
        let mut worst: f64 = 0.0;
        let mut entries = 0;
        let mut count = 0;
        for _ in 0..points {
            let x = random_point(*inst, center, &mut rng);
            let r = check_derivatives_with(*inst, &x, 1e-6, threshold);
            worst = worst.max(r.max_error());
            entries += r.entries_checked;
            count += r.flags.len();
        }
        println!("{name}: {points} points, {entries} entries, max relative error {worst:.3e}, {count} flagged");
        flagged += count;
    }
    Ok(if flagged == 0 { EXIT_OK } else { EXIT_SOLVER })
}
