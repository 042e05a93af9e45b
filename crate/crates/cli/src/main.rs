//! `wigner1d` — truncated-Wigner simulation of the attractive 1D Bose gas.
//!
//! Subcommands: `run` (stochastic ensemble), `meanfield` (noise-free field),
//! `converge` (paired step refinement), `oracle` (ordering self-check).
//! Errors carry a machine-readable category; usage and config problems exit
//! with status 2, runtime problems with status 1.

mod config;
mod output;

use std::env;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use wigner1d::ensemble::{convergence_check, run_ensemble, run_meanfield};
use wigner1d::observables::{
    corrected_density_point, corrected_pair_point, single_mode_symmetric_moments,
};

use crate::config::{parse_config, JobConfig};
use crate::output::{
    write_convergence, write_manifest, write_meanfield_series, write_series, RunCounters,
};

const USAGE: &str = "\
wigner1d - truncated-Wigner simulation of the attractive 1D Bose gas

USAGE:
    wigner1d <COMMAND> [OPTIONS]

COMMANDS:
    run        sample Wigner trajectories and write ensemble observables
    meanfield  propagate the noise-free field and write its observables
    converge   rerun the plan at dt, dt/2, dt/4 and report the observed
               convergence order (costs about 7x one run at the configured
               n_traj)
    oracle     print the ordering-correction self-check and exit

OPTIONS:
    --config <FILE>         key = value plan file (see CONFIG KEYS); without
                            it the built-in default plan is used
    --output-dir <DIR>      where CSV files and manifest.json go [default: out]
    --seed <U64>            master seed override
    --workers <N>           worker threads, 0 = all cores [default: 0]
    --deterministic <BOOL>  bitwise-reproducible reduction order
                            [default: true]

CONFIG KEYS (key = value, '#' starts a comment; N is required in files):
    N                        particle number (required)
    C                        interaction strength [default: -8/N]
    C_as_multiple_of_invN    alternative to C: given value times 1/N
    M                        grid points, power of two [default: 256]
    L                        box length [default: 20]
    t_final                  final time [default: 5]
    n_steps                  time steps [default: 10000]
    n_traj                   trajectories [default: 1000]
    n_batches                error-bar batches [default: 10]
    master_seed              RNG seed [default: 1]
    snapshot_stride          steps between snapshots [default: 100]
    g1_stride                snapshots between eigenmode captures [default: 20]
    grid_mode                balanced | periodic [default: balanced]
    deterministic_reduction  true | false [default: true]
    outputs                  comma list of density_map, center_density, mu,
                             eigenvalues, invariants, com [default: all six]
    output_dir               output directory [default: out]

OUTPUT FILES (17-significant-digit CSV, versioned headers):
    density_map.csv      t,z,n,n_err
    center_density.csv   t,n0,n0_err,n0_meanfield
    mu.csv               t,mu,mu_err
    eigenvalues.csv      t,rank,fraction
    invariants.csv       t,Nbar_drift,Pbar_drift,Hbar_drift
    com.csv              t,var_X,var_X_err
    convergence.csv      t,n0_dt,n0_half,n0_quarter   (converge only)
    manifest.json        version, config echo, seed, counters, wall time

ERROR CATEGORIES:
    error[usage]: ...        bad command line             (exit 2)
    error[config]: ...       bad or missing config file   (exit 2)
    error[io]: ...           filesystem failure           (exit 1)
    error[simulation]: ...   numerical failure or blow-up (exit 1)
";

struct CliError {
    category: &'static str,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { category: "usage", message: message.into() }
    }
    fn config(message: impl Into<String>) -> Self {
        CliError { category: "config", message: message.into() }
    }
    fn io(message: impl Into<String>) -> Self {
        CliError { category: "io", message: message.into() }
    }
    fn simulation(message: impl Into<String>) -> Self {
        CliError { category: "simulation", message: message.into() }
    }
    fn exit_code(&self) -> u8 {
        match self.category {
            "usage" | "config" => 2,
            _ => 1,
        }
    }
}

/// Command-line options shared by all subcommands.
#[derive(Default)]
struct Options {
    config: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    deterministic: Option<bool>,
}

fn parse_options(args: &[String]) -> Result<Options, CliError> {
    let mut opts = Options::default();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let (flag, inline_value) = match arg.split_once('=') {
            Some((f, v)) => (f, Some(v.to_string())),
            None => (arg.as_str(), None),
        };
        let mut value = |name: &str| -> Result<String, CliError> {
            match &inline_value {
                Some(v) => Ok(v.clone()),
                None => it
                    .next()
                    .cloned()
                    .ok_or_else(|| CliError::usage(format!("flag {name} needs a value"))),
            }
        };
        match flag {
            "--config" => opts.config = Some(PathBuf::from(value("--config")?)),
            "--output-dir" => opts.output_dir = Some(PathBuf::from(value("--output-dir")?)),
            "--seed" => {
                let v = value("--seed")?;
                opts.seed = Some(v.parse().map_err(|_| {
                    CliError::usage(format!("--seed expects an unsigned integer, got `{v}`"))
                })?);
            }
            "--workers" => {
                let v = value("--workers")?;
                opts.workers = Some(v.parse().map_err(|_| {
                    CliError::usage(format!("--workers expects an unsigned integer, got `{v}`"))
                })?);
            }
            "--deterministic" => {
                let v = value("--deterministic")?;
                opts.deterministic = Some(match v.as_str() {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(CliError::usage(format!(
                            "--deterministic expects true or false, got `{v}`"
                        )))
                    }
                });
            }
            other => return Err(CliError::usage(format!("unknown flag `{other}`"))),
        }
    }
    Ok(opts)
}

/// Build the job: config file if given (N required there), defaults otherwise;
/// command-line flags override the file.
fn load_job(opts: &Options) -> Result<JobConfig, CliError> {
    let mut job = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read config file {}: {e}", path.display()))
            })?;
            parse_config(&text).map_err(|e| CliError::config(e.to_string()))?
        }
        None => JobConfig::default(),
    };
    if let Some(dir) = &opts.output_dir {
        job.output_dir = dir.clone();
    }
    if let Some(seed) = opts.seed {
        job.plan.master_seed = seed;
    }
    if let Some(det) = opts.deterministic {
        job.plan.deterministic_reduction = det;
    }
    Ok(job)
}

fn cmd_run(opts: &Options) -> Result<(), CliError> {
    let job = load_job(opts)?;
    let workers = opts.workers.unwrap_or(0);
    let start = Instant::now();
    let series = run_ensemble(&job.plan, workers, true)
        .map_err(|e| CliError::simulation(e.to_string()))?;
    let files = write_series(&series, &job.output_dir, &job.outputs)
        .map_err(|e| CliError::io(e.to_string()))?;
    let counters = RunCounters {
        attempted: series.attempted,
        completed: series.completed,
        aborted: series.aborted,
        nl_phase_hits: series.nl_phase_hits,
        negative_mode_flags: series.negative_mode_flags,
    };
    let wall = start.elapsed().as_secs_f64();
    write_manifest(&job.output_dir, "run", &job, workers, counters, &files, wall)
        .map_err(|e| CliError::io(e.to_string()))?;
    println!(
        "run complete: {} of {} trajectories in {:.1} s -> {}",
        series.completed,
        series.attempted,
        wall,
        job.output_dir.display()
    );
    if series.aborted > 0 {
        println!("  aborted trajectories: {}", series.aborted);
    }
    if series.nl_phase_hits > 0 {
        println!(
            "  warning: nonlinear phase per step exceeded 0.1 rad {} times; consider a smaller dt",
            series.nl_phase_hits
        );
    }
    if series.negative_mode_flags > 0 {
        println!(
            "  warning: {} eigenmode occupations below -3 sigma; statistics may be underresolved",
            series.negative_mode_flags
        );
    }
    Ok(())
}

fn cmd_meanfield(opts: &Options) -> Result<(), CliError> {
    let job = load_job(opts)?;
    let start = Instant::now();
    let series = run_meanfield(&job.plan).map_err(|e| CliError::simulation(e.to_string()))?;
    let files = write_meanfield_series(&series, &job.output_dir, &job.outputs)
        .map_err(|e| CliError::io(e.to_string()))?;
    let counters = RunCounters {
        attempted: 1,
        completed: 1,
        ..RunCounters::default()
    };
    let wall = start.elapsed().as_secs_f64();
    write_manifest(&job.output_dir, "meanfield", &job, 1, counters, &files, wall)
        .map_err(|e| CliError::io(e.to_string()))?;
    println!(
        "meanfield run complete in {:.1} s -> {}",
        wall,
        job.output_dir.display()
    );
    println!(
        "  worst invariant drifts: number {:.3e}, momentum {:.3e}, energy {:.3e}",
        series.drift_max[0], series.drift_max[1], series.drift_max[2]
    );
    Ok(())
}

fn cmd_converge(opts: &Options) -> Result<(), CliError> {
    let job = load_job(opts)?;
    let workers = opts.workers.unwrap_or(0);
    let start = Instant::now();
    let report = convergence_check(&job.plan, workers, true)
        .map_err(|e| CliError::simulation(e.to_string()))?;
    let path = write_convergence(&report, &job.output_dir)
        .map_err(|e| CliError::io(e.to_string()))?;
    let wall = start.elapsed().as_secs_f64();
    write_manifest(
        &job.output_dir,
        "converge",
        &job,
        workers,
        RunCounters::default(),
        &[path],
        wall,
    )
    .map_err(|e| CliError::io(e.to_string()))?;
    println!("step-refinement check (dt, dt/2, dt/4) in {wall:.1} s:");
    println!(
        "  center-density discrepancy, dt vs dt/2:   {:.3e}",
        report.coarse_discrepancy
    );
    println!(
        "  center-density discrepancy, dt/2 vs dt/4: {:.3e}",
        report.mid_discrepancy
    );
    println!("  observed convergence order: {:.2}", report.observed_order);
    Ok(())
}

/// Self-check of the symmetric-ordering corrections on one mode: the phase-
/// space moments of a coherent state with two particles on a unit cell must
/// give back density 2 and pair correlation 4 after correction.
fn cmd_oracle() -> Result<(), CliError> {
    let expected_m2 = 2.5;
    let expected_m4 = 8.5;
    let density = corrected_density_point(expected_m2, 1.0);
    let pair = corrected_pair_point(expected_m4, expected_m2, 1.0);
    println!("single-mode ordering self-check at |alpha|^2 = 2, dz = 1");
    println!("  symmetric moments: <|psi|^2> = {expected_m2}, <|psi|^4> = {expected_m4}");
    println!("  corrected density = {density} (want 2)");
    println!("  corrected pair correlation = {pair} (want 4)");
    let (m2, m4) = single_mode_symmetric_moments(2.0);
    println!("  quadrature reproduces the moments: <|psi|^2> = {m2:.12}, <|psi|^4> = {m4:.12}");
    let ok = density == 2.0
        && pair == 4.0
        && (m2 - expected_m2).abs() < 1e-9
        && (m4 - expected_m4).abs() < 1e-9;
    if ok {
        println!("  oracle: PASS");
        Ok(())
    } else {
        Err(CliError::simulation("ordering self-check failed".to_string()))
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let Some(command) = args.first() else {
        return Err(CliError::usage("missing command"));
    };
    let opts = parse_options(&args[1..])?;
    match command.as_str() {
        "run" => cmd_run(&opts),
        "meanfield" => cmd_meanfield(&opts),
        "converge" => cmd_converge(&opts),
        "oracle" => cmd_oracle(),
        other => Err(CliError::usage(format!("unknown command `{other}`"))),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category, e.message);
            if e.category == "usage" {
                eprintln!();
                eprintln!("{USAGE}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
