//! Command-line front end: calibrations, coverage experiments, and single
//! schedule runs driven by a TOML configuration, with JSON reports and CSV
//! tables as outputs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration,
//! 3 calibration hit the iteration cap without converging.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{Algorithm, ModelInstance, RunConfig};
use crate::core::RandomStream;
use crate::gpc::{gpc_mcmc, gpc_smc, CalibrationReport, Progress, TrajectoryPoint};
use crate::mcmc::run_chain;
use crate::model::{Dataset, PseudoPosteriorModel};
use crate::smc::{asmc_star, evenly_thinned, system_from_posterior_draws, LadderStep};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

/// Calibrates the learning rate of generalized posteriors by matching
/// bootstrap coverage to the nominal credible level.
#[derive(Debug, Parser)]
#[command(name = "gpcal", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one calibration; write a JSON report and a trajectory CSV.
    Calibrate(CommonArgs),
    /// Calibrate fresh synthetic datasets repeatedly and tabulate coverage
    /// of the generator's parameter vector.
    Coverage {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of synthetic replicates.
        #[arg(long)]
        replicates: usize,
    },
    /// Advance one particle system between two learning rates and write
    /// schedule diagnostics.
    SmcRun {
        #[command(flatten)]
        common: CommonArgs,
        /// Starting learning rate.
        #[arg(long)]
        from: f64,
        /// Final learning rate.
        #[arg(long)]
        to: f64,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the worker thread count (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override the output stem files are written under.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// An error paired with the exit code it maps to.
struct Failure {
    error: Error,
    exit: i32,
}

fn config_failure(error: Error) -> Failure {
    Failure { error, exit: EXIT_CONFIG }
}

fn runtime_failure(error: Error) -> Failure {
    Failure { error, exit: EXIT_RUNTIME }
}

/// Runs a parsed command line to completion and returns the exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.error);
            failure.exit
        }
    }
}

fn dispatch(cli: Cli) -> std::result::Result<i32, Failure> {
    match cli.command {
        Command::Calibrate(common) => {
            let (config, out) = prepare(&common)?;
            cmd_calibrate(&config, &out)
        }
        Command::Coverage { common, replicates } => {
            let (config, out) = prepare(&common)?;
            cmd_coverage(&config, &out, replicates)
        }
        Command::SmcRun { common, from, to } => {
            let (config, out) = prepare(&common)?;
            cmd_smc_run(&config, &out, from, to)
        }
    }
}

/// Loads the config, applies command-line overrides, resolves the output
/// stem, and installs the worker pool.
fn prepare(common: &CommonArgs) -> std::result::Result<(RunConfig, PathBuf), Failure> {
    let mut config = RunConfig::load(&common.config).map_err(config_failure)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(threads) = common.threads {
        config.threads = threads;
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| {
            PathBuf::from(common.config.file_stem().unwrap_or_else(|| "gpcal".as_ref()))
        });
    config.output = Some(out.display().to_string());
    if config.threads > 0 {
        // A pool may already exist when several runs share a process; the
        // first configuration then stays in effect.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global();
    }
    Ok((config, out))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

#[derive(Serialize)]
struct TimingDocument {
    wall_time_seconds: f64,
}

fn write_timing(out: &Path, wall_time: f64) -> Result<()> {
    write_text(&sibling(out, ".timing.json"), &to_pretty_json(&TimingDocument {
        wall_time_seconds: wall_time,
    })?)
}

#[derive(Serialize)]
struct CalibrateDocument<'a> {
    eta_hat: f64,
    converged: bool,
    iterations: usize,
    resamples: usize,
    bisection_fallbacks: usize,
    trajectory: &'a [TrajectoryPoint],
    seed: u64,
    config: &'a RunConfig,
}

fn trajectory_csv(trajectory: &[TrajectoryPoint]) -> String {
    let mut text = String::from("s,eta,coverage,ladder_steps\n");
    for p in trajectory {
        text.push_str(&format!("{},{},{},{}\n", p.s, p.eta, p.coverage, p.ladder_steps));
    }
    text
}

/// Builds the dataset and model for one seed stream; failures here are
/// configuration problems rather than algorithm failures.
fn build_problem(config: &RunConfig, root: &RandomStream) -> Result<(Dataset, ModelInstance)> {
    let mut data_rng = root.derive(0);
    let data = config.build_dataset(&mut data_rng)?;
    let model = config.build_model(&data)?;
    Ok((data, model))
}

fn run_calibration(
    config: &RunConfig,
    data: &Dataset,
    model: &dyn PseudoPosteriorModel,
    root: &RandomStream,
    progress: Progress,
) -> Result<CalibrationReport> {
    let mut calib_rng = root.derive(1);
    match config.algorithm {
        Algorithm::GpcMcmc => {
            gpc_mcmc(model, data, &config.gpc, &config.mcmc, progress, &mut calib_rng)
        }
        Algorithm::GpcSmc => {
            gpc_smc(model, data, &config.gpc, &config.smc, &config.mcmc, progress, &mut calib_rng)
        }
    }
}

fn log_iteration(p: &TrajectoryPoint) {
    eprintln!(
        "s={} eta={:.6} coverage={:.4} ladder_steps={}",
        p.s, p.eta, p.coverage, p.ladder_steps
    );
}

fn cmd_calibrate(config: &RunConfig, out: &Path) -> std::result::Result<i32, Failure> {
    let root = RandomStream::new(config.seed);
    let (data, model) = build_problem(config, &root).map_err(config_failure)?;
    let report =
        run_calibration(config, &data, model.as_dyn(), &root, Some(&mut log_iteration))
            .map_err(runtime_failure)?;
    let document = CalibrateDocument {
        eta_hat: report.eta_hat,
        converged: report.converged,
        iterations: report.iterations,
        resamples: report.resamples,
        bisection_fallbacks: report.bisection_fallbacks,
        trajectory: &report.trajectory,
        seed: config.seed,
        config,
    };
    let write = || -> Result<()> {
        write_text(&sibling(out, ".report.json"), &to_pretty_json(&document)?)?;
        write_text(&sibling(out, ".trajectory.csv"), &trajectory_csv(&report.trajectory))?;
        write_timing(out, report.wall_time)
    };
    write().map_err(runtime_failure)?;
    println!(
        "eta_hat={} converged={} iterations={}",
        report.eta_hat, report.converged, report.iterations
    );
    Ok(if report.converged { EXIT_OK } else { EXIT_NO_CONVERGENCE })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn cmd_coverage(
    config: &RunConfig,
    out: &Path,
    replicates: usize,
) -> std::result::Result<i32, Failure> {
    if replicates == 0 {
        return Err(config_failure(Error::Config(
            "coverage needs at least one replicate".into(),
        )));
    }
    let truth = config.synthetic_truth().ok_or_else(|| {
        config_failure(Error::Config(
            "coverage experiments need a synthetic data source with a known parameter vector"
                .into(),
        ))
    })?;
    let started = std::time::Instant::now();
    let root = RandomStream::new(config.seed);
    let mut csv = String::from("seed,eta_hat,covered\n");
    let mut eta_hats = Vec::with_capacity(replicates);
    let mut covered_count = 0usize;
    for r in 0..replicates {
        let replicate = root.derive(r as u64);
        let (data, model) = build_problem(config, &replicate).map_err(config_failure)?;
        let report = run_calibration(config, &data, model.as_dyn(), &replicate, None)
            .map_err(runtime_failure)?;
        let region = report.full_region.as_ref().ok_or_else(|| {
            runtime_failure(Error::Numerical("calibration produced no credible region".into()))
        })?;
        let covered = region.contains(&truth);
        covered_count += covered as usize;
        eta_hats.push(report.eta_hat);
        csv.push_str(&format!(
            "{},{},{}\n",
            replicate.stream_id(),
            report.eta_hat,
            covered as u8
        ));
        eprintln!(
            "replicate {r}: eta_hat={:.4} converged={} covered={covered}",
            report.eta_hat, report.converged
        );
    }
    let coverage_pct = 100.0 * covered_count as f64 / replicates as f64;
    let median_eta = median(&mut eta_hats);
    csv.push_str(&format!("summary,{median_eta},{coverage_pct}\n"));
    let write = || -> Result<()> {
        write_text(&sibling(out, ".coverage.csv"), &csv)?;
        write_timing(out, started.elapsed().as_secs_f64())
    };
    write().map_err(runtime_failure)?;
    println!("coverage={coverage_pct}% median_eta_hat={median_eta} replicates={replicates}");
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SmcRunDocument<'a> {
    eta_from: f64,
    eta_to: f64,
    ess: f64,
    log_normalizer_ratio: f64,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    resamples: usize,
    bisection_fallbacks: usize,
    ladder: Vec<LadderStep>,
    seed: u64,
    config: &'a RunConfig,
}

fn cmd_smc_run(
    config: &RunConfig,
    out: &Path,
    from: f64,
    to: f64,
) -> std::result::Result<i32, Failure> {
    if !(from > 0.0 && to > 0.0) {
        return Err(config_failure(Error::Config(format!(
            "learning rates must be positive, got {from} and {to}"
        ))));
    }
    let started = std::time::Instant::now();
    let root = RandomStream::new(config.seed);
    let (data, model) = build_problem(config, &root).map_err(config_failure)?;
    let run = || -> Result<SmcRunDocument<'_>> {
        let draws = config.mcmc.draws.max(config.smc.particles);
        let warmup = config.mcmc.warmup_steps(draws);
        let mut chain_rng = root.derive(1);
        let chain = run_chain(
            model.as_dyn(),
            &data,
            from,
            draws,
            warmup,
            &DVector::zeros(model.as_dyn().dim()),
            &mut chain_rng,
        )?;
        let thinned = evenly_thinned(&chain.draws, config.smc.particles);
        let mut system = system_from_posterior_draws(&thinned, model.as_dyn(), &data, from)?;
        let mut advance_rng = root.derive(2);
        let diag = asmc_star(&mut system, to, model.as_dyn(), &data, &config.smc, &mut advance_rng)?;
        let (mean, covariance) = system.weighted_moments()?;
        Ok(SmcRunDocument {
            eta_from: from,
            eta_to: to,
            ess: system.ess()?,
            log_normalizer_ratio: system.log_ratio(),
            mean: mean.iter().copied().collect(),
            covariance: (0..covariance.nrows())
                .map(|i| (0..covariance.ncols()).map(|j| covariance[(i, j)]).collect())
                .collect(),
            resamples: diag.resamples,
            bisection_fallbacks: diag.bisection_fallbacks,
            ladder: diag.ladder,
            seed: config.seed,
            config,
        })
    };
    let document = run().map_err(runtime_failure)?;
    for (i, step) in document.ladder.iter().enumerate() {
        eprintln!(
            "step {} eta={:.6} ess={:.1} resampled={} accept_rate={:.3}",
            i + 1,
            step.eta,
            step.ess,
            step.resampled,
            step.accept_rate
        );
    }
    let write = || -> Result<()> {
        write_text(&sibling(out, ".smcrun.json"), &to_pretty_json(&document)?)?;
        write_timing(out, started.elapsed().as_secs_f64())
    };
    write().map_err(runtime_failure)?;
    println!(
        "eta={} ladder_steps={} ess={} log_normalizer_ratio={}",
        document.eta_to,
        document.ladder.len(),
        document.ess,
        document.log_normalizer_ratio
    );
    Ok(EXIT_OK)
}
