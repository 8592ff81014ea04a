//! Command-line front end for the `ptd` binary.
//!
//! Exit codes: 0 success, 1 numeric or I/O failure, 2 configuration error,
//! 3 coverage violation. Human-readable detail goes to stderr.

pub mod config;
pub mod report;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis;
use crate::error::{Error, Result};
use crate::experiments::{self, Benchmark, RunLog};
use crate::learners::Algorithm;

pub use config::{describe, ExperimentConfig};
use report::{fmt_matrix, fmt_num, fmt_vec, SweepRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COVERAGE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ptd", about = "Perturbed off-policy TD(0) experiments and stability analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a learner and write trajectory.csv and summary.txt
    Run(CommonArgs),
    /// Print the expected update system and stability diagnostics
    Analyze(CommonArgs),
    /// Sweep η: stability verdict, fixed-point RMSE and learned RMSE
    Sweep(SweepArgs),
    /// Print a benchmark as an inline config
    Describe(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Built-in benchmark: theta2theta, baird or chain3
    #[arg(long)]
    pub env: Option<String>,
    /// Config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Learner: td0, perturbed, etd or tdc
    #[arg(long)]
    pub algo: Option<String>,
    /// Perturbation η; a comma-separated list for analyze and sweep
    #[arg(long, allow_hyphen_values = true)]
    pub eta: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// TDC secondary step size (defaults to alpha)
    #[arg(long)]
    pub beta: Option<f64>,
    /// constant or polynomial
    #[arg(long)]
    pub schedule: Option<String>,
    /// Exponent of the polynomial schedule
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record RMSE every this many iterations
    #[arg(long)]
    pub stride: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// η grid as start:stop:step (inclusive)
    #[arg(long)]
    pub eta_range: Option<String>,
}

fn flag_error(flag: &str, message: impl Into<String>) -> Error {
    Error::config(format!("flag --{flag}"), message)
}

fn parse_eta_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| flag_error("eta", format!("cannot parse '{}'", t.trim())))
        })
        .collect()
}

fn parse_eta_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [start, stop, step] = parts.as_slice() else {
        return Err(flag_error("eta-range", "expected start:stop:step"));
    };
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| flag_error("eta-range", format!("cannot parse '{s}'")))
    };
    let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
    if !(step > 0.0) || stop < start {
        return Err(flag_error("eta-range", "need step > 0 and stop >= start"));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| start + i as f64 * step).collect())
}

impl CommonArgs {
    /// Config file (if any) overlaid with flags. `--eta` is left out since
    /// its meaning depends on the command.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    Error::config("flag --config", format!("{}: {e}", path.display()))
                })?;
                ExperimentConfig::parse(&text)?
            }
            None => ExperimentConfig::default(),
        };
        let flags = ExperimentConfig {
            source: self
                .env
                .as_deref()
                .map(|e| config::parse_env("flag --env", e))
                .transpose()?,
            algorithm: self
                .algo
                .as_deref()
                .map(|a| config::parse_algorithm("flag --algo", a))
                .transpose()?,
            eta: None,
            alpha: self.alpha,
            schedule: self
                .schedule
                .as_deref()
                .map(|s| config::parse_schedule("flag --schedule", s))
                .transpose()?,
            decay: self.decay,
            beta: self.beta,
            iterations: self.iters,
            runs: self.runs,
            seed: self.seed,
            stride: self.stride,
            out: self.out.clone(),
        };
        Ok(base.overlay(flags))
    }

    /// η values from `--eta`, else the config's `eta`, else `default`.
    fn eta_values(&self, cfg: &ExperimentConfig, default: &[f64]) -> Result<Vec<f64>> {
        match &self.eta {
            Some(text) => parse_eta_list(text),
            None => Ok(cfg.eta.map_or_else(|| default.to_vec(), |e| vec![e])),
        }
    }
}

/// Maps an error to its process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Coverage { .. } => EXIT_COVERAGE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name), executes, and returns the
/// exit code. Normal output goes to `stdout`, diagnostics to `stderr`.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let rendered = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    match execute(&cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Run(args) => cmd_run(args, stdout).map(|_| ()),
        Command::Analyze(args) => cmd_analyze(args, stdout),
        Command::Sweep(args) => cmd_sweep(args, stdout).map(|_| ()),
        Command::Describe(args) => {
            let cfg = args.experiment_config()?;
            stdout.write_all(describe(&cfg.benchmark()?).as_bytes())?;
            Ok(())
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

/// `run`: executes the configured learner and writes `trajectory.csv` and
/// `summary.txt` into the output directory.
pub fn cmd_run(args: &CommonArgs, stdout: &mut dyn Write) -> Result<RunLog> {
    let mut cfg = args.experiment_config()?;
    if let Some(text) = &args.eta {
        cfg.eta = Some(
            text.trim()
                .parse()
                .map_err(|_| flag_error("eta", format!("cannot parse '{text}'")))?,
        );
    }
    let bench = cfg.benchmark()?;
    let run_cfg = cfg.run_config()?;
    let log = experiments::run_experiment(&bench, &run_cfg)?;
    let dir = cfg.out_dir();
    write_file(&dir, "trajectory.csv", &report::trajectory_csv(&log))?;
    let summary = report::summary_text(&log);
    write_file(&dir, "summary.txt", &summary)?;
    stdout.write_all(summary.as_bytes())?;
    Ok(log)
}

/// Analysis report text for the given η values. Per-η failures are
/// reported inline.
pub fn analyze_report(bench: &Benchmark, etas: &[f64]) -> String {
    let mut out = String::new();
    let (mdp, target, behavior, features) =
        (&bench.mdp, &bench.target, &bench.behavior, &bench.features);
    let _ = writeln!(out, "benchmark: {}", bench.name);
    match analysis::eta_lower_bound(mdp, target, behavior) {
        Ok(b) => {
            let _ = writeln!(out, "eta_lower_bound: {}", fmt_num(b));
        }
        Err(e) => {
            let _ = writeln!(out, "eta_lower_bound: error: {e}");
        }
    }
    match analysis::best_rmse(mdp, target, behavior, features) {
        Ok(r) => {
            let _ = writeln!(out, "best_rmse: {}", fmt_num(r));
        }
        Err(e) => {
            let _ = writeln!(out, "best_rmse: unavailable: {e}");
        }
    }
    for &eta in etas {
        let _ = writeln!(out, "\n[eta = {}]", fmt_num(eta));
        let system = match analysis::expected_system(mdp, target, behavior, features, eta) {
            Ok(s) => s,
            Err(e) => {
                let _ = writeln!(out, "error: {e}");
                continue;
            }
        };
        let verdict = analysis::is_positive_definite(&system);
        let _ = writeln!(out, "A: {}", fmt_matrix(&system.a_matrix));
        let _ = writeln!(out, "b: {}", fmt_vec(&system.b_vector));
        let _ = writeln!(out, "min_sym_eigenvalue: {}", fmt_num(verdict.min_sym_eigenvalue));
        let _ = writeln!(out, "positive_definite: {}", verdict.label());
        match analysis::fixed_point(&system) {
            Ok(theta) => {
                let _ = writeln!(out, "theta_star: {}", fmt_vec(theta.as_slice()));
                match analysis::rmse_at(mdp, target, behavior, features, &theta) {
                    Ok(r) => {
                        let _ = writeln!(out, "fixed_point_rmse: {}", fmt_num(r));
                    }
                    Err(e) => {
                        let _ = writeln!(out, "fixed_point_rmse: error: {e}");
                    }
                }
            }
            Err(e) => {
                let _ = writeln!(out, "theta_star: unavailable: {e}");
            }
        }
    }
    out
}

pub fn cmd_analyze(args: &CommonArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = args.experiment_config()?;
    let bench = cfg.benchmark()?;
    let etas = args.eta_values(&cfg, &[0.0])?;
    if let Some(bad) = etas.iter().find(|e| !(**e >= 0.0)) {
        return Err(flag_error("eta", format!("eta must be nonnegative, got {bad}")));
    }
    // reducible or periodic behavior chains have no d_mu
    bench.behavior_weights()?;
    stdout.write_all(analyze_report(&bench, &etas).as_bytes())?;
    Ok(())
}

/// Stability verdict, fixed-point RMSE and learned final RMSE for each η.
/// The learner is always perturbed TD(0).
pub fn sweep_rows(bench: &Benchmark, cfg: &ExperimentConfig, etas: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        let system = analysis::expected_system(&bench.mdp, &bench.target, &bench.behavior, &bench.features, eta)?;
        let verdict = analysis::is_positive_definite(&system);
        let fixed_point_rmse = analysis::fixed_point(&system).ok().and_then(|theta| {
            analysis::rmse_at(&bench.mdp, &bench.target, &bench.behavior, &bench.features, &theta).ok()
        });
        let mut run_cfg = cfg.run_config()?;
        run_cfg.algorithm = Algorithm::Perturbed;
        run_cfg.eta = eta;
        let log = experiments::run_experiment(bench, &run_cfg)?;
        rows.push(SweepRow {
            eta,
            verdict,
            fixed_point_rmse,
            final_mean_rmse: log.final_mean,
        });
    }
    Ok(rows)
}

pub fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write) -> Result<Vec<SweepRow>> {
    let cfg = args.common.experiment_config()?;
    let bench = cfg.benchmark()?;
    let etas = match &args.eta_range {
        Some(range) => parse_eta_range(range)?,
        None => args.common.eta_values(&cfg, &[])?,
    };
    if etas.is_empty() {
        return Err(flag_error("eta", "sweep needs --eta or --eta-range"));
    }
    if let Some(bad) = etas.iter().find(|e| !(**e >= 0.0)) {
        return Err(flag_error("eta", format!("eta must be nonnegative, got {bad}")));
    }
    let rows = sweep_rows(&bench, &cfg, &etas)?;
    let csv = report::sweep_csv(&rows);
    write_file(&cfg.out_dir(), "sweep.csv", &csv)?;
    stdout.write_all(csv.as_bytes())?;
    Ok(rows)
}
