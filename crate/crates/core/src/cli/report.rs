//! Text and CSV rendering. All numbers go through [`fmt_num`] so output is
//! locale independent and byte stable.

use std::fmt::Write as _;

use crate::analysis::PdVerdict;
use crate::experiments::RunLog;
use crate::learners::StepSchedule;
use crate::linalg::Matrix;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// `%.12g`-style formatting: 12 significant digits, trailing zeros
/// trimmed, exponent form outside `[1e-5, 1e12)`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= SIGNIFICANT_DIGITS as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| fmt_num(*x)).collect();
    format!("[{}]", items.join(", "))
}

pub fn fmt_matrix(m: &Matrix) -> String {
    let rows: Vec<String> = m.row_iter().map(fmt_vec).collect();
    format!("[{}]", rows.join(", "))
}

pub fn fmt_schedule(s: &StepSchedule) -> String {
    match s {
        StepSchedule::Constant { alpha0 } => format!("constant alpha={}", fmt_num(*alpha0)),
        StepSchedule::Polynomial { alpha0, exponent } => format!(
            "polynomial alpha0={} exponent={}",
            fmt_num(*alpha0),
            fmt_num(*exponent)
        ),
    }
}

/// `iteration,run,rmse` rows for every run followed by the mean row at
/// each evaluation point.
pub fn trajectory_csv(log: &RunLog) -> String {
    let mut out = String::from("iteration,run,rmse\n");
    for (i, iteration) in log.iterations.iter().enumerate() {
        for (k, run) in log.runs.iter().enumerate() {
            let _ = writeln!(out, "{iteration},{k},{}", fmt_num(run.rmse[i]));
        }
        let _ = writeln!(out, "{iteration},mean,{}", fmt_num(log.mean[i]));
    }
    out
}

pub fn summary_text(log: &RunLog) -> String {
    let cfg = &log.config;
    let mut out = String::new();
    let _ = writeln!(out, "benchmark: {}", log.benchmark);
    let _ = writeln!(out, "algorithm: {}", cfg.algorithm);
    let _ = writeln!(out, "eta: {}", fmt_num(cfg.effective_eta()));
    let _ = writeln!(out, "alpha: {}", fmt_num(cfg.schedule.alpha0()));
    let _ = writeln!(out, "schedule: {}", fmt_schedule(&cfg.schedule));
    if let Some(beta) = &cfg.beta {
        let _ = writeln!(out, "beta: {}", fmt_schedule(beta));
    }
    let _ = writeln!(out, "iterations: {}", cfg.iterations);
    let _ = writeln!(out, "runs: {}", cfg.num_runs);
    let _ = writeln!(out, "base_seed: {}", cfg.base_seed);
    let _ = writeln!(out, "initial_mean_rmse: {}", fmt_num(log.initial_mean()));
    let _ = writeln!(
        out,
        "final_rmse: {} +- {}",
        fmt_num(log.final_mean),
        fmt_num(log.final_std)
    );
    let _ = writeln!(out, "final_rmse_mean: {}", fmt_num(log.final_mean));
    let _ = writeln!(out, "final_rmse_std: {}", fmt_num(log.final_std));
    let _ = writeln!(out, "diverged_runs: {}/{}", log.diverged_count(), log.runs.len());
    let flags: Vec<&str> = log
        .runs
        .iter()
        .map(|r| if r.diverged { "diverged" } else { "ok" })
        .collect();
    let _ = writeln!(out, "divergence_flags: {}", flags.join(" "));
    out
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eta: f64,
    pub verdict: PdVerdict,
    pub fixed_point_rmse: Option<f64>,
    pub final_mean_rmse: f64,
}

pub const SWEEP_HEADER: &str = "eta,pd,min_sym_eig,fixed_point_rmse,final_mean_rmse";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_num(r.eta),
            r.verdict.label(),
            fmt_num(r.verdict.min_sym_eigenvalue),
            r.fixed_point_rmse.map(fmt_num).unwrap_or_default(),
            fmt_num(r.final_mean_rmse)
        );
    }
    out
}
