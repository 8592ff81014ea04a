//! Experiment configuration files.
//!
//! A config is a line-oriented `key: value` file. `#` starts a comment.
//! Either name a built-in benchmark with `env:` or describe a model inline:
//!
//! ```text
//! name: custom
//! states: 2
//! actions: 2
//! discount: 0.9
//! trans: 0 1 1 1.0        # s a s' probability
//! reward: 0 1 0.5         # s a value, unspecified rewards are 0
//! target: 0 1             # one line per state, in state order
//! behavior: 0.5 0.5
//! feature: 1              # one line per state
//! theta0: 1
//! ```
//!
//! Run settings (`algo`, `eta`, `alpha`, `schedule`, `decay`, `beta`,
//! `iters`, `runs`, `seed`, `stride`, `out`) may appear in the same file;
//! command-line flags override them.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::experiments::{Benchmark, RunConfig, BENCHMARK_NAMES, DEFAULT_EVAL_STRIDE};
use crate::features::{FeatureMap, WeightVector};
use crate::learners::{Algorithm, StepSchedule};
use crate::mdp::{Mdp, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Polynomial,
}

impl ScheduleKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(ScheduleKind::Constant),
            "polynomial" => Some(ScheduleKind::Polynomial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkSource {
    Named(String),
    Inline(Box<Benchmark>),
}

/// Everything a command needs, before defaults are applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub source: Option<BenchmarkSource>,
    pub algorithm: Option<Algorithm>,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub schedule: Option<ScheduleKind>,
    pub decay: Option<f64>,
    pub beta: Option<f64>,
    pub iterations: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub stride: Option<usize>,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_ALPHA: f64 = 0.01;
pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const DEFAULT_RUNS: usize = 10;
pub const DEFAULT_DECAY: f64 = 0.75;

/// Inline model fields, collected line by line.
#[derive(Default)]
struct InlineModel {
    name: Option<String>,
    states: Option<usize>,
    actions: Option<usize>,
    discount: Option<f64>,
    trans: Vec<(usize, [f64; 4])>,
    rewards: Vec<(usize, [f64; 3])>,
    target: Vec<Vec<f64>>,
    behavior: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    theta0: Option<Vec<f64>>,
    first_line: Option<usize>,
}

impl InlineModel {
    fn touched(&mut self, line: usize) {
        self.first_line.get_or_insert(line);
    }
}

fn parse_num<T: std::str::FromStr>(loc: &str, key: &str, text: &str) -> Result<T> {
    text.trim()
        .parse()
        .map_err(|_| Error::config(loc, format!("field '{key}': cannot parse '{}'", text.trim())))
}

fn parse_floats(loc: &str, key: &str, text: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| parse_num::<f64>(loc, key, t))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::config(loc, format!("field '{key}': expected numbers")));
    }
    Ok(values)
}

fn parse_fixed<const N: usize>(loc: &str, key: &str, text: &str) -> Result<[f64; N]> {
    let values = parse_floats(loc, key, text)?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| Error::config(loc, format!("field '{key}': expected {N} numbers, got {}", v.len())))
}

fn index_of(loc: &str, key: &str, x: f64, bound: usize, what: &str) -> Result<usize> {
    if x.fract() != 0.0 || x < 0.0 || x >= bound as f64 {
        return Err(Error::config(
            loc,
            format!("field '{key}': {what} index {x} out of range 0..{bound}"),
        ));
    }
    Ok(x as usize)
}

pub fn parse_algorithm(loc: &str, text: &str) -> Result<Algorithm> {
    text.trim()
        .parse()
        .map_err(|msg: String| Error::config(loc, format!("field 'algo': {msg}")))
}

pub fn parse_env(loc: &str, text: &str) -> Result<BenchmarkSource> {
    let name = text.trim();
    if BENCHMARK_NAMES.contains(&name) {
        Ok(BenchmarkSource::Named(name.to_string()))
    } else {
        Err(Error::config(
            loc,
            format!(
                "field 'env': unknown benchmark '{name}' (expected one of {})",
                BENCHMARK_NAMES.join(", ")
            ),
        ))
    }
}

pub fn parse_schedule(loc: &str, text: &str) -> Result<ScheduleKind> {
    ScheduleKind::parse(text.trim()).ok_or_else(|| {
        Error::config(
            loc,
            format!("field 'schedule': unknown kind '{}' (expected constant or polynomial)", text.trim()),
        )
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut model = InlineModel::default();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = format!("line {lineno}");
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::config(&loc, "expected 'key: value'"))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "env" => cfg.source = Some(parse_env(&loc, value)?),
                "algo" => cfg.algorithm = Some(parse_algorithm(&loc, value)?),
                "eta" => cfg.eta = Some(parse_num(&loc, key, value)?),
                "alpha" => cfg.alpha = Some(parse_num(&loc, key, value)?),
                "schedule" => cfg.schedule = Some(parse_schedule(&loc, value)?),
                "decay" => cfg.decay = Some(parse_num(&loc, key, value)?),
                "beta" => cfg.beta = Some(parse_num(&loc, key, value)?),
                "iters" => cfg.iterations = Some(parse_num(&loc, key, value)?),
                "runs" => cfg.runs = Some(parse_num(&loc, key, value)?),
                "seed" => cfg.seed = Some(parse_num(&loc, key, value)?),
                "stride" => cfg.stride = Some(parse_num(&loc, key, value)?),
                "out" => cfg.out = Some(PathBuf::from(value)),
                "name" => {
                    model.touched(lineno);
                    model.name = Some(value.to_string());
                }
                "states" => {
                    model.touched(lineno);
                    model.states = Some(parse_num(&loc, key, value)?);
                }
                "actions" => {
                    model.touched(lineno);
                    model.actions = Some(parse_num(&loc, key, value)?);
                }
                "discount" => {
                    model.touched(lineno);
                    model.discount = Some(parse_num(&loc, key, value)?);
                }
                "trans" => {
                    model.touched(lineno);
                    model.trans.push((lineno, parse_fixed(&loc, key, value)?));
                }
                "reward" => {
                    model.touched(lineno);
                    model.rewards.push((lineno, parse_fixed(&loc, key, value)?));
                }
                "target" => {
                    model.touched(lineno);
                    model.target.push(parse_floats(&loc, key, value)?);
                }
                "behavior" => {
                    model.touched(lineno);
                    model.behavior.push(parse_floats(&loc, key, value)?);
                }
                "feature" => {
                    model.touched(lineno);
                    model.features.push(parse_floats(&loc, key, value)?);
                }
                "theta0" => {
                    model.touched(lineno);
                    model.theta0 = Some(parse_floats(&loc, key, value)?);
                }
                other => return Err(Error::config(&loc, format!("unknown field '{other}'"))),
            }
        }

        if let Some(first) = model.first_line {
            if matches!(cfg.source, Some(BenchmarkSource::Named(_))) {
                return Err(Error::config(
                    format!("line {first}"),
                    "inline model fields cannot be combined with 'env'",
                ));
            }
            cfg.source = Some(BenchmarkSource::Inline(Box::new(build_inline(model)?)));
        }
        Ok(cfg)
    }

    /// Fields set in `other` replace ours.
    pub fn overlay(mut self, other: ExperimentConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(source, algorithm, eta, alpha, schedule, decay, beta, iterations, runs, seed, stride, out);
        self
    }

    pub fn benchmark(&self) -> Result<Benchmark> {
        match &self.source {
            Some(BenchmarkSource::Named(name)) => Benchmark::by_name(name)
                .ok_or_else(|| Error::config("field 'env'", format!("unknown benchmark '{name}'"))),
            Some(BenchmarkSource::Inline(b)) => Ok((**b).clone()),
            None => Err(Error::config(
                "field 'env'",
                "no benchmark given (use --env or --config)",
            )),
        }
    }

    fn schedule_for(&self, step: f64, field: &str) -> Result<StepSchedule> {
        let result = match self.schedule.unwrap_or(ScheduleKind::Constant) {
            ScheduleKind::Constant => StepSchedule::constant(step),
            ScheduleKind::Polynomial => {
                StepSchedule::polynomial(step, self.decay.unwrap_or(DEFAULT_DECAY))
            }
        };
        result.map_err(|e| Error::config(format!("field '{field}'"), e.to_string()))
    }

    /// Run settings with defaults applied. `eta` defaults to 0.
    pub fn run_config(&self) -> Result<RunConfig> {
        let schedule = self.schedule_for(self.alpha.unwrap_or(DEFAULT_ALPHA), "alpha")?;
        let beta = self.beta.map(|b| self.schedule_for(b, "beta")).transpose()?;
        let cfg = RunConfig {
            algorithm: self.algorithm.unwrap_or(Algorithm::Perturbed),
            eta: self.eta.unwrap_or(0.0),
            schedule,
            beta,
            iterations: self.iterations.unwrap_or(DEFAULT_ITERATIONS),
            num_runs: self.runs.unwrap_or(DEFAULT_RUNS),
            base_seed: self.seed.unwrap_or(0),
            eval_stride: self.stride.unwrap_or(DEFAULT_EVAL_STRIDE),
        };
        cfg.validate().map_err(|e| Error::config("run settings", e.to_string()))?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

fn model_error(e: Error) -> Error {
    match e {
        Error::Coverage { .. } | Error::Config { .. } => e,
        other => Error::config("inline model", other.to_string()),
    }
}

fn build_inline(m: InlineModel) -> Result<Benchmark> {
    let missing = |f: &str| Error::config("inline model", format!("missing field '{f}'"));
    let n = m.states.ok_or_else(|| missing("states"))?;
    let u = m.actions.ok_or_else(|| missing("actions"))?;
    let discount = m.discount.ok_or_else(|| missing("discount"))?;
    if n == 0 || u == 0 {
        return Err(Error::config("inline model", "states and actions must be positive"));
    }

    let mut transitions = vec![0.0; n * u * n];
    for (line, [s, a, next, p]) in &m.trans {
        let loc = format!("line {line}");
        let s = index_of(&loc, "trans", *s, n, "state")?;
        let a = index_of(&loc, "trans", *a, u, "action")?;
        let next = index_of(&loc, "trans", *next, n, "state")?;
        transitions[(s * u + a) * n + next] += p;
    }
    let mut rewards = vec![0.0; n * u];
    for (line, [s, a, v]) in &m.rewards {
        let loc = format!("line {line}");
        let s = index_of(&loc, "reward", *s, n, "state")?;
        let a = index_of(&loc, "reward", *a, u, "action")?;
        rewards[s * u + a] = *v;
    }
    let mdp = Mdp::new(n, u, transitions, rewards, discount).map_err(model_error)?;

    let check_rows = |rows: &Vec<Vec<f64>>, field: &str| -> Result<()> {
        if rows.len() != n {
            return Err(Error::config(
                "inline model",
                format!("field '{field}': expected {n} rows, got {}", rows.len()),
            ));
        }
        Ok(())
    };
    check_rows(&m.target, "target")?;
    check_rows(&m.behavior, "behavior")?;
    check_rows(&m.features, "feature")?;
    let target = Policy::from_rows(&m.target).map_err(model_error)?;
    let behavior = Policy::from_rows(&m.behavior).map_err(model_error)?;
    let features = FeatureMap::from_rows(&m.features).map_err(model_error)?;
    let theta0 = WeightVector(m.theta0.unwrap_or_else(|| vec![0.0; features.dim()]));
    Benchmark::new(
        m.name.unwrap_or_else(|| "inline".to_string()),
        mdp,
        target,
        behavior,
        features,
        theta0,
    )
    .map_err(model_error)
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Inline config text for a benchmark. Numbers use shortest round-trip
/// formatting, so parsing the output reproduces the benchmark exactly.
pub fn describe(bench: &Benchmark) -> String {
    let mdp = &bench.mdp;
    let mut out = String::new();
    out.push_str(&format!("name: {}\n", bench.name));
    out.push_str(&format!("states: {}\n", mdp.num_states()));
    out.push_str(&format!("actions: {}\n", mdp.num_actions()));
    out.push_str(&format!("discount: {}\n", mdp.discount()));
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            for (next, &p) in mdp.next_state_probs(s, a).iter().enumerate() {
                if p != 0.0 {
                    out.push_str(&format!("trans: {s} {a} {next} {p}\n"));
                }
            }
        }
    }
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let r = mdp.reward(s, a);
            if r != 0.0 {
                out.push_str(&format!("reward: {s} {a} {r}\n"));
            }
        }
    }
    for s in 0..mdp.num_states() {
        out.push_str(&format!("target: {}\n", join(bench.target.row(s))));
    }
    for s in 0..mdp.num_states() {
        out.push_str(&format!("behavior: {}\n", join(bench.behavior.row(s))));
    }
    for s in 0..mdp.num_states() {
        out.push_str(&format!("feature: {}\n", join(bench.features.phi(s))));
    }
    out.push_str(&format!("theta0: {}\n", join(bench.theta0.as_slice())));
    out
}
