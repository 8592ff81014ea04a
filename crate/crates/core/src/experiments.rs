//! Benchmark problems, the behavior-policy sampler and the multi-run
//! experiment harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis;
use crate::error::{Error, Result};
use crate::features::{self, FeatureMap, StateWeights, WeightVector};
use crate::learners::{self, Algorithm, LearnerState, StepContext, StepSchedule, TransitionSample};
use crate::mdp::{self, Mdp, Policy};

/// RMSE above this flags a run as diverged.
pub const RMSE_DIVERGENCE: f64 = 1e8;
/// A run whose final RMSE exceeds this multiple of its initial RMSE is
/// flagged as diverged even if it never crossed the hard thresholds.
pub const GROWTH_DIVERGENCE_FACTOR: f64 = 10.0;

pub const DEFAULT_EVAL_STRIDE: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub name: String,
    pub mdp: Mdp,
    pub target: Policy,
    pub behavior: Policy,
    pub features: FeatureMap,
    pub theta0: WeightVector,
}

impl Benchmark {
    /// Checks shapes and that μ covers π.
    pub fn new(
        name: impl Into<String>,
        mdp: Mdp,
        target: Policy,
        behavior: Policy,
        features: FeatureMap,
        theta0: WeightVector,
    ) -> Result<Self> {
        target.check_against(&mdp)?;
        behavior.check_against(&mdp)?;
        if features.num_states() != mdp.num_states() {
            return Err(Error::shape(format!(
                "feature matrix has {} rows, MDP has {} states",
                features.num_states(),
                mdp.num_states()
            )));
        }
        if theta0.len() != features.dim() {
            return Err(Error::shape(format!(
                "theta0 has length {}, feature dimension is {}",
                theta0.len(),
                features.dim()
            )));
        }
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                if target.prob(s, a) > 0.0 && behavior.prob(s, a) <= 0.0 {
                    return Err(Error::Coverage { state: s, action: a });
                }
            }
        }
        Ok(Benchmark {
            name: name.into(),
            mdp,
            target,
            behavior,
            features,
            theta0,
        })
    }

    pub fn by_name(name: &str) -> Option<Benchmark> {
        match name {
            "theta2theta" => Some(build_theta_2theta()),
            "baird" => Some(build_baird()),
            "chain3" => Some(build_chain3()),
            _ => None,
        }
    }

    pub fn behavior_weights(&self) -> Result<StateWeights> {
        analysis::behavior_weights(&self.mdp, &self.behavior)
    }

    pub fn step_context(&self) -> StepContext<'_> {
        StepContext {
            features: &self.features,
            target: &self.target,
            behavior: &self.behavior,
            gamma: self.mdp.discount(),
        }
    }
}

pub const BENCHMARK_NAMES: [&str; 3] = ["theta2theta", "baird", "chain3"];

fn deterministic_mdp(
    num_states: usize,
    num_actions: usize,
    next: &[(usize, usize, usize)],
    reward: f64,
    discount: f64,
) -> Mdp {
    let mut t = vec![0.0; num_states * num_actions * num_states];
    for &(s, a, n) in next {
        t[(s * num_actions + a) * num_states + n] = 1.0;
    }
    Mdp::new(
        num_states,
        num_actions,
        t,
        vec![reward; num_states * num_actions],
        discount,
    )
    .expect("benchmark MDP is well formed")
}

const LEFT: usize = 0;
const RIGHT: usize = 1;

/// Two states, left leads to the first and right to the second from either
/// state. Target always goes right, behavior is uniform, features 1 and 2,
/// zero rewards.
pub fn build_theta_2theta() -> Benchmark {
    let mdp = deterministic_mdp(
        2,
        2,
        &[(0, LEFT, 0), (0, RIGHT, 1), (1, LEFT, 0), (1, RIGHT, 1)],
        0.0,
        0.9,
    );
    let target = Policy::deterministic(2, 2, RIGHT).expect("valid policy");
    let behavior = Policy::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).expect("valid policy");
    let features = FeatureMap::from_rows(&[vec![1.0], vec![2.0]]).expect("valid features");
    Benchmark::new("theta2theta", mdp, target, behavior, features, WeightVector(vec![1.0]))
        .expect("theta2theta is consistent")
}

pub const BAIRD_DASHED: usize = 0;
pub const BAIRD_SOLID: usize = 1;

/// Seven-state star. Solid always leads to the last state, dashed to one of
/// the first six uniformly. Target always takes solid, behavior takes solid
/// with probability 1/7. Eight features: `2e_s + e_8` for the outer states
/// and `e_7 + 2e_8` for the centre state.
pub fn build_baird() -> Benchmark {
    let n = 7;
    let mut t = vec![0.0; n * 2 * n];
    for s in 0..n {
        for next in 0..6 {
            t[(s * 2 + BAIRD_DASHED) * n + next] = 1.0 / 6.0;
        }
        t[(s * 2 + BAIRD_SOLID) * n + 6] = 1.0;
    }
    let mdp = Mdp::new(n, 2, t, vec![0.0; n * 2], 0.99).expect("baird MDP is well formed");
    let target = Policy::deterministic(n, 2, BAIRD_SOLID).expect("valid policy");
    let behavior =
        Policy::from_rows(&vec![vec![6.0 / 7.0, 1.0 / 7.0]; n]).expect("valid policy");
    let mut rows = vec![vec![0.0; 8]; n];
    for (s, row) in rows.iter_mut().enumerate().take(6) {
        row[s] = 2.0;
        row[7] = 1.0;
    }
    rows[6][6] = 1.0;
    rows[6][7] = 2.0;
    let features = FeatureMap::from_rows(&rows).expect("valid features");
    let theta0 = WeightVector(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0]);
    Benchmark::new("baird", mdp, target, behavior, features, theta0)
        .expect("baird is consistent")
}

/// Three-state chain with unit rewards. Left moves toward the first state,
/// right toward the third; both ends self-loop.
pub fn build_chain3() -> Benchmark {
    let mdp = deterministic_mdp(
        3,
        2,
        &[
            (0, LEFT, 0),
            (0, RIGHT, 1),
            (1, LEFT, 0),
            (1, RIGHT, 2),
            (2, LEFT, 1),
            (2, RIGHT, 2),
        ],
        1.0,
        0.9,
    );
    let target = Policy::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]])
        .expect("valid policy");
    let behavior = Policy::from_rows(&[vec![0.9, 0.1], vec![0.5, 0.5], vec![0.1, 0.9]])
        .expect("valid policy");
    let features = FeatureMap::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]])
        .expect("valid features");
    Benchmark::new("chain3", mdp, target, behavior, features, WeightVector::zeros(2))
        .expect("chain3 is consistent")
}

/// Draws index `i` with probability `probs[i]` from one uniform variate.
fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// One behavior-policy transition from `state`: the action is drawn first,
/// then the next state.
pub fn sample_transition<R: Rng + ?Sized>(
    mdp: &Mdp,
    behavior: &Policy,
    state: usize,
    rng: &mut R,
) -> TransitionSample {
    let action = sample_index(behavior.row(state), rng);
    let next_state = sample_index(mdp.next_state_probs(state, action), rng);
    TransitionSample {
        state,
        action,
        reward: mdp.reward(state, action),
        next_state,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub schedule: StepSchedule,
    /// TDC secondary step sizes; `None` reuses `schedule`.
    pub beta: Option<StepSchedule>,
    pub iterations: usize,
    pub num_runs: usize,
    pub base_seed: u64,
    pub eval_stride: usize,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, eta: f64, alpha: f64, iterations: usize, num_runs: usize) -> Result<Self> {
        let cfg = RunConfig {
            algorithm,
            eta,
            schedule: StepSchedule::constant(alpha)?,
            beta: None,
            iterations,
            num_runs,
            base_seed: 0,
            eval_stride: DEFAULT_EVAL_STRIDE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.base_seed = seed;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.eval_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidModel("iterations must be at least 1".into()));
        }
        if self.num_runs == 0 {
            return Err(Error::InvalidModel("num_runs must be at least 1".into()));
        }
        if self.eval_stride == 0 {
            return Err(Error::InvalidModel("eval_stride must be at least 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidModel(format!("eta must be nonnegative, got {}", self.eta)));
        }
        self.schedule.validate()?;
        if let Some(beta) = &self.beta {
            beta.validate()?;
        }
        Ok(())
    }

    /// The η actually used by the learner: only perturbed TD is perturbed.
    pub fn effective_eta(&self) -> f64 {
        match self.algorithm {
            Algorithm::Perturbed => self.eta,
            _ => 0.0,
        }
    }

    /// Iteration indices at which RMSE is recorded: 0, every stride, and
    /// the final iteration.
    pub fn eval_points(&self) -> Vec<usize> {
        let mut pts: Vec<usize> = (0..=self.iterations).step_by(self.eval_stride).collect();
        if pts.last() != Some(&self.iterations) {
            pts.push(self.iterations);
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub seed: u64,
    /// RMSE at each of [`RunLog::iterations`].
    pub rmse: Vec<f64>,
    pub diverged: bool,
    /// Iteration at which a hard threshold was crossed, if any.
    pub diverged_at: Option<usize>,
    pub final_theta: WeightVector,
}

impl RunTrace {
    pub fn final_rmse(&self) -> f64 {
        *self.rmse.last().expect("trace has at least one point")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub benchmark: String,
    pub config: RunConfig,
    pub iterations: Vec<usize>,
    pub runs: Vec<RunTrace>,
    pub mean: Vec<f64>,
    pub final_mean: f64,
    /// Sample standard deviation of the final RMSE across runs.
    pub final_std: f64,
}

impl RunLog {
    pub fn diverged_count(&self) -> usize {
        self.runs.iter().filter(|r| r.diverged).count()
    }

    pub fn initial_mean(&self) -> f64 {
        self.mean[0]
    }

    pub fn from_runs(benchmark: &str, config: &RunConfig, iterations: Vec<usize>, runs: Vec<RunTrace>) -> RunLog {
        let k = runs.len() as f64;
        let mean: Vec<f64> = (0..iterations.len())
            .map(|i| runs.iter().map(|r| r.rmse[i]).sum::<f64>() / k)
            .collect();
        let finals: Vec<f64> = runs.iter().map(RunTrace::final_rmse).collect();
        let final_mean = finals.iter().sum::<f64>() / k;
        let final_std = if runs.len() > 1 {
            (finals.iter().map(|x| (x - final_mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        RunLog {
            benchmark: benchmark.to_string(),
            config: config.clone(),
            iterations,
            runs,
            mean,
            final_mean,
            final_std,
        }
    }
}

/// Exact quantities the RMSE is measured against.
struct Evaluator {
    exact: Vec<f64>,
    weights: StateWeights,
}

impl Evaluator {
    fn new(bench: &Benchmark) -> Result<Self> {
        Ok(Evaluator {
            exact: mdp::exact_value(&bench.mdp, &bench.target)?.0,
            weights: bench.behavior_weights()?,
        })
    }

    fn rmse(&self, features: &FeatureMap, theta: &WeightVector) -> f64 {
        let approx = features.matrix().mat_vec(theta.as_slice()).expect("dimensions checked");
        features::weighted_rmse_slices(&self.exact, &approx, self.weights.as_slice())
    }
}

fn single_run(
    bench: &Benchmark,
    config: &RunConfig,
    eval: &Evaluator,
    points: &[usize],
    seed: u64,
) -> Result<RunTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = bench.step_context();
    let eta = config.effective_eta();
    let beta = config.beta.unwrap_or(config.schedule);
    let mut learner = LearnerState::new(config.algorithm, bench.theta0.clone());
    let mut rmse = Vec::with_capacity(points.len());
    let mut state = 0usize;
    let mut next_point = 0usize;
    let mut diverged_at = None;

    rmse.push(eval.rmse(&bench.features, &learner.theta));
    next_point += 1;

    for n in 0..config.iterations {
        let sample = sample_transition(&bench.mdp, &bench.behavior, state, &mut rng);
        let alpha = config.schedule.step(n);
        match config.algorithm {
            Algorithm::Td0 => learners::step_offpolicy_td(&mut learner, &sample, &ctx, alpha)?,
            Algorithm::Perturbed => {
                learners::step_perturbed_td(&mut learner, &sample, &ctx, eta, alpha)?
            }
            Algorithm::Etd => learners::step_etd(&mut learner, &sample, &ctx, alpha)?,
            Algorithm::Tdc => {
                learners::step_tdc(&mut learner, &sample, &ctx, alpha, beta.step(n))?
            }
        }
        state = sample.next_state;
        let done = n + 1;

        let hard_stop = learner.is_diverged();
        if hard_stop || points[next_point] == done {
            let mut value = eval.rmse(&bench.features, &learner.theta);
            if !value.is_finite() {
                value = *rmse.last().expect("initial point recorded");
            }
            if points[next_point] == done {
                rmse.push(value);
                next_point += 1;
            }
            if hard_stop || value > RMSE_DIVERGENCE {
                diverged_at = Some(done);
                rmse.resize(points.len(), value);
                break;
            }
        }
    }
    debug_assert_eq!(rmse.len(), points.len());
    let grew = rmse[rmse.len() - 1] > GROWTH_DIVERGENCE_FACTOR * rmse[0] && rmse[0] > 0.0;
    Ok(RunTrace {
        seed,
        rmse,
        diverged: diverged_at.is_some() || grew,
        diverged_at,
        final_theta: learner.theta,
    })
}

/// Runs `config.num_runs` independent seeded runs (seed `base_seed + k`)
/// from the first state and records the stationary-weighted RMSE against
/// the exact value function at every evaluation point.
pub fn run_experiment(bench: &Benchmark, config: &RunConfig) -> Result<RunLog> {
    config.validate()?;
    let eval = Evaluator::new(bench)?;
    let points = config.eval_points();
    let runs = (0..config.num_runs)
        .into_par_iter()
        .map(|k| {
            let seed = config.base_seed.wrapping_add(k as u64);
            single_run(bench, config, &eval, &points, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunLog::from_runs(&bench.name, config, points, runs))
}
