//! Online linear learners driven by behavior-policy transitions.
//!
//! Every learner consumes one `(s, a, r, s')` sample per step and does O(d)
//! work. The perturbed TD error is
//!
//! ```text
//! δ = r + γ φ(s')ᵀθ − (1+η) φ(s)ᵀθ
//! ```
//!
//! and `η = 0` recovers ordinary off-policy TD(0).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::{FeatureMap, WeightVector};
use crate::linalg::{self, Matrix};
use crate::mdp::Policy;

/// `‖θ‖∞` above this flags a run as diverged.
pub const THETA_DIVERGENCE: f64 = 1e8;
/// ETD follow-on trace above this flags a run as diverged.
pub const FOLLOW_ON_DIVERGENCE: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSample {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant { alpha0: f64 },
    /// `α_n = α0 / (n+1)^exponent`.
    Polynomial { alpha0: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn constant(alpha0: f64) -> Result<Self> {
        let s = StepSchedule::Constant { alpha0 };
        s.validate()?;
        Ok(s)
    }

    pub fn polynomial(alpha0: f64, exponent: f64) -> Result<Self> {
        let s = StepSchedule::Polynomial { alpha0, exponent };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (alpha0, exponent) = match *self {
            StepSchedule::Constant { alpha0 } => (alpha0, 0.0),
            StepSchedule::Polynomial { alpha0, exponent } => (alpha0, exponent),
        };
        if !(alpha0 > 0.0 && alpha0.is_finite()) {
            return Err(Error::InvalidModel(format!("step size must be positive, got {alpha0}")));
        }
        if !(exponent >= 0.0 && exponent.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "decay exponent must be nonnegative, got {exponent}"
            )));
        }
        Ok(())
    }

    pub fn alpha0(&self) -> f64 {
        match *self {
            StepSchedule::Constant { alpha0 } | StepSchedule::Polynomial { alpha0, .. } => alpha0,
        }
    }

    #[inline]
    pub fn step(&self, n: usize) -> f64 {
        match *self {
            StepSchedule::Constant { alpha0 } => alpha0,
            StepSchedule::Polynomial { alpha0, exponent } => {
                alpha0 / ((n + 1) as f64).powf(exponent)
            }
        }
    }

    /// Whether `Σα_n = ∞` and `Σα_n² < ∞`.
    pub fn satisfies_robbins_monro(&self) -> bool {
        match *self {
            StepSchedule::Constant { .. } => false,
            StepSchedule::Polynomial { exponent, .. } => exponent > 0.5 && exponent <= 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Td0,
    Perturbed,
    Etd,
    Tdc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Td0,
        Algorithm::Perturbed,
        Algorithm::Etd,
        Algorithm::Tdc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Td0 => "td0",
            Algorithm::Perturbed => "perturbed",
            Algorithm::Etd => "etd",
            Algorithm::Tdc => "tdc",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm '{s}' (expected td0, perturbed, etd or tdc)"))
    }
}

/// Algorithm-specific state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Aux {
    None,
    Etd {
        /// Follow-on trace to apply at the next step (`F_0 = 1`).
        follow_on: f64,
        /// Importance ratio of the previous step (`ρ_{-1} = 1`).
        prev_rho: f64,
    },
    Tdc {
        /// Secondary weights, initialised to zero.
        w: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub theta: WeightVector,
    pub aux: Aux,
}

impl LearnerState {
    pub fn new(algorithm: Algorithm, theta0: WeightVector) -> Self {
        let aux = match algorithm {
            Algorithm::Td0 | Algorithm::Perturbed => Aux::None,
            Algorithm::Etd => Aux::Etd {
                follow_on: 1.0,
                prev_rho: 1.0,
            },
            Algorithm::Tdc => Aux::Tdc {
                w: vec![0.0; theta0.len()],
            },
        };
        LearnerState { theta: theta0, aux }
    }

    /// True once θ or the follow-on trace has left the stable range.
    pub fn is_diverged(&self) -> bool {
        let theta_bad = self
            .theta
            .as_slice()
            .iter()
            .any(|x| !x.is_finite() || x.abs() > THETA_DIVERGENCE);
        let trace_bad = match &self.aux {
            Aux::Etd { follow_on, .. } => !follow_on.is_finite() || *follow_on > FOLLOW_ON_DIVERGENCE,
            Aux::Tdc { w } => w.iter().any(|x| !x.is_finite()),
            Aux::None => false,
        };
        theta_bad || trace_bad
    }
}

/// Everything a step needs besides the sample and the learner state.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub features: &'a FeatureMap,
    pub target: &'a Policy,
    pub behavior: &'a Policy,
    pub gamma: f64,
}

/// `π(s,a) / μ(s,a)`.
pub fn importance_ratio(target: &Policy, behavior: &Policy, s: usize, a: usize) -> Result<f64> {
    let mu = behavior.prob(s, a);
    if mu <= 0.0 {
        return Err(Error::Coverage { state: s, action: a });
    }
    Ok(target.prob(s, a) / mu)
}

/// `r + γφ(s')ᵀθ − (1+η)φ(s)ᵀθ`.
#[inline]
pub fn td_error(
    features: &FeatureMap,
    theta: &[f64],
    sample: &TransitionSample,
    gamma: f64,
    eta: f64,
) -> f64 {
    let v_next = linalg::dot(features.phi(sample.next_state), theta);
    let v_here = linalg::dot(features.phi(sample.state), theta);
    sample.reward + gamma * v_next - (1.0 + eta) * v_here
}

fn check_dims(state: &LearnerState, ctx: &StepContext<'_>) -> Result<()> {
    if state.theta.len() != ctx.features.dim() {
        return Err(Error::shape(format!(
            "θ has length {}, feature dimension is {}",
            state.theta.len(),
            ctx.features.dim()
        )));
    }
    Ok(())
}

fn check_sample(sample: &TransitionSample, ctx: &StepContext<'_>) -> Result<()> {
    let n = ctx.features.num_states();
    if sample.state >= n || sample.next_state >= n || sample.action >= ctx.behavior.num_actions() {
        return Err(Error::shape(format!("sample {sample:?} out of range")));
    }
    Ok(())
}

/// Perturbed off-policy TD(0): `θ ← θ + α ρ δ_η φ(s)`.
pub fn step_perturbed_td(
    state: &mut LearnerState,
    sample: &TransitionSample,
    ctx: &StepContext<'_>,
    eta: f64,
    alpha: f64,
) -> Result<()> {
    check_dims(state, ctx)?;
    check_sample(sample, ctx)?;
    let rho = importance_ratio(ctx.target, ctx.behavior, sample.state, sample.action)?;
    if rho == 0.0 {
        return Ok(());
    }
    let delta = td_error(ctx.features, state.theta.as_slice(), sample, ctx.gamma, eta);
    let scale = alpha * rho * delta;
    for (t, f) in state.theta.0.iter_mut().zip(ctx.features.phi(sample.state)) {
        *t += scale * f;
    }
    Ok(())
}

/// Ordinary off-policy TD(0).
pub fn step_offpolicy_td(
    state: &mut LearnerState,
    sample: &TransitionSample,
    ctx: &StepContext<'_>,
    alpha: f64,
) -> Result<()> {
    step_perturbed_td(state, sample, ctx, 0.0, alpha)
}

/// Emphatic TD(0) with unit interest:
/// `F_n = 1 + γ ρ_{n−1} F_{n−1}`, `θ ← θ + α F_n ρ_n δ_n φ(s_n)`.
pub fn step_etd(
    state: &mut LearnerState,
    sample: &TransitionSample,
    ctx: &StepContext<'_>,
    alpha: f64,
) -> Result<()> {
    check_dims(state, ctx)?;
    check_sample(sample, ctx)?;
    let rho = importance_ratio(ctx.target, ctx.behavior, sample.state, sample.action)?;
    let Aux::Etd { follow_on, prev_rho } = &mut state.aux else {
        return Err(Error::InvalidModel("ETD step on a state without a follow-on trace".into()));
    };
    let f = *follow_on;
    if rho != 0.0 {
        let delta = td_error(ctx.features, state.theta.as_slice(), sample, ctx.gamma, 0.0);
        let scale = alpha * f * rho * delta;
        for (t, x) in state.theta.0.iter_mut().zip(ctx.features.phi(sample.state)) {
            *t += scale * x;
        }
    }
    *prev_rho = rho;
    *follow_on = 1.0 + ctx.gamma * rho * f;
    Ok(())
}

/// Follow-on trace that the last ETD step applied, recovered from the
/// stored next-step value.
pub fn etd_last_follow_on(state: &LearnerState, gamma: f64) -> Option<f64> {
    match state.aux {
        Aux::Etd { follow_on, prev_rho } if prev_rho != 0.0 => {
            Some((follow_on - 1.0) / (gamma * prev_rho))
        }
        _ => None,
    }
}

/// TD with gradient correction:
/// `θ ← θ + αρ[δφ(s) − γφ(s')(φ(s)ᵀw)]`, `w ← w + βρ[δ − φ(s)ᵀw]φ(s)`.
pub fn step_tdc(
    state: &mut LearnerState,
    sample: &TransitionSample,
    ctx: &StepContext<'_>,
    alpha: f64,
    beta: f64,
) -> Result<()> {
    check_dims(state, ctx)?;
    check_sample(sample, ctx)?;
    let rho = importance_ratio(ctx.target, ctx.behavior, sample.state, sample.action)?;
    let delta = td_error(ctx.features, state.theta.as_slice(), sample, ctx.gamma, 0.0);
    let Aux::Tdc { w } = &mut state.aux else {
        return Err(Error::InvalidModel("TDC step on a state without secondary weights".into()));
    };
    if rho == 0.0 {
        return Ok(());
    }
    let phi = ctx.features.phi(sample.state);
    let phi_next = ctx.features.phi(sample.next_state);
    let w_phi = linalg::dot(phi, w);
    for ((t, f), fn_) in state.theta.0.iter_mut().zip(phi).zip(phi_next) {
        *t += alpha * rho * (delta * f - ctx.gamma * fn_ * w_phi);
    }
    let w_scale = beta * rho * (delta - w_phi);
    for (wi, f) in w.iter_mut().zip(phi) {
        *wi += w_scale * f;
    }
    Ok(())
}

/// Per-sample linear system `(A_n, b_n)` of the perturbed update, so that
/// one step equals `θ + α(b_n − A_n θ)`:
///
/// `A_n = ρ((1+η)φ(s)φ(s)ᵀ − γφ(s)φ(s')ᵀ)`, `b_n = ρ r φ(s)`.
pub fn sample_system(
    sample: &TransitionSample,
    ctx: &StepContext<'_>,
    eta: f64,
) -> Result<(Matrix, Vec<f64>)> {
    check_sample(sample, ctx)?;
    let rho = importance_ratio(ctx.target, ctx.behavior, sample.state, sample.action)?;
    let phi = ctx.features.phi(sample.state);
    let phi_next = ctx.features.phi(sample.next_state);
    let d = phi.len();
    let mut a = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            a[(i, j)] = rho * ((1.0 + eta) * phi[i] * phi[j] - ctx.gamma * phi[i] * phi_next[j]);
        }
    }
    let b = phi.iter().map(|f| rho * sample.reward * f).collect();
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixture {
        phi: FeatureMap,
        target: Policy,
        behavior: Policy,
    }

    fn theta2theta() -> Fixture {
        Fixture {
            phi: FeatureMap::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
            target: Policy::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap(),
            behavior: Policy::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
        }
    }

    impl Fixture {
        fn ctx(&self) -> StepContext<'_> {
            StepContext {
                features: &self.phi,
                target: &self.target,
                behavior: &self.behavior,
                gamma: 0.9,
            }
        }
    }

    const RIGHT_1_TO_2: TransitionSample = TransitionSample {
        state: 0,
        action: 1,
        reward: 0.0,
        next_state: 1,
    };

    const LEFT_1_TO_1: TransitionSample = TransitionSample {
        state: 0,
        action: 0,
        reward: 0.0,
        next_state: 0,
    };

    #[test]
    fn ratios() {
        let fx = theta2theta();
        assert_eq!(importance_ratio(&fx.target, &fx.behavior, 0, 1).unwrap(), 2.0);
        assert_eq!(importance_ratio(&fx.target, &fx.behavior, 0, 0).unwrap(), 0.0);
        assert_eq!(importance_ratio(&fx.behavior, &fx.behavior, 1, 0).unwrap(), 1.0);
        let greedy = Policy::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(
            importance_ratio(&fx.target, &greedy, 0, 1),
            Err(Error::Coverage { state: 0, action: 1 })
        );
    }

    #[test]
    fn perturbed_step_hand_value() {
        let fx = theta2theta();
        let mut st = LearnerState::new(Algorithm::Perturbed, WeightVector(vec![1.0]));
        step_perturbed_td(&mut st, &RIGHT_1_TO_2, &fx.ctx(), 1.0, 0.01).unwrap();
        assert!((st.theta.0[0] - 0.996).abs() < 1e-15);
    }

    #[test]
    fn offpolicy_step_hand_value_and_eta_zero_equivalence() {
        let fx = theta2theta();
        let mut a = LearnerState::new(Algorithm::Td0, WeightVector(vec![1.0]));
        let mut b = a.clone();
        step_offpolicy_td(&mut a, &RIGHT_1_TO_2, &fx.ctx(), 0.01).unwrap();
        step_perturbed_td(&mut b, &RIGHT_1_TO_2, &fx.ctx(), 0.0, 0.01).unwrap();
        assert!((a.theta.0[0] - 1.016).abs() < 1e-15);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_ratio_is_noop() {
        let fx = theta2theta();
        for alg in Algorithm::ALL {
            let mut st = LearnerState::new(alg, WeightVector(vec![1.0]));
            let before = st.theta.clone();
            match alg {
                Algorithm::Td0 => step_offpolicy_td(&mut st, &LEFT_1_TO_1, &fx.ctx(), 0.01),
                Algorithm::Perturbed => {
                    step_perturbed_td(&mut st, &LEFT_1_TO_1, &fx.ctx(), 1.0, 0.01)
                }
                Algorithm::Etd => step_etd(&mut st, &LEFT_1_TO_1, &fx.ctx(), 0.01),
                Algorithm::Tdc => step_tdc(&mut st, &LEFT_1_TO_1, &fx.ctx(), 0.01, 0.01),
            }
            .unwrap();
            assert_eq!(st.theta, before, "{alg}");
        }
    }

    #[test]
    fn etd_follow_on_recursion() {
        let fx = theta2theta();
        let mut st = LearnerState::new(Algorithm::Etd, WeightVector(vec![1.0]));
        step_etd(&mut st, &RIGHT_1_TO_2, &fx.ctx(), 0.01).unwrap();
        // first step uses F_0 = 1, so it matches plain TD(0)
        assert!((st.theta.0[0] - 1.016).abs() < 1e-15);
        let Aux::Etd { follow_on, prev_rho } = st.aux else { unreachable!() };
        assert!((follow_on - 2.8).abs() < 1e-15);
        assert_eq!(prev_rho, 2.0);
        step_etd(&mut st, &RIGHT_1_TO_2, &fx.ctx(), 0.01).unwrap();
        assert!((etd_last_follow_on(&st, 0.9).unwrap() - 2.8).abs() < 1e-12);
    }

    #[test]
    fn etd_zero_ratios_keep_unit_trace() {
        let fx = theta2theta();
        let mut st = LearnerState::new(Algorithm::Etd, WeightVector(vec![1.0]));
        for _ in 0..10 {
            step_etd(&mut st, &LEFT_1_TO_1, &fx.ctx(), 0.01).unwrap();
            let Aux::Etd { follow_on, .. } = st.aux else { unreachable!() };
            assert_eq!(follow_on, 1.0);
        }
    }

    #[test]
    fn etd_on_policy_trace_is_geometric() {
        let fx = theta2theta();
        let ctx = StepContext {
            target: &fx.behavior,
            ..fx.ctx()
        };
        let mut st = LearnerState::new(Algorithm::Etd, WeightVector(vec![0.0]));
        for _ in 0..400 {
            step_etd(&mut st, &LEFT_1_TO_1, &ctx, 0.01).unwrap();
        }
        let Aux::Etd { follow_on, .. } = st.aux else { unreachable!() };
        assert!((follow_on - 10.0).abs() < 1e-12);
    }

    #[test]
    fn tdc_hand_values() {
        let fx = theta2theta();
        let mut st = LearnerState::new(Algorithm::Tdc, WeightVector(vec![1.0]));
        step_tdc(&mut st, &RIGHT_1_TO_2, &fx.ctx(), 0.01, 0.01).unwrap();
        assert!((st.theta.0[0] - 1.016).abs() < 1e-15);
        let Aux::Tdc { w } = &st.aux else { unreachable!() };
        assert!((w[0] - 0.016).abs() < 1e-15);
    }

    #[test]
    fn tdc_full_noop_when_delta_and_w_vanish() {
        let fx = theta2theta();
        // θ = 0 and r = 0 give δ = 0
        let mut st = LearnerState::new(Algorithm::Tdc, WeightVector(vec![0.0]));
        let before = st.clone();
        step_tdc(&mut st, &RIGHT_1_TO_2, &fx.ctx(), 0.5, 0.5).unwrap();
        assert_eq!(st, before);
    }

    #[test]
    fn sample_system_reproduces_step() {
        let fx = theta2theta();
        let sample = TransitionSample { reward: 0.7, ..RIGHT_1_TO_2 };
        let mut st = LearnerState::new(Algorithm::Perturbed, WeightVector(vec![1.3]));
        let theta = st.theta.0.clone();
        step_perturbed_td(&mut st, &sample, &fx.ctx(), 0.5, 0.05).unwrap();
        let (a, b) = sample_system(&sample, &fx.ctx(), 0.5).unwrap();
        let at = a.mat_vec(&theta).unwrap();
        let expected = theta[0] + 0.05 * (b[0] - at[0]);
        assert!((st.theta.0[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn divergence_detection() {
        let mut st = LearnerState::new(Algorithm::Etd, WeightVector(vec![1.0]));
        assert!(!st.is_diverged());
        st.theta.0[0] = 2e8;
        assert!(st.is_diverged());
        st.theta.0[0] = 1.0;
        st.aux = Aux::Etd { follow_on: 1e101, prev_rho: 1.0 };
        assert!(st.is_diverged());
    }

    #[test]
    fn schedules() {
        let c = StepSchedule::constant(0.1).unwrap();
        assert_eq!(c.step(0), 0.1);
        assert_eq!(c.step(1000), 0.1);
        assert!(!c.satisfies_robbins_monro());
        let p = StepSchedule::polynomial(1.0, 0.75).unwrap();
        assert!(p.satisfies_robbins_monro());
        assert!((p.step(15) - 1.0 / 16f64.powf(0.75)).abs() < 1e-15);
        assert!(StepSchedule::polynomial(1.0, 0.4).unwrap().step(3) > 0.0);
        assert!(!StepSchedule::polynomial(1.0, 0.4).unwrap().satisfies_robbins_monro());
        assert!(StepSchedule::constant(0.0).is_err());
        assert!(StepSchedule::constant(-1.0).is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("gtd2".parse::<Algorithm>().is_err());
    }
}
