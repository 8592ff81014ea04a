//! Finite MDPs, stationary policies and the quantities they induce: the
//! state-to-state kernel, the expected one-step reward, the stationary
//! distribution of a kernel, exact values and the (perturbed) Bellman
//! operator.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Tolerance on probability rows summing to one.
pub const PROB_TOL: f64 = 1e-12;

const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITERS: usize = 1_000_000;
const STATIONARY_RESIDUAL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    /// `p(s'|s,a)` stored at `(s * num_actions + a) * num_states + s'`.
    transitions: Vec<f64>,
    /// `r(s,a)` stored at `s * num_actions + a`.
    rewards: Vec<f64>,
    discount: f64,
}

impl Mdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel(
                "an MDP needs at least one state and one action".into(),
            ));
        }
        if transitions.len() != num_states * num_actions * num_states {
            return Err(Error::shape(format!(
                "transition tensor has {} entries, expected {}",
                transitions.len(),
                num_states * num_actions * num_states
            )));
        }
        if rewards.len() != num_states * num_actions {
            return Err(Error::shape(format!(
                "reward table has {} entries, expected {}",
                rewards.len(),
                num_states * num_actions
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidModel(format!(
                "discount must lie in (0, 1), got {discount}"
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite reward {r}")));
        }
        for s in 0..num_states {
            for a in 0..num_actions {
                let start = (s * num_actions + a) * num_states;
                check_distribution(&transitions[start..start + num_states]).map_err(|msg| {
                    Error::InvalidModel(format!("p(.|s={s},a={a}): {msg}"))
                })?;
            }
        }
        Ok(Mdp {
            num_states,
            num_actions,
            transitions,
            rewards,
            discount,
        })
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// The distribution `p(·|s,a)`.
    #[inline]
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    #[inline]
    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.next_state_probs(s, a)[next]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    /// Copy of this MDP with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Mdp> {
        Mdp::new(
            self.num_states,
            self.num_actions,
            self.transitions.clone(),
            self.rewards.clone(),
            discount,
        )
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("invalid probability {p}"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(format!("probabilities sum to {sum}"));
    }
    Ok(())
}

/// A stationary randomized policy, one action distribution per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_actions = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || num_actions == 0 {
            return Err(Error::InvalidModel("empty policy table".into()));
        }
        let mut probs = Vec::with_capacity(rows.len() * num_actions);
        for (s, row) in rows.iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::shape(format!(
                    "policy row {s} has {} entries, expected {num_actions}",
                    row.len()
                )));
            }
            check_distribution(row)
                .map_err(|msg| Error::InvalidModel(format!("policy row {s}: {msg}")))?;
            probs.extend_from_slice(row);
        }
        Ok(Policy {
            num_states: rows.len(),
            num_actions,
            probs,
        })
    }

    /// The policy choosing `action` with probability one in every state.
    pub fn deterministic(num_states: usize, num_actions: usize, action: usize) -> Result<Self> {
        if action >= num_actions {
            return Err(Error::shape(format!(
                "action {action} out of range for {num_actions} actions"
            )));
        }
        let rows: Vec<Vec<f64>> = (0..num_states)
            .map(|_| {
                let mut r = vec![0.0; num_actions];
                r[action] = 1.0;
                r
            })
            .collect();
        Policy::from_rows(&rows)
    }

    /// Convex combination `λ·self + (1−λ)·other`.
    pub fn mix(&self, other: &Policy, lambda: f64) -> Result<Policy> {
        if self.num_states != other.num_states || self.num_actions != other.num_actions {
            return Err(Error::shape("policies have different shapes"));
        }
        let rows: Vec<Vec<f64>> = (0..self.num_states)
            .map(|s| {
                self.row(s)
                    .iter()
                    .zip(other.row(s))
                    .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                    .collect()
            })
            .collect();
        Policy::from_rows(&rows)
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_states).map(|s| self.row(s).to_vec()).collect()
    }

    pub(crate) fn check_against(&self, mdp: &Mdp) -> Result<()> {
        if self.num_states != mdp.num_states() || self.num_actions != mdp.num_actions() {
            return Err(Error::shape(format!(
                "policy is {}x{} but the MDP has {} states and {} actions",
                self.num_states,
                self.num_actions,
                mdp.num_states(),
                mdp.num_actions()
            )));
        }
        Ok(())
    }
}

/// Row-stochastic state transition matrix induced by a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyKernel(Matrix);

impl PolicyKernel {
    /// Wraps a matrix after checking it is square and row-stochastic.
    pub fn new(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::shape("kernel must be square"));
        }
        for (i, row) in matrix.row_iter().enumerate() {
            check_distribution(row)
                .map_err(|msg| Error::InvalidModel(format!("kernel row {i}: {msg}")))?;
        }
        Ok(PolicyKernel(matrix))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn num_states(&self) -> usize {
        self.0.rows()
    }
}

/// A real value per state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector(pub Vec<f64>);

impl ValueVector {
    pub fn zeros(n: usize) -> Self {
        ValueVector(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for ValueVector {
    fn from(v: Vec<f64>) -> Self {
        ValueVector(v)
    }
}

/// `[P]_ij = Σ_a policy(i,a) p(j|i,a)`.
pub fn policy_kernel(mdp: &Mdp, policy: &Policy) -> Result<PolicyKernel> {
    policy.check_against(mdp)?;
    let n = mdp.num_states();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for a in 0..mdp.num_actions() {
            let w = policy.prob(i, a);
            if w == 0.0 {
                continue;
            }
            for (j, p) in mdp.next_state_probs(i, a).iter().enumerate() {
                m[(i, j)] += w * p;
            }
        }
    }
    // Mixtures of exact distributions can drift by a few ulps.
    for i in 0..n {
        let sum: f64 = m.row(i).iter().sum();
        for j in 0..n {
            m[(i, j)] /= sum;
        }
    }
    PolicyKernel::new(m)
}

/// `r_π(i) = Σ_a r(i,a) π(i,a)`.
pub fn policy_reward(mdp: &Mdp, policy: &Policy) -> Result<ValueVector> {
    policy.check_against(mdp)?;
    Ok(ValueVector(
        (0..mdp.num_states())
            .map(|s| {
                (0..mdp.num_actions())
                    .map(|a| mdp.reward(s, a) * policy.prob(s, a))
                    .sum()
            })
            .collect(),
    ))
}

/// Stationary distribution of an irreducible, aperiodic kernel by power
/// iteration on `dᵀP` from the uniform distribution.
///
/// Reducible and periodic chains are rejected up front since power
/// iteration started from the uniform vector can appear to converge on both.
pub fn stationary_distribution(kernel: &PolicyKernel) -> Result<Vec<f64>> {
    let p = kernel.matrix();
    let n = p.rows();
    check_irreducible(p)?;
    let period = chain_period(p);
    if period > 1 {
        return Err(Error::Periodic(period));
    }

    let mut d = vec![1.0 / n as f64; n];
    let mut converged = false;
    for _ in 0..STATIONARY_MAX_ITERS {
        let mut next = p.vec_mat(&d)?;
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let change = linalg::norm_inf(&linalg::sub_vec(&next, &d));
        d = next;
        if change <= STATIONARY_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "power iteration exceeded {STATIONARY_MAX_ITERS} iterations"
        )));
    }
    if let Some(i) = d.iter().position(|&x| x <= 0.0) {
        return Err(Error::Reducible(format!("state {i} has zero stationary mass")));
    }
    let residual = linalg::norm_inf(&linalg::sub_vec(&p.vec_mat(&d)?, &d));
    if residual > STATIONARY_RESIDUAL {
        return Err(Error::Convergence(format!(
            "stationary residual {residual:e} above {STATIONARY_RESIDUAL:e}"
        )));
    }
    Ok(d)
}

fn reachable_from(p: &Matrix, start: usize, forward: bool) -> Vec<bool> {
    let n = p.rows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            let w = if forward { p[(u, v)] } else { p[(v, u)] };
            if w > 0.0 && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

fn check_irreducible(p: &Matrix) -> Result<()> {
    for (forward, what) in [(true, "reachable from"), (false, "able to reach")] {
        if let Some(s) = reachable_from(p, 0, forward).iter().position(|r| !r) {
            return Err(Error::Reducible(format!("state {s} is not {what} state 0")));
        }
    }
    Ok(())
}

/// Period of an irreducible chain: gcd over edges `u→v` of
/// `level(u) + 1 − level(v)` for BFS levels from state 0.
fn chain_period(p: &Matrix) -> usize {
    let n = p.rows();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if p[(u, v)] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for u in 0..n {
        for v in 0..n {
            if p[(u, v)] > 0.0 {
                let diff = (level[u] + 1).abs_diff(level[v]);
                g = gcd(g, diff);
            }
        }
    }
    g.max(1)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `V^π = (I − γP_π)⁻¹ r_π`.
pub fn exact_value(mdp: &Mdp, policy: &Policy) -> Result<ValueVector> {
    let kernel = policy_kernel(mdp, policy)?;
    let r = policy_reward(mdp, policy)?;
    let n = mdp.num_states();
    let system = Matrix::identity(n).sub(&kernel.matrix().scale(mdp.discount()))?;
    let v = linalg::solve(&system, r.as_slice())?;
    let residual = linalg::norm_inf(&linalg::sub_vec(&system.mat_vec(&v)?, r.as_slice()));
    let scale = linalg::norm_inf(r.as_slice()).max(1.0);
    if residual > 1e-10 * scale {
        return Err(Error::Numeric(format!(
            "value solve residual {residual:e} too large"
        )));
    }
    Ok(ValueVector(v))
}

/// Perturbed Bellman operator `(r_π + γ P_π v) / (1 + η)`; `η = 0` gives
/// the ordinary policy evaluation operator.
pub fn bellman_apply(mdp: &Mdp, policy: &Policy, v: &ValueVector, eta: f64) -> Result<ValueVector> {
    if !(eta >= 0.0) {
        return Err(Error::InvalidModel(format!("eta must be nonnegative, got {eta}")));
    }
    if v.len() != mdp.num_states() {
        return Err(Error::shape(format!(
            "value vector has length {}, MDP has {} states",
            v.len(),
            mdp.num_states()
        )));
    }
    let kernel = policy_kernel(mdp, policy)?;
    let r = policy_reward(mdp, policy)?;
    let pv = kernel.matrix().mat_vec(v.as_slice())?;
    let gamma = mdp.discount();
    Ok(ValueVector(
        r.0.iter()
            .zip(&pv)
            .map(|(ri, pvi)| (ri + gamma * pvi) / (1.0 + eta))
            .collect(),
    ))
}
