//! Mean-update analysis of perturbed off-policy TD(0).
//!
//! The expected update of the perturbed iteration is `θ ← θ + α(b − Aθ)`
//! with
//!
//! ```text
//! A = Φᵀ D_μ ((1+η) I − γ P_π) Φ,     b = Φᵀ D_μ r_π,
//! ```
//!
//! where `D_μ` is the stationary distribution of the behavior chain. The
//! iteration is stable when `A` is positive definite, which holds iff
//! `A + Aᵀ` has a positive smallest eigenvalue. A diagonal-dominance
//! argument on the middle factor gives the sufficient condition
//!
//! ```text
//! η > max_i γ (dᵀP_π)_i / d_i − 1.
//! ```

use crate::error::{Error, Result};
use crate::features::{self, FeatureMap, StateWeights, WeightVector};
use crate::linalg::{self, Matrix};
use crate::mdp::{self, Mdp, Policy};

/// Smallest eigenvalue of `A + Aᵀ` must exceed this for a positive verdict.
pub const PD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedSystem {
    pub a_matrix: Matrix,
    pub b_vector: Vec<f64>,
    pub eta: f64,
    /// Smallest eigenvalue of `A + Aᵀ`.
    pub min_sym_eigenvalue: f64,
}

/// Outcome of the positive-definiteness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdVerdict {
    pub positive_definite: bool,
    pub min_sym_eigenvalue: f64,
}

impl PdVerdict {
    pub fn from_eigenvalue(min_sym_eigenvalue: f64) -> Self {
        PdVerdict {
            positive_definite: min_sym_eigenvalue > PD_TOLERANCE,
            min_sym_eigenvalue,
        }
    }

    /// Within the tolerance band around zero; the predicate reports false.
    pub fn is_indeterminate(&self) -> bool {
        self.min_sym_eigenvalue.abs() <= PD_TOLERANCE
    }

    pub fn label(&self) -> &'static str {
        if self.is_indeterminate() {
            "indeterminate"
        } else if self.positive_definite {
            "true"
        } else {
            "false"
        }
    }
}

/// Stationary distribution of the behavior chain as state weights.
pub fn behavior_weights(mdp: &Mdp, behavior: &Policy) -> Result<StateWeights> {
    let kernel = mdp::policy_kernel(mdp, behavior)?;
    StateWeights::new(mdp::stationary_distribution(&kernel)?)
}

pub fn expected_system(
    mdp: &Mdp,
    target: &Policy,
    behavior: &Policy,
    features: &FeatureMap,
    eta: f64,
) -> Result<ExpectedSystem> {
    let weights = behavior_weights(mdp, behavior)?;
    expected_system_with_weights(mdp, target, &weights, features, eta)
}

/// Same as [`expected_system`] with `D_μ` supplied by the caller.
pub fn expected_system_with_weights(
    mdp: &Mdp,
    target: &Policy,
    weights: &StateWeights,
    features: &FeatureMap,
    eta: f64,
) -> Result<ExpectedSystem> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidModel(format!("eta must be finite and nonnegative, got {eta}")));
    }
    let n = mdp.num_states();
    if features.num_states() != n || weights.len() != n {
        return Err(Error::shape(format!(
            "MDP has {n} states, features cover {}, weights cover {}",
            features.num_states(),
            weights.len()
        )));
    }
    let p_target = mdp::policy_kernel(mdp, target)?;
    let r_target = mdp::policy_reward(mdp, target)?;
    let phi = features.matrix();

    let middle = Matrix::identity(n)
        .scale(1.0 + eta)
        .sub(&p_target.matrix().scale(mdp.discount()))?;
    let d_phi_t = phi.transpose().matmul(&Matrix::from_diagonal(weights.as_slice()))?;
    let a_matrix = d_phi_t.matmul(&middle)?.matmul(phi)?;
    let b_vector = d_phi_t.mat_vec(r_target.as_slice())?;
    if !a_matrix.is_finite() || b_vector.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("expected system has non-finite entries".into()));
    }
    let min_sym_eigenvalue = min_sym_eigenvalue(&a_matrix)?;
    Ok(ExpectedSystem {
        a_matrix,
        b_vector,
        eta,
        min_sym_eigenvalue,
    })
}

/// Smallest eigenvalue of `M + Mᵀ`.
pub fn min_sym_eigenvalue(m: &Matrix) -> Result<f64> {
    let eig = linalg::symmetric_eigenvalues(&m.symmetric_part_doubled()?)?;
    Ok(eig[0])
}

pub fn is_positive_definite(system: &ExpectedSystem) -> PdVerdict {
    PdVerdict::from_eigenvalue(system.min_sym_eigenvalue)
}

/// Positive-definiteness of an arbitrary square matrix through its
/// symmetric part.
pub fn matrix_pd_verdict(m: &Matrix) -> Result<PdVerdict> {
    Ok(PdVerdict::from_eigenvalue(min_sym_eigenvalue(m)?))
}

/// `max(max_i γ (dᵀP_π)_i / d_i − 1, 0)` with `d` the behavior stationary
/// distribution. Any η strictly above this value makes `A` positive
/// definite for every full-column-rank Φ.
pub fn eta_lower_bound(mdp: &Mdp, target: &Policy, behavior: &Policy) -> Result<f64> {
    let weights = behavior_weights(mdp, behavior)?;
    let p_target = mdp::policy_kernel(mdp, target)?;
    let d = weights.as_slice();
    let inflow = p_target.matrix().vec_mat(d)?;
    let worst = inflow
        .iter()
        .zip(d)
        .map(|(flow, di)| mdp.discount() * flow / di)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((worst - 1.0).max(0.0))
}

/// Solves `Aθ* = b`.
pub fn fixed_point(system: &ExpectedSystem) -> Result<WeightVector> {
    let theta = linalg::solve(&system.a_matrix, &system.b_vector)?;
    let ax = system.a_matrix.mat_vec(&theta)?;
    let residual = linalg::norm_inf(&linalg::sub_vec(&system.b_vector, &ax));
    let scale = linalg::norm_inf(&system.b_vector).max(1.0);
    if residual > 1e-10 * scale {
        return Err(Error::Rank(format!(
            "fixed point residual {residual:e} indicates a near-singular A"
        )));
    }
    Ok(WeightVector(theta))
}

/// `‖Φθ − Π_D T^η_π(Φθ)‖∞`; zero exactly at the projected perturbed
/// Bellman fixed point.
pub fn fixed_point_consistency(
    mdp: &Mdp,
    target: &Policy,
    behavior: &Policy,
    features: &FeatureMap,
    eta: f64,
    theta: &WeightVector,
) -> Result<f64> {
    let weights = behavior_weights(mdp, behavior)?;
    let v = features::approx_value(features, theta)?;
    let backed_up = mdp::bellman_apply(mdp, target, &v, eta)?;
    let projected = features::project(features, &weights, &backed_up)?;
    Ok(linalg::norm_inf(&linalg::sub_vec(v.as_slice(), projected.values.as_slice())))
}

/// Weighted RMSE between `V^π` and `Φθ` under the behavior distribution.
pub fn rmse_at(
    mdp: &Mdp,
    target: &Policy,
    behavior: &Policy,
    features: &FeatureMap,
    theta: &WeightVector,
) -> Result<f64> {
    let weights = behavior_weights(mdp, behavior)?;
    let exact = mdp::exact_value(mdp, target)?;
    features::weighted_rmse(&exact, &features::approx_value(features, theta)?, &weights)
}

/// Smallest weighted RMSE attainable in span(Φ): the error of `Π_D V^π`.
pub fn best_rmse(
    mdp: &Mdp,
    target: &Policy,
    behavior: &Policy,
    features: &FeatureMap,
) -> Result<f64> {
    let weights = behavior_weights(mdp, behavior)?;
    let exact = mdp::exact_value(mdp, target)?;
    let proj = features::project(features, &weights, &exact)?;
    features::weighted_rmse(&exact, &proj.values, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta2theta() -> (Mdp, Policy, Policy, FeatureMap) {
        // left -> state 0, right -> state 1, from either state
        let t = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let mdp = Mdp::new(2, 2, t, vec![0.0; 4], 0.9).unwrap();
        let target = Policy::deterministic(2, 2, 1).unwrap();
        let behavior = Policy::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let phi = FeatureMap::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        (mdp, target, behavior, phi)
    }

    #[test]
    fn theta2theta_scalar_a() {
        let (mdp, target, behavior, phi) = theta2theta();
        let s0 = expected_system(&mdp, &target, &behavior, &phi, 0.0).unwrap();
        assert!((s0.a_matrix[(0, 0)] + 0.2).abs() < 1e-12);
        let v0 = is_positive_definite(&s0);
        assert!(!v0.positive_definite);
        assert!((v0.min_sym_eigenvalue + 0.4).abs() < 1e-12);

        let s1 = expected_system(&mdp, &target, &behavior, &phi, 1.0).unwrap();
        assert!((s1.a_matrix[(0, 0)] - 2.3).abs() < 1e-12);
        let v1 = is_positive_definite(&s1);
        assert!(v1.positive_definite);
        assert!((v1.min_sym_eigenvalue - 4.6).abs() < 1e-12);
        assert_eq!(fixed_point(&s1).unwrap().0, vec![0.0]);

        assert!((eta_lower_bound(&mdp, &target, &behavior).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn on_policy_bound_is_zero() {
        let (mdp, _, behavior, _) = theta2theta();
        assert_eq!(eta_lower_bound(&mdp, &behavior, &behavior).unwrap(), 0.0);
    }

    #[test]
    fn verdict_labels() {
        assert_eq!(PdVerdict::from_eigenvalue(1e-13).label(), "indeterminate");
        assert!(!PdVerdict::from_eigenvalue(1e-13).positive_definite);
        assert_eq!(PdVerdict::from_eigenvalue(-1.0).label(), "false");
        assert_eq!(PdVerdict::from_eigenvalue(1.0).label(), "true");
    }

    #[test]
    fn singular_a_has_no_fixed_point() {
        let sys = ExpectedSystem {
            a_matrix: Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(),
            b_vector: vec![1.0, 0.0],
            eta: 0.0,
            min_sym_eigenvalue: 0.0,
        };
        assert!(matches!(fixed_point(&sys), Err(Error::Rank(_))));
    }

    #[test]
    fn negative_eta_rejected() {
        let (mdp, target, behavior, phi) = theta2theta();
        assert!(expected_system(&mdp, &target, &behavior, &phi, -1.0).is_err());
    }
}
