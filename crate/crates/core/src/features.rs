//! Linear value-function architecture: `V̂ = Φθ`, the stationary-weighted
//! error metric, and the weighted least-squares projection onto span(Φ).

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::mdp::ValueVector;

/// Gram matrices with condition number above this are treated as singular.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Feature matrix Φ, one row `φ(s)ᵀ` per state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: Matrix,
}

impl FeatureMap {
    pub fn new(phi: Matrix) -> Result<Self> {
        if phi.rows() == 0 || phi.cols() == 0 {
            return Err(Error::shape("feature matrix needs at least one state and one feature"));
        }
        if !phi.is_finite() {
            return Err(Error::InvalidModel("feature matrix has non-finite entries".into()));
        }
        Ok(FeatureMap { phi })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        FeatureMap::new(Matrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.phi
    }

    pub fn num_states(&self) -> usize {
        self.phi.rows()
    }

    pub fn dim(&self) -> usize {
        self.phi.cols()
    }

    /// `φ(s)`.
    #[inline]
    pub fn phi(&self, s: usize) -> &[f64] {
        self.phi.row(s)
    }

    pub fn scaled(&self, c: f64) -> FeatureMap {
        FeatureMap {
            phi: self.phi.scale(c),
        }
    }

    /// `ΦᵀDΦ` for the diagonal weights `D`.
    pub fn weighted_gram(&self, weights: &StateWeights) -> Result<Matrix> {
        self.check_states(weights.len())?;
        let d = self.dim();
        let mut g = Matrix::zeros(d, d);
        for (s, &w) in weights.as_slice().iter().enumerate() {
            let row = self.phi(s);
            for i in 0..d {
                for j in 0..d {
                    g[(i, j)] += w * row[i] * row[j];
                }
            }
        }
        Ok(g)
    }

    fn check_states(&self, n: usize) -> Result<()> {
        if n != self.num_states() {
            return Err(Error::shape(format!(
                "feature map covers {} states, got a vector of length {n}",
                self.num_states()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn zeros(d: usize) -> Self {
        WeightVector(vec![0.0; d])
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

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        WeightVector(v)
    }
}

/// Nonnegative per-state weights summing to one (the diagonal of `D_μ`).
#[derive(Debug, Clone, PartialEq)]
pub struct StateWeights(Vec<f64>);

impl StateWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidModel("state weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidModel(format!("state weights sum to {sum}")));
        }
        Ok(StateWeights(weights))
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

/// `Φθ`.
pub fn approx_value(features: &FeatureMap, theta: &WeightVector) -> Result<ValueVector> {
    if theta.len() != features.dim() {
        return Err(Error::shape(format!(
            "weight vector has length {}, feature dimension is {}",
            theta.len(),
            features.dim()
        )));
    }
    Ok(ValueVector(features.matrix().mat_vec(theta.as_slice())?))
}

/// `sqrt(Σ_s w(s) (v_exact(s) − v_approx(s))²)`.
pub fn weighted_rmse(
    v_exact: &ValueVector,
    v_approx: &ValueVector,
    weights: &StateWeights,
) -> Result<f64> {
    if v_exact.len() != v_approx.len() || v_exact.len() != weights.len() {
        return Err(Error::shape(format!(
            "rmse inputs have lengths {}, {}, {}",
            v_exact.len(),
            v_approx.len(),
            weights.len()
        )));
    }
    Ok(weighted_rmse_slices(v_exact.as_slice(), v_approx.as_slice(), weights.as_slice()))
}

#[inline]
pub(crate) fn weighted_rmse_slices(exact: &[f64], approx: &[f64], weights: &[f64]) -> f64 {
    exact
        .iter()
        .zip(approx)
        .zip(weights)
        .map(|((e, a), w)| w * (e - a) * (e - a))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub theta: WeightVector,
    pub values: ValueVector,
}

/// Weighted least-squares projection `Π_D v = Φ(ΦᵀDΦ)⁻¹ΦᵀDv`.
///
/// Fails with [`Error::Rank`] when the Gram matrix is singular or its
/// condition number exceeds [`MAX_GRAM_CONDITION`].
pub fn project(features: &FeatureMap, weights: &StateWeights, v: &ValueVector) -> Result<Projection> {
    features.check_states(v.len())?;
    let gram = features.weighted_gram(weights)?;
    let eig = linalg::symmetric_eigenvalues(&gram)?;
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    if !(lo > 0.0) || hi / lo > MAX_GRAM_CONDITION {
        return Err(Error::Rank(format!(
            "weighted Gram matrix is singular or ill-conditioned (eigenvalues {lo:e} .. {hi:e})"
        )));
    }
    let weighted_v: Vec<f64> = v
        .as_slice()
        .iter()
        .zip(weights.as_slice())
        .map(|(x, w)| x * w)
        .collect();
    let rhs = features.matrix().vec_mat(&weighted_v)?;
    let theta = match linalg::cholesky(&gram) {
        Some(l) => linalg::cholesky_solve(&l, &rhs),
        None => linalg::solve(&gram, &rhs)?,
    };
    let theta = WeightVector(theta);
    let values = approx_value(features, &theta)?;
    Ok(Projection { theta, values })
}
