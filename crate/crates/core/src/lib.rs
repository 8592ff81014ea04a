//! Off-policy policy evaluation with linear function approximation.
//!
//! The centrepiece is perturbed off-policy TD(0), which replaces the
//! coefficient on the current value estimate in the TD error by `1 + η`.
//! For large enough η the mean update matrix is positive definite and the
//! iteration is stable where ordinary off-policy TD(0) diverges.
//!
//! Modules:
//! - [`mdp`]: finite MDPs, policies, kernels, exact values, Bellman operators
//! - [`features`]: linear architecture, weighted RMSE and projection
//! - [`analysis`]: expected update system, positive-definiteness, η bound
//! - [`learners`]: TD(0), perturbed TD(0), ETD(0) and TDC step rules
//! - [`experiments`]: benchmark MDPs and the seeded multi-run harness
//! - [`cli`]: config format, report and CSV emission for the `ptd` binary

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod features;
pub mod learners;
pub mod linalg;
pub mod mdp;

pub use error::{Error, Result};
