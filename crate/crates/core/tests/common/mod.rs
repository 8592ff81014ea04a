#![allow(dead_code)]

use perturbed_td::features::FeatureMap;
use perturbed_td::linalg::Matrix;
use perturbed_td::mdp::{Mdp, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random problem instance with strictly positive transition and policy
/// probabilities, so every induced chain is irreducible and aperiodic.
pub struct Instance {
    pub mdp: Mdp,
    pub target: Policy,
    pub behavior: Policy,
    pub features: FeatureMap,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_distribution<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn random_policy<R: Rng>(states: usize, actions: usize, rng: &mut R) -> Policy {
    let rows: Vec<Vec<f64>> = (0..states).map(|_| random_distribution(actions, rng)).collect();
    Policy::from_rows(&rows).unwrap()
}

pub fn random_mdp<R: Rng>(states: usize, actions: usize, gamma: f64, rng: &mut R) -> Mdp {
    let mut t = Vec::with_capacity(states * actions * states);
    for _ in 0..states * actions {
        t.extend(random_distribution(states, rng));
    }
    let rewards = (0..states * actions).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Mdp::new(states, actions, t, rewards, gamma).unwrap()
}

/// Random features with `d <= states`, full column rank with probability one.
pub fn random_features<R: Rng>(states: usize, d: usize, rng: &mut R) -> FeatureMap {
    let rows: Vec<Vec<f64>> = (0..states)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    FeatureMap::from_rows(&rows).unwrap()
}

pub fn random_instance(seed: u64, max_states: usize, max_actions: usize) -> Instance {
    let mut r = rng(seed);
    let states = r.gen_range(2..=max_states);
    let actions = r.gen_range(1..=max_actions);
    let gamma = r.gen_range(0.1..0.99);
    let d = r.gen_range(1..=states);
    Instance {
        mdp: random_mdp(states, actions, gamma, &mut r),
        target: random_policy(states, actions, &mut r),
        behavior: random_policy(states, actions, &mut r),
        features: random_features(states, d, &mut r),
    }
}

pub fn random_square<R: Rng>(n: usize, rng: &mut R) -> Matrix {
    let data = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_row_major(n, n, data).unwrap()
}

pub fn random_vec<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}
