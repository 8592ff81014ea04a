//! Exit criteria. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test --test acceptance -- --nocapture --test-threads=1` to see
//! them in order.

mod common;

use std::fs;
use std::time::{Duration, Instant};

use common::*;
use perturbed_td::analysis;
use perturbed_td::cli;
use perturbed_td::experiments::{self, Benchmark, RunConfig, RunLog};
use perturbed_td::features;
use perturbed_td::learners::{self, Algorithm, StepContext, TransitionSample};
use perturbed_td::linalg::{self, Matrix};
use perturbed_td::mdp::{self, ValueVector};
use rand::Rng;

fn verdict(id: &str, title: &str, pass: bool, detail: String) {
    println!("[{}] AC{id} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "AC{id} {title} failed: {detail}");
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn run(bench: &Benchmark, algo: Algorithm, eta: f64, alpha: f64, iters: usize, runs: usize) -> RunLog {
    let cfg = RunConfig::new(algo, eta, alpha, iters, runs).unwrap();
    experiments::run_experiment(bench, &cfg).unwrap()
}

fn fixed_point_rmse(bench: &Benchmark, eta: f64) -> (Vec<f64>, f64) {
    let sys = analysis::expected_system(&bench.mdp, &bench.target, &bench.behavior, &bench.features, eta).unwrap();
    let theta = analysis::fixed_point(&sys).unwrap();
    let rmse = analysis::rmse_at(&bench.mdp, &bench.target, &bench.behavior, &bench.features, &theta).unwrap();
    (theta.0, rmse)
}

#[test]
fn ac01_theta2theta_divergence_and_convergence() {
    let bench = experiments::build_theta_2theta();
    let ((td0, perturbed), elapsed) = timed(|| {
        (
            run(&bench, Algorithm::Td0, 0.0, 0.01, 10_000, 10),
            run(&bench, Algorithm::Perturbed, 1.0, 0.01, 10_000, 10),
        )
    });
    let pass = td0.diverged_count() >= 9 && perturbed.final_mean < 1e-2 && elapsed < Duration::from_secs(1);
    verdict(
        "01",
        "theta2theta TD(0) diverges, perturbed converges",
        pass,
        format!(
            "td0 diverged {}/10, perturbed final mean RMSE {:.3e}, runtime {:?}",
            td0.diverged_count(),
            perturbed.final_mean,
            elapsed
        ),
    );
}

#[test]
fn ac02_theta2theta_analytic_a() {
    let b = experiments::build_theta_2theta();
    let a = |eta| {
        analysis::expected_system(&b.mdp, &b.target, &b.behavior, &b.features, eta).unwrap().a_matrix[(0, 0)]
    };
    let (a0, a1) = (a(0.0), a(1.0));
    let bound = analysis::eta_lower_bound(&b.mdp, &b.target, &b.behavior).unwrap();
    let pass = (a0 + 0.2).abs() <= 1e-12 && (a1 - 2.3).abs() <= 1e-12 && (bound - 0.8).abs() <= 1e-12;
    verdict("02", "theta2theta A and eta bound", pass, format!("A(0)={a0}, A(1)={a1}, bound={bound}"));
}

#[test]
fn ac03_chain3_best_rmse() {
    let b = experiments::build_chain3();
    let best = analysis::best_rmse(&b.mdp, &b.target, &b.behavior, &b.features).unwrap();
    let exact = (3500.0f64 / 539.0).sqrt();
    let pass = (best - 2.548).abs() <= 1e-3 && (best - exact).abs() <= 1e-12;
    verdict("03", "chain3 best achievable RMSE", pass, format!("best={best:.6}, sqrt(3500/539)={exact:.6}"));
}

#[test]
fn ac04_chain3_learning() {
    let b = experiments::build_chain3();
    let (log, elapsed) = timed(|| run(&b, Algorithm::Perturbed, 0.5, 1e-4, 1_000_000, 10));
    let (_, fp) = fixed_point_rmse(&b, 0.5);
    let target = (100.0f64 / 11.0).sqrt();
    let pass = (2.85..=3.10).contains(&log.final_mean)
        && (fp - target).abs() <= 1e-9
        && elapsed < Duration::from_secs(60);
    verdict(
        "04",
        "chain3 perturbed TD(0) learning",
        pass,
        format!(
            "final mean RMSE {:.4} +- {:.4}, fixed-point RMSE {fp:.10}, runtime {elapsed:?}",
            log.final_mean, log.final_std
        ),
    );
}

#[test]
fn ac05_eta_sensitivity() {
    let b = experiments::build_chain3();
    let pd = |eta| {
        let s = analysis::expected_system(&b.mdp, &b.target, &b.behavior, &b.features, eta).unwrap();
        analysis::is_positive_definite(&s).positive_definite
    };
    let verdicts = [pd(0.4), pd(0.5), pd(0.6)];

    let (theta_star, fp_04) = fixed_point_rmse(&b, 0.4);
    let log = run(&b, Algorithm::Perturbed, 0.4, 1e-4, 1_000_000, 10);
    let rmse_far = (log.final_mean - fp_04).abs() > 0.1 * fp_04;
    let star_norm = linalg::norm_inf(&theta_star);
    let theta_far = log.runs.iter().all(|r| {
        linalg::norm_inf(&linalg::sub_vec(r.final_theta.as_slice(), &theta_star)) > 0.1 * star_norm
    });

    let (_, fp_05) = fixed_point_rmse(&b, 0.5);
    let (_, fp_06) = fixed_point_rmse(&b, 0.6);
    let pass = verdicts == [false, true, true] && rmse_far && theta_far && fp_06 > fp_05;
    verdict(
        "05",
        "eta sensitivity on chain3",
        pass,
        format!(
            "pd(0.4,0.5,0.6)={verdicts:?}; eta=0.4 final RMSE {:.3} vs fixed-point {fp_04:.3}, all runs away from theta*: {theta_far}; fp RMSE eta=0.5 {fp_05:.4} < eta=0.6 {fp_06:.4}",
            log.final_mean
        ),
    );
}

#[test]
fn ac06_baird() {
    let b = experiments::build_baird();
    let td0 = run(&b, Algorithm::Td0, 0.0, 1e-4, 1_000_000, 10);

    let bound = analysis::eta_lower_bound(&b.mdp, &b.target, &b.behavior).unwrap();
    let eta = bound + 0.1;
    let log = run(&b, Algorithm::Perturbed, eta, 1e-4, 1_000_000, 10);
    let initial = log.initial_mean();
    let final_ = log.final_mean;
    // downward trend: block means of the mean series never increase
    let blocks: Vec<f64> = log
        .mean
        .chunks(log.mean.len().div_ceil(10))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let monotone = blocks.windows(2).all(|w| w[1] <= w[0] + 1e-9 * initial);
    let pass = td0.diverged_count() == 10 && monotone && final_ < 0.1 * initial && log.diverged_count() == 0;
    verdict(
        "06",
        "Baird star",
        pass,
        format!(
            "td0 diverged {}/10; perturbed eta={eta:.3} (bound {bound:.3}) RMSE {initial:.4} -> {final_:.3e}, block-monotone {monotone}",
            td0.diverged_count()
        ),
    );
}

/// Expected `(A, b)` by enumerating every transition weighted by
/// `d_μ(s) μ(s,a) p(s'|s,a)`.
fn brute_force_system(
    mdp: &mdp::Mdp,
    target: &mdp::Policy,
    behavior: &mdp::Policy,
    features: &features::FeatureMap,
    eta: f64,
) -> (Matrix, Vec<f64>) {
    let weights = analysis::behavior_weights(mdp, behavior).unwrap();
    let ctx = StepContext { features, target, behavior, gamma: mdp.discount() };
    let d = features.dim();
    let mut a = Matrix::zeros(d, d);
    let mut b = vec![0.0; d];
    for s in 0..mdp.num_states() {
        for act in 0..mdp.num_actions() {
            if behavior.prob(s, act) == 0.0 {
                continue;
            }
            for next in 0..mdp.num_states() {
                let w = weights.as_slice()[s] * behavior.prob(s, act) * mdp.transition_prob(s, act, next);
                if w == 0.0 {
                    continue;
                }
                let sample = TransitionSample { state: s, action: act, reward: mdp.reward(s, act), next_state: next };
                let (an, bn) = learners::sample_system(&sample, &ctx, eta).unwrap();
                a = a.add(&an.scale(w)).unwrap();
                for (x, y) in b.iter_mut().zip(&bn) {
                    *x += w * y;
                }
            }
        }
    }
    (a, b)
}

#[test]
fn ac07_expected_update_brute_force() {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut check = |mdp: &mdp::Mdp, t: &mdp::Policy, bpol: &mdp::Policy, f: &features::FeatureMap| {
        for eta in [0.0, 0.5, 2.0] {
            let (a, b) = brute_force_system(mdp, t, bpol, f, eta);
            let sys = analysis::expected_system(mdp, t, bpol, f, eta).unwrap();
            worst = worst
                .max(a.sub(&sys.a_matrix).unwrap().max_abs())
                .max(linalg::norm_inf(&linalg::sub_vec(&b, &sys.b_vector)));
        }
        checked += 1;
    };
    for name in experiments::BENCHMARK_NAMES {
        let bench = Benchmark::by_name(name).unwrap();
        check(&bench.mdp, &bench.target, &bench.behavior, &bench.features);
    }
    for seed in 1000..1050u64 {
        let inst = random_instance(seed, 5, 3);
        check(&inst.mdp, &inst.target, &inst.behavior, &inst.features);
    }
    verdict(
        "07",
        "expected update equals enumerated sample updates",
        worst <= 1e-10 && checked == 53,
        format!("{checked} instances, max deviation {worst:.2e}"),
    );
}

#[test]
fn ac08_eta_bound_and_contraction() {
    let mut failures = Vec::new();
    let mut smallest: f64 = f64::INFINITY;
    for seed in 0..200u64 {
        let inst = random_instance(seed + 5000, 5, 3);
        let bound = analysis::eta_lower_bound(&inst.mdp, &inst.target, &inst.behavior).unwrap();
        let sys = analysis::expected_system(&inst.mdp, &inst.target, &inst.behavior, &inst.features, bound + 1e-6).unwrap();
        let v = analysis::is_positive_definite(&sys);
        smallest = smallest.min(v.min_sym_eigenvalue);
        if !v.positive_definite {
            failures.push(seed);
        }
    }

    let mut r = rng(8);
    let mut worst_ratio: f64 = 0.0;
    for k in 0..1000u64 {
        let inst = random_instance(k + 9000, 6, 3);
        let n = inst.mdp.num_states();
        let eta = r.gen_range(0.0..4.0);
        let v = ValueVector(random_vec(n, 100.0, &mut r));
        let w = ValueVector(random_vec(n, 100.0, &mut r));
        let tv = mdp::bellman_apply(&inst.mdp, &inst.target, &v, eta).unwrap();
        let tw = mdp::bellman_apply(&inst.mdp, &inst.target, &w, eta).unwrap();
        let lhs = linalg::norm_inf(&linalg::sub_vec(&tv.0, &tw.0));
        let rhs = inst.mdp.discount() / (1.0 + eta) * linalg::norm_inf(&linalg::sub_vec(&v.0, &w.0));
        worst_ratio = worst_ratio.max(lhs / rhs);
    }
    let pass = failures.is_empty() && worst_ratio <= 1.0 + 1e-12;
    verdict(
        "08",
        "eta bound guarantees PD; perturbed Bellman contraction",
        pass,
        format!(
            "PD failures {failures:?} (min eigenvalue {smallest:.3e}); max ||T v - T w|| / (gamma/(1+eta) ||v-w||) = {worst_ratio:.12}"
        ),
    );
}

#[test]
fn ac09_projected_fixed_point() {
    let mut residuals = Vec::new();
    for (bench, eta) in [(experiments::build_chain3(), 0.5), (experiments::build_theta_2theta(), 1.0)] {
        let sys = analysis::expected_system(&bench.mdp, &bench.target, &bench.behavior, &bench.features, eta).unwrap();
        let theta = analysis::fixed_point(&sys).unwrap();
        let res = analysis::fixed_point_consistency(&bench.mdp, &bench.target, &bench.behavior, &bench.features, eta, &theta).unwrap();
        residuals.push((bench.name.clone(), res));
    }
    let pass = residuals.iter().all(|(_, r)| *r <= 1e-9);
    verdict("09", "projected perturbed Bellman fixed point", pass, format!("{residuals:?}"));
}

#[test]
fn ac10_run_determinism() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for (env, algo) in [("theta2theta", "td0"), ("chain3", "perturbed"), ("baird", "tdc")] {
        let mut outputs = Vec::new();
        for dir in &dirs {
            let out = dir.path().join(format!("{env}-{algo}"));
            let args = [
                "ptd", "run", "--env", env, "--algo", algo, "--eta", "0.5", "--alpha", "0.001",
                "--iters", "50000", "--runs", "4", "--seed", "3", "--out", out.to_str().unwrap(),
            ];
            let code = cli::main_with_args(args, &mut std::io::sink(), &mut std::io::sink());
            assert_eq!(code, cli::EXIT_OK);
            outputs.push(fs::read(out.join("trajectory.csv")).unwrap());
        }
        files.push((env, outputs[0] == outputs[1] && !outputs[0].is_empty()));
    }
    let pass = files.iter().all(|(_, same)| *same);
    verdict("10", "byte-identical trajectory.csv across invocations", pass, format!("{files:?}"));
}
