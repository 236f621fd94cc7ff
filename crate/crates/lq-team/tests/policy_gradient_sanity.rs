//! Statistical sanity of the zeroth-order gradient estimator: averaged over
//! many fresh estimates it must agree in sign with a central finite
//! difference of the smoothed cost, entry by entry, wherever the finite
//! difference is resolved against its own noise.

use nalgebra::DMatrix;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lq_team::fixtures::smart_grid;
use lq_team::policy_gradient::{
    gradient_estimates, rollout_cost, sample_perturbation_with, PerturbedRollout,
};

const RADIUS: f64 = 0.15;
const HORIZON: usize = 5;
const ROLLOUTS_PER_ESTIMATE: usize = 4;
const ESTIMATES: usize = 10_000;

/// Discounted rollout weight used by both the estimator and the oracle.
fn rollout_weight(model: &lq_team::LqTeamModel, theta: f64, thetabold: f64, seed: u64) -> f64 {
    let (costs, _) = rollout_cost(
        model,
        &DMatrix::from_element(1, 1, theta),
        &DMatrix::from_element(1, 1, thetabold),
        HORIZON,
        1e9,
        seed,
    )
    .unwrap();
    costs.iter().sum::<f64>()
}

#[test]
fn estimator_sign_matches_finite_difference() {
    let model = smart_grid();
    let theta = -0.3;
    let thetabold = -0.4;

    // Mean of many fresh zeroth-order estimates at the frozen gain pair.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut grad_sum = 0.0;
    let mut grad_sq = 0.0;
    let mut seed_counter = 0u64;
    for _ in 0..ESTIMATES {
        let mut samples = Vec::with_capacity(ROLLOUTS_PER_ESTIMATE);
        for _ in 0..ROLLOUTS_PER_ESTIMATE {
            let theta_pert = sample_perturbation_with(&mut rng, 1, 1, RADIUS);
            let thetabold_pert = sample_perturbation_with(&mut rng, 1, 1, RADIUS);
            seed_counter += 1;
            let (costs, diverged) = rollout_cost(
                &model,
                &(DMatrix::from_element(1, 1, theta) + &theta_pert),
                &(DMatrix::from_element(1, 1, thetabold) + &thetabold_pert),
                HORIZON,
                1e9,
                seed_counter,
            )
            .unwrap();
            samples.push(PerturbedRollout {
                costs,
                theta_pert,
                thetabold_pert,
                diverged,
            });
        }
        let (g, _) = gradient_estimates(&samples, HORIZON, RADIUS, 1.0).unwrap();
        grad_sum += g[(0, 0)];
        grad_sq += g[(0, 0)] * g[(0, 0)];
    }
    let grad_mean = grad_sum / ESTIMATES as f64;
    let grad_var = grad_sq / ESTIMATES as f64 - grad_mean * grad_mean;
    let grad_se = (grad_var / ESTIMATES as f64).sqrt();

    // Central finite difference of the cost smoothed over the aggregate
    // perturbation and the rollout noise, at theta +- RADIUS.
    let fd_rollouts = 40_000;
    let mut fd_rng = ChaCha8Rng::seed_from_u64(7);
    let mut diffs = Vec::with_capacity(fd_rollouts);
    for r in 0..fd_rollouts {
        let pert = sample_perturbation_with(&mut fd_rng, 1, 1, RADIUS)[(0, 0)];
        // Common random numbers: the same noise stream drives both sides.
        let seed = 1_000_000 + r as u64;
        let plus = rollout_weight(&model, theta + RADIUS, thetabold + pert, seed);
        let minus = rollout_weight(&model, theta - RADIUS, thetabold + pert, seed);
        diffs.push((plus - minus) / (2.0 * RADIUS * HORIZON as f64));
    }
    let fd_mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let fd_var = diffs.iter().map(|d| (d - fd_mean) * (d - fd_mean)).sum::<f64>()
        / (diffs.len() as f64 - 1.0);
    let fd_se = (fd_var / diffs.len() as f64).sqrt();

    assert!(
        fd_mean.abs() > 2.0 * fd_se,
        "finite difference unresolved: {fd_mean} +- {fd_se}"
    );
    assert!(
        grad_mean.abs() > 2.0 * grad_se,
        "estimator mean unresolved: {grad_mean} +- {grad_se}"
    );
    assert_eq!(
        grad_mean.signum(),
        fd_mean.signum(),
        "estimator mean {grad_mean} disagrees in sign with finite difference {fd_mean}"
    );
}
