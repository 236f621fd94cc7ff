//! Riccati solutions against independent closed forms, the Monte-Carlo
//! validation of the predicted objective, local optimality of the derived
//! controller, and zero-noise stability of the closed loop.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lq_team::fixtures::{smart_grid, smart_grid_params};
use lq_team::{
    dss_controller, evaluate_controller_cost, riccati_predicted_cost, riccati_residual,
    sample_perturbation, simulate_lq_team, simulate_lq_team_with, solve_deep_riccati,
    DistributionSpec, DssController, FeedbackGains, LqSimOptions, LqTeamModel,
};

/// Closed forms for the scalar smart-grid blocks: the local equation reduces
/// to P^2 = P + 1 and the aggregate one to Pb^2 = 5 Pb + 10.
fn quadratic_oracle() -> (f64, f64, f64, f64) {
    let p = (1.0 + 5.0f64.sqrt()) / 2.0;
    let pb = (5.0 + 65.0f64.sqrt()) / 2.0;
    let theta = -p / (p + 1.0);
    let thetab = -pb / (pb + 2.0);
    (p, pb, theta, thetab)
}

#[test]
fn smart_grid_matches_quadratic_oracle() {
    let model = smart_grid();
    let solution = solve_deep_riccati(&model, 1e-12, 100_000).unwrap();
    let (p, pb, theta, thetab) = quadratic_oracle();
    assert!((solution.p[(0, 0)] - p).abs() <= 1e-8);
    assert!((solution.pbold[(0, 0)] - pb).abs() <= 1e-8);
    assert!((solution.theta[(0, 0)] - theta).abs() <= 1e-8);
    assert!((solution.thetabold[(0, 0)] - thetab).abs() <= 1e-8);
    // Residuals re-evaluated outside the solver loop.
    let agg = model.aggregate_matrices();
    let r_local = riccati_residual(
        &solution.p,
        model.a(),
        model.b(),
        model.q(),
        model.r(),
        model.beta(),
    )
    .unwrap();
    let r_agg = riccati_residual(
        &solution.pbold,
        &agg.abold,
        &agg.bbold,
        &agg.qbold,
        &agg.rbold,
        model.beta(),
    )
    .unwrap();
    assert!(r_local <= 1e-12);
    assert!(r_agg <= 1e-12);
}

#[test]
fn predicted_time_average_cost_matches_monte_carlo() {
    let model = smart_grid();
    let solution = solve_deep_riccati(&model, 1e-12, 100_000).unwrap();
    let predicted = riccati_predicted_cost(&solution, &model).unwrap();
    let controller = dss_controller(&solution, model.alpha());
    let est = evaluate_controller_cost(&model, &controller, 1.0, 2000, 48, 555).unwrap();
    assert!(
        (est.mean - predicted).abs() <= 4.0 * est.std_error + 1e-3,
        "Monte Carlo {} +- {} vs predicted {predicted}",
        est.mean,
        est.std_error
    );
}

#[test]
fn optimal_gains_beat_perturbed_gains() {
    let model = smart_grid();
    let solution = solve_deep_riccati(&model, 1e-12, 100_000).unwrap();
    let horizon = 200;
    let trials = 1000;
    let opt = dss_controller(&solution, model.alpha());
    let j_opt = paired_cost(&model, &opt, horizon, trials);

    let mut worse = 0usize;
    for k in 0..20 {
        let d_theta = sample_perturbation(1, 1, 0.05, 10_000 + k);
        let d_thetab = sample_perturbation(1, 1, 0.05, 20_000 + k);
        let perturbed = DssController::new(
            FeedbackGains::new(
                &solution.theta + d_theta,
                &solution.thetabold + d_thetab,
            ),
            model.alpha().clone(),
        );
        let j_pert = paired_cost(&model, &perturbed, horizon, trials);
        // Paired comparison: mean difference must be significantly >= 0.
        let diffs: Vec<f64> = j_pert.iter().zip(&j_opt).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / (diffs.len() as f64 - 1.0);
        let se = (var / diffs.len() as f64).sqrt();
        assert!(
            mean >= -1.96 * se,
            "perturbed pair {k} significantly beat the Riccati gains: {mean} +- {se}"
        );
        if mean > 1.96 * se {
            worse += 1;
        }
    }
    assert!(worse >= 15, "only {worse}/20 perturbations were significantly worse");
}

fn paired_cost(
    model: &LqTeamModel,
    controller: &dyn lq_team::LqController,
    horizon: usize,
    trials: usize,
) -> Vec<f64> {
    let options = LqSimOptions::default();
    (0..trials)
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(777);
            rng.set_stream(trial as u64 + 1);
            let log =
                simulate_lq_team_with(model, controller, horizon, 777, &options, &mut rng).unwrap();
            log.costs().iter().sum::<f64>() / horizon as f64
        })
        .collect()
}

#[test]
fn zero_noise_closed_loop_decays_geometrically() {
    let mut params = smart_grid_params();
    params.noise = DistributionSpec::point(0.0);
    let model = LqTeamModel::new(params).unwrap();
    let solution = solve_deep_riccati(&model, 1e-12, 100_000).unwrap();
    let controller = dss_controller(&solution, model.alpha());
    let log = simulate_lq_team(&model, &controller, 60, 4).unwrap();
    let norm_at = |t: usize| -> f64 {
        let step = &log.steps[t - 1];
        step.deep_state.norm()
    };
    assert!(norm_at(20) < 1e-6 * norm_at(1).max(1e-12) + 1e-9);
    assert!(norm_at(40) <= norm_at(20));
    // Mean squared state decays as well.
    let state_cost_early = log.steps[0].avg_cost;
    let state_cost_late = log.steps[40].avg_cost;
    assert!(state_cost_late <= 1e-8 * state_cost_early.max(1e-12) + 1e-12);
}

#[test]
fn initial_mean_field_weights_alpha_means() {
    let model = smart_grid();
    let m1 = lq_team::initial_mean_field(&model);
    let alpha_mean: f64 = lq_team::fixtures::smart_grid_alpha().iter().sum::<f64>() / 10.0;
    assert!((m1[0] - alpha_mean * 0.05).abs() <= 1e-12);
}
