//! Solve the smart-grid Riccati equations, then learn the same gains
//! model-free and report when each seed's trace enters the 0.05 band.
//!
//! Usage: cargo run --release -p lq-team --example smart_grid_learning [seeds...]

use lq_team::fixtures::smart_grid;
use lq_team::{run_policy_gradient, solve_deep_riccati, PgHyperparams};

fn main() {
    let seeds: Vec<u64> = std::env::args()
        .skip(1)
        .map(|s| s.parse().expect("seed must be an integer"))
        .collect();
    let seeds = if seeds.is_empty() { vec![1, 2, 3] } else { seeds };

    let model = smart_grid();
    let solution = solve_deep_riccati(&model, 1e-12, 100_000).unwrap();
    println!(
        "riccati reference: theta = {:+.7}, aggregate theta = {:+.7}",
        solution.theta[(0, 0)],
        solution.thetabold[(0, 0)]
    );

    for seed in seeds {
        let hyper = PgHyperparams {
            trajectories: 100,
            horizon: 10,
            smoothing_radius: 0.15,
            step_size: 0.3,
            beta: 1.0,
            iters: 5000,
            seed,
            cost_ceiling: 1e6,
        };
        let trace = run_policy_gradient(
            &model,
            &hyper,
            Some((&solution.theta, &solution.thetabold)),
        )
        .unwrap();
        let hit = trace.first_iteration_within(0.05);
        let last = trace.points.last().unwrap();
        println!(
            "seed {seed:>3}: within 0.05 at iter {:>5}, final theta {:+.4} (dist {:.4}), aggregate {:+.4} (dist {:.4})",
            hit.map(|h| h.to_string()).unwrap_or_else(|| "-".into()),
            last.theta[(0, 0)],
            last.dist_theta.unwrap(),
            last.thetabold[(0, 0)],
            last.dist_thetabold.unwrap(),
        );
    }
}
