//! Small ready-made models used across tests and the bundled scenarios.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{CostSpec, FiniteTeamModel, KernelSpec};

/// Two-state drain model: state `b` is absorbing, `move` sends `a` to `b`
/// with certainty, `stay` keeps `a` in place; each step in `a` costs 1.
///
/// The optimal behavior is to move immediately, and the optimal value of a
/// deep state equals its fraction of agents still in `a`.
pub fn two_state_flow(n: u32, beta: f64) -> FiniteTeamModel {
    FiniteTeamModel::from_tables(
        vec!["a".into(), "b".into()],
        vec!["stay".into(), "move".into()],
        n,
        beta,
        vec![1.0, 0.0],
        vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]], // from a: stay keeps, move drains
            vec![vec![0.0, 1.0], vec![0.0, 1.0]], // from b: absorbing
        ],
        vec![vec![1.0, 1.0], vec![0.0, 0.0]],
    )
    .expect("drain model is valid")
}

/// Two-state service model with noisy transitions and a strictly optimal law.
///
/// States (idle, busy), actions (wait, repair). Waiting is free but busy
/// machines stay busy; repairing costs a little and resets busy machines with
/// high probability. Both kernel and cost ignore the joint distribution.
pub fn noisy_service(n: u32, beta: f64) -> FiniteTeamModel {
    FiniteTeamModel::from_tables(
        vec!["idle".into(), "busy".into()],
        vec!["wait".into(), "repair".into()],
        n,
        beta,
        vec![0.5, 0.5],
        vec![
            // idle: waits stay idle mostly; repair keeps idle surely.
            vec![vec![0.8, 0.2], vec![1.0, 0.0]],
            // busy: waiting rarely clears; repair clears with probability 0.9.
            vec![vec![0.1, 0.9], vec![0.9, 0.1]],
        ],
        vec![vec![0.0, 0.3], vec![1.0, 1.2]],
    )
    .expect("service model is valid")
}

/// Seeded random model with dense stochastic kernel and costs in [0, 1].
///
/// Kernel and cost are tables, hence independent of the joint distribution;
/// used to sweep the exact-vs-convolution consistency checks over a family
/// of models rather than one hand-built instance.
pub fn seeded_random_model(
    num_states: usize,
    num_actions: usize,
    n: u32,
    beta: f64,
    seed: u64,
) -> FiniteTeamModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernel = Vec::with_capacity(num_states);
    for _ in 0..num_states {
        let mut per_action = Vec::with_capacity(num_actions);
        for _ in 0..num_actions {
            let raw: Vec<f64> = (0..num_states)
                .map(|_| rng.random_range(0.05..1.0))
                .collect();
            let total: f64 = raw.iter().sum();
            per_action.push(raw.into_iter().map(|v| v / total).collect());
        }
        kernel.push(per_action);
    }
    let cost: Vec<Vec<f64>> = (0..num_states)
        .map(|_| (0..num_actions).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let raw: Vec<f64> = (0..num_states)
        .map(|_| rng.random_range(0.05..1.0))
        .collect();
    let total: f64 = raw.iter().sum();
    let initial: Vec<f64> = raw.into_iter().map(|v| v / total).collect();
    FiniteTeamModel::from_tables(
        (0..num_states).map(|i| format!("s{i}")).collect(),
        (0..num_actions).map(|i| format!("u{i}")).collect(),
        n,
        beta,
        initial,
        kernel,
        cost,
    )
    .expect("random tables are valid")
}

/// Variant of [`two_state_flow`] whose kernel reads the realized joint
/// counts: moving out of `a` succeeds with probability 0.5 + 0.5 D(a, move),
/// a congestion-style feedback. The convolution path evaluates it at the
/// plug-in product law, the exact oracle at each realized count matrix.
pub fn flow_with_joint_kernel(n: u32, beta: f64) -> FiniteTeamModel {
    FiniteTeamModel::new(
        vec!["a".into(), "b".into()],
        vec!["stay".into(), "move".into()],
        n,
        beta,
        vec![1.0, 0.0],
        KernelSpec::Callable {
            f: Arc::new(|x_next, x, u, joint| match (x, u) {
                (0, 0) => {
                    if x_next == 0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                (0, 1) => {
                    let p = 0.5 + 0.5 * joint.prob(0, 1);
                    if x_next == 1 {
                        p
                    } else {
                        1.0 - p
                    }
                }
                _ => {
                    if x_next == 1 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }),
            depends_on_joint: true,
        },
        CostSpec::Table(Arc::new(vec![1.0, 1.0, 0.0, 0.0])),
    )
    .expect("congestion model is valid")
}

/// Variant of [`two_state_flow`] whose cost reads the realized joint counts:
/// c(x, u, D) = D(a, move). Used to exercise the joint-dependent cost path.
pub fn flow_with_joint_cost(n: u32, beta: f64) -> FiniteTeamModel {
    let kernel = vec![
        1.0, 0.0, // a, stay
        0.0, 1.0, // a, move
        0.0, 1.0, // b, stay
        0.0, 1.0, // b, move
    ];
    FiniteTeamModel::new(
        vec!["a".into(), "b".into()],
        vec!["stay".into(), "move".into()],
        n,
        beta,
        vec![1.0, 0.0],
        KernelSpec::Table(Arc::new(kernel)),
        CostSpec::Callable {
            f: Arc::new(|_x, _u, joint| joint.prob(0, 1)),
            depends_on_joint: true,
        },
    )
    .expect("joint-cost model is valid")
}
