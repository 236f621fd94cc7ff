//! Sample-path simulation of finite teams and Monte-Carlo cost evaluation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FiniteError, Result};
use crate::model::{DeepState, FiniteTeamModel, JointDistribution, LocalLaw};
use crate::planning::{mean_field_step, MeanField, QuantizedValueTable};
use crate::space::DeepStateSpace;

/// Draw an index from a probability vector with a single uniform variate.
pub(crate) fn sample_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let draw: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Deep-state feedback table: one local law per deep-state rank.
#[derive(Debug, Clone)]
pub struct DssStrategy {
    space: DeepStateSpace,
    laws: Vec<LocalLaw>,
}

impl DssStrategy {
    pub fn new(space: DeepStateSpace, laws: Vec<LocalLaw>) -> Self {
        assert_eq!(space.len(), laws.len(), "one law per deep state");
        Self { space, laws }
    }

    pub fn law_for(&self, d: &DeepState) -> &LocalLaw {
        &self.laws[self.space.rank(d)]
    }

    pub fn space(&self) -> &DeepStateSpace {
        &self.space
    }

    pub fn laws(&self) -> &[LocalLaw] {
        &self.laws
    }
}

/// Open-loop mean-field strategy: the executed law at step t is the quantized
/// policy at the predicted mean field, which itself propagates unprojected.
#[derive(Debug, Clone)]
pub struct NsStrategy {
    table: QuantizedValueTable,
    initial: MeanField,
}

impl NsStrategy {
    pub fn new(table: QuantizedValueTable, initial: MeanField) -> Self {
        Self { table, initial }
    }

    pub fn table(&self) -> &QuantizedValueTable {
        &self.table
    }

    pub fn initial(&self) -> &MeanField {
        &self.initial
    }
}

/// A team strategy a simulator can execute.
#[derive(Debug, Clone)]
pub enum FiniteStrategy {
    /// Every agent draws from the stored law at the realized deep state.
    DeepStateFeedback(DssStrategy),
    /// Every agent draws from the policy at the predicted mean field.
    MeanFieldOpenLoop(NsStrategy),
    /// Fixed law sequence; the last law repeats past the end.
    FixedSequence(Vec<LocalLaw>),
}

impl FiniteStrategy {
    pub fn kind(&self) -> &'static str {
        match self {
            FiniteStrategy::DeepStateFeedback(_) => "deep-state-feedback",
            FiniteStrategy::MeanFieldOpenLoop(_) => "mean-field-open-loop",
            FiniteStrategy::FixedSequence(_) => "fixed-sequence",
        }
    }
}

/// Per-trajectory cursor for strategies with internal prediction state.
struct StrategyCursor {
    mean_field: Option<MeanField>,
}

fn init_cursor(strategy: &FiniteStrategy) -> StrategyCursor {
    StrategyCursor {
        mean_field: match strategy {
            FiniteStrategy::MeanFieldOpenLoop(ns) => Some(ns.initial().clone()),
            _ => None,
        },
    }
}

fn law_for_step(
    strategy: &FiniteStrategy,
    t: usize,
    d: &DeepState,
    cursor: &StrategyCursor,
) -> LocalLaw {
    match strategy {
        FiniteStrategy::DeepStateFeedback(dss) => dss.law_for(d).clone(),
        FiniteStrategy::MeanFieldOpenLoop(ns) => {
            let m = cursor.mean_field.as_ref().expect("mean-field cursor present");
            ns.table().policy_at(m).clone()
        }
        FiniteStrategy::FixedSequence(laws) => laws[(t - 1).min(laws.len() - 1)].clone(),
    }
}

fn advance_cursor(
    strategy: &FiniteStrategy,
    model: &FiniteTeamModel,
    law: &LocalLaw,
    cursor: &mut StrategyCursor,
) {
    if let FiniteStrategy::MeanFieldOpenLoop(_) = strategy {
        let m = cursor.mean_field.take().expect("mean-field cursor present");
        cursor.mean_field = Some(mean_field_step(model, &m, law));
    }
}

/// One recorded simulation step.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    /// 1-based time index.
    pub t: usize,
    pub deep_state: DeepState,
    /// Realized per-agent average cost of this step.
    pub avg_cost: f64,
    pub agent_states: Vec<usize>,
    pub agent_actions: Vec<usize>,
}

/// A full sample path.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub seed: u64,
    pub strategy: String,
    pub steps: Vec<TrajectoryStep>,
}

fn step_team(
    model: &FiniteTeamModel,
    states: &mut [usize],
    law: &LocalLaw,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, f64) {
    let n = states.len();
    let nu = model.num_actions();
    let mut actions = vec![0usize; n];
    let mut joint_counts = vec![0u32; model.num_states() * nu];
    for (i, &x) in states.iter().enumerate() {
        let u = sample_index(rng, law.row(x));
        actions[i] = u;
        joint_counts[x * nu + u] += 1;
    }
    let realized = JointDistribution::new(joint_counts, nu)
        .expect("realized joint counts are consistent")
        .to_law();
    let mut cost = 0.0;
    for (i, &x) in states.iter().enumerate() {
        cost += model.cost_value(x, actions[i], &realized);
    }
    cost /= n as f64;
    let nx = model.num_states();
    let mut probs = vec![0.0f64; nx];
    for (i, x) in states.iter_mut().enumerate() {
        for (x_next, slot) in probs.iter_mut().enumerate() {
            *slot = model.kernel_prob(x_next, *x, actions[i], &realized);
        }
        *x = sample_index(rng, &probs);
    }
    (actions, cost)
}

fn run_path(
    model: &FiniteTeamModel,
    strategy: &FiniteStrategy,
    horizon: usize,
    rng: &mut ChaCha8Rng,
    mut on_step: impl FnMut(usize, &[usize], &[usize], &DeepState, f64),
) {
    let n = model.n() as usize;
    let mut states: Vec<usize> = (0..n)
        .map(|_| sample_index(rng, model.initial_law()))
        .collect();
    let mut cursor = init_cursor(strategy);
    for t in 1..=horizon {
        let d = crate::model::empirical_from_profile(&states, model.num_states())
            .expect("profile states stay in the alphabet");
        let law = law_for_step(strategy, t, &d, &cursor);
        let pre_states = states.clone();
        let (actions, cost) = step_team(model, &mut states, &law, rng);
        on_step(t, &pre_states, &actions, &d, cost);
        advance_cursor(strategy, model, &law, &mut cursor);
    }
}

/// Simulate `horizon` steps of the n-agent team under `strategy`.
///
/// Deterministic for a fixed seed: agents are visited in index order and all
/// randomness flows through one counter-based generator.
pub fn simulate_finite_team(
    model: &FiniteTeamModel,
    strategy: &FiniteStrategy,
    horizon: usize,
    seed: u64,
) -> TrajectoryLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(horizon);
    run_path(model, strategy, horizon, &mut rng, |t, states, actions, d, cost| {
        steps.push(TrajectoryStep {
            t,
            deep_state: d.clone(),
            avg_cost: cost,
            agent_states: states.to_vec(),
            agent_actions: actions.to_vec(),
        });
    });
    TrajectoryLog {
        seed,
        strategy: strategy.kind().to_string(),
        steps,
    }
}

/// Monte-Carlo estimate of a strategy's objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Objective value of one realized cost sequence: the (1-beta)-normalized
/// truncated discounted sum for beta < 1, the plain time average for beta = 1.
pub fn objective_from_costs(costs: &[f64], beta: f64) -> f64 {
    if beta < 1.0 {
        let mut disc = 1.0;
        let mut total = 0.0;
        for &c in costs {
            total += disc * c;
            disc *= beta;
        }
        (1.0 - beta) * total
    } else {
        costs.iter().sum::<f64>() / costs.len() as f64
    }
}

/// Estimate the per-agent objective by independent simulation trials.
///
/// Trial r uses stream r of the seeded generator, so estimates are
/// reproducible and trials are independent of scheduling.
pub fn evaluate_strategy_cost(
    model: &FiniteTeamModel,
    strategy: &FiniteStrategy,
    beta: f64,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<CostEstimate> {
    if horizon == 0 || trials == 0 {
        return Err(FiniteError::InvalidInput(
            "evaluation needs horizon >= 1 and trials >= 1".into(),
        ));
    }
    if !(0.0 < beta && beta <= 1.0) {
        return Err(FiniteError::InvalidInput(format!(
            "objective discount {beta} outside (0, 1]"
        )));
    }
    let mut samples = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);
        let mut costs = Vec::with_capacity(horizon);
        run_path(model, strategy, horizon, &mut rng, |_, _, _, _, c| costs.push(c));
        samples.push(objective_from_costs(&costs, beta));
    }
    let mean = samples.iter().sum::<f64>() / trials as f64;
    let std_error = if trials > 1 {
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / (trials as f64 - 1.0);
        (var / trials as f64).sqrt()
    } else {
        0.0
    };
    Ok(CostEstimate { mean, std_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::two_state_flow;
    use crate::planning::{extract_dss_strategy, value_iteration_dss, LawGrid};
    use approx::assert_abs_diff_eq;

    fn optimal_flow_strategy(n: u32) -> FiniteStrategy {
        let model = two_state_flow(n, 0.9);
        let grid = LawGrid::deterministic(2, 2).unwrap();
        let table = value_iteration_dss(&model, &grid, 1e-10, 100_000).unwrap();
        extract_dss_strategy(&table)
    }

    #[test]
    fn optimal_flow_costs_are_one_then_zero() {
        let model = two_state_flow(4, 0.9);
        let strategy = optimal_flow_strategy(4);
        let log = simulate_finite_team(&model, &strategy, 6, 42);
        let costs: Vec<f64> = log.steps.iter().map(|s| s.avg_cost).collect();
        assert_abs_diff_eq!(costs[0], 1.0, epsilon = 1e-15);
        for c in &costs[1..] {
            assert_abs_diff_eq!(*c, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn deterministic_model_ignores_seed() {
        let model = two_state_flow(3, 0.9);
        let strategy = optimal_flow_strategy(3);
        let a = simulate_finite_team(&model, &strategy, 5, 1);
        let b = simulate_finite_team(&model, &strategy, 5, 2);
        for (sa, sb) in a.steps.iter().zip(&b.steps) {
            assert_eq!(sa.deep_state, sb.deep_state);
            assert_eq!(sa.avg_cost, sb.avg_cost);
        }
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let model = crate::fixtures::noisy_service(5, 0.9);
        let law = LocalLaw::new(vec![vec![0.5, 0.5], vec![0.3, 0.7]]).unwrap();
        let strategy = FiniteStrategy::FixedSequence(vec![law]);
        let a = simulate_finite_team(&model, &strategy, 50, 7);
        let b = simulate_finite_team(&model, &strategy, 50, 7);
        for (sa, sb) in a.steps.iter().zip(&b.steps) {
            assert_eq!(sa.agent_states, sb.agent_states);
            assert_eq!(sa.agent_actions, sb.agent_actions);
            assert!(sa.avg_cost == sb.avg_cost);
        }
    }

    #[test]
    fn single_agent_reduces_to_mdp_path() {
        let model = two_state_flow(1, 0.9);
        let strategy = optimal_flow_strategy(1);
        let log = simulate_finite_team(&model, &strategy, 3, 9);
        assert_eq!(log.steps[0].deep_state.counts(), &[1, 0]);
        assert_eq!(log.steps[1].deep_state.counts(), &[0, 1]);
        assert_eq!(log.steps[0].agent_states.len(), 1);
    }

    #[test]
    fn discounted_objective_of_flow_optimum() {
        let model = two_state_flow(2, 0.9);
        let strategy = optimal_flow_strategy(2);
        let est = evaluate_strategy_cost(&model, &strategy, 0.9, 400, 3, 11).unwrap();
        assert_abs_diff_eq!(est.mean, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(est.std_error, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn time_average_of_constant_cost_is_one() {
        // Staying forever keeps every agent in a at cost 1 per step.
        let model = two_state_flow(2, 1.0);
        let stay = LocalLaw::deterministic(&[0, 0], 2).unwrap();
        let strategy = FiniteStrategy::FixedSequence(vec![stay]);
        let est = evaluate_strategy_cost(&model, &strategy, 1.0, 50, 2, 3).unwrap();
        assert_abs_diff_eq!(est.mean, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn evaluation_validates_inputs() {
        let model = two_state_flow(2, 0.9);
        let strategy = optimal_flow_strategy(2);
        assert!(evaluate_strategy_cost(&model, &strategy, 0.9, 0, 1, 0).is_err());
        assert!(evaluate_strategy_cost(&model, &strategy, 1.5, 10, 1, 0).is_err());
    }
}
