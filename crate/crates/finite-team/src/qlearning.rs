//! Tabular Q-learning over (deep state, deterministic local law) pairs.
//!
//! Attention is restricted to deterministic laws, so the Q table is indexed
//! by deep-state rank and law index. Updates consume realized one-step
//! transitions of the full team; the immediate cost is the realized per-agent
//! average cost of the sampled step.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FiniteError, Result};
use crate::kernel::{expected_cost_bounded, joint_deep_kernel_exact_bounded};
use crate::model::{DeepState, FiniteTeamModel, JointDistribution, LocalLaw};
use crate::planning::{value_iteration_dss_bounded, LawGrid};
use crate::simulate::{sample_index, DssStrategy, FiniteStrategy};
use crate::space::DeepStateSpace;

/// Ordered enumeration of all deterministic laws X -> U.
///
/// Law index i maps state x to action (i / |U|^x) mod |U|: state 0 is the
/// least significant digit, so the order is fixed across runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicLawSpace {
    num_states: usize,
    num_actions: usize,
    len: usize,
}

impl DeterministicLawSpace {
    pub fn new(num_states: usize, num_actions: usize) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(FiniteError::InvalidInput(
                "law space needs non-empty alphabets".into(),
            ));
        }
        let len = (num_actions as u128).checked_pow(num_states as u32);
        let len = match len {
            Some(l) if l <= usize::MAX as u128 => l as usize,
            _ => {
                return Err(FiniteError::InvalidInput(format!(
                    "law space size {num_actions}^{num_states} is not representable"
                )))
            }
        };
        Ok(Self {
            num_states,
            num_actions,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn law(&self, index: usize) -> DeterministicLaw {
        assert!(index < self.len, "law index {index} out of range");
        let mut actions = Vec::with_capacity(self.num_states);
        let mut rem = index;
        for _ in 0..self.num_states {
            actions.push(rem % self.num_actions);
            rem /= self.num_actions;
        }
        DeterministicLaw { actions }
    }

    pub fn index_of(&self, law: &DeterministicLaw) -> usize {
        let mut index = 0usize;
        for &u in law.actions.iter().rev() {
            index = index * self.num_actions + u;
        }
        index
    }

    pub fn iter(&self) -> impl Iterator<Item = DeterministicLaw> + '_ {
        (0..self.len).map(|i| self.law(i))
    }
}

/// A mapping X -> U.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicLaw {
    actions: Vec<usize>,
}

impl DeterministicLaw {
    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn action(&self, state: usize) -> usize {
        self.actions[state]
    }

    pub fn to_local_law(&self, num_actions: usize) -> LocalLaw {
        LocalLaw::deterministic(&self.actions, num_actions).expect("actions are in range")
    }
}

/// Learning-rate rule eta(k) as a function of the pair's prior visit count.
///
/// Both families satisfy sum eta = infinity and sum eta^2 < infinity along
/// any pair visited infinitely often.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningSchedule {
    /// eta = 1 / (visits + 1); the first update fully overwrites.
    InverseVisits,
    /// eta = 1 / (visits + 1)^exponent with exponent in (1/2, 1].
    PolynomialVisits { exponent: f64 },
}

impl LearningSchedule {
    pub fn polynomial(exponent: f64) -> Result<Self> {
        if !(exponent > 0.5 && exponent <= 1.0) {
            return Err(FiniteError::InvalidInput(format!(
                "polynomial learning-rate exponent {exponent} outside (1/2, 1]"
            )));
        }
        Ok(LearningSchedule::PolynomialVisits { exponent })
    }

    /// Rate applied at the (prior_visits + 1)-th update of a pair.
    pub fn rate(&self, prior_visits: u64) -> f64 {
        let k = (prior_visits + 1) as f64;
        match self {
            LearningSchedule::InverseVisits => 1.0 / k,
            LearningSchedule::PolynomialVisits { exponent } => k.powf(-exponent),
        }
    }
}

/// Exploration rule used to pick the executed law at each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BehaviorPolicy {
    /// Pick a law uniformly at random every step.
    UniformRandom,
    /// Greedy law with probability 1 - epsilon, uniform otherwise.
    EpsilonGreedy { epsilon: f64 },
}

/// Q values and visit counts over (deep-state rank, law index).
#[derive(Debug, Clone)]
pub struct QTable {
    space: DeepStateSpace,
    laws: DeterministicLawSpace,
    q: Vec<f64>,
    visits: Vec<u64>,
}

impl QTable {
    pub fn zeros(space: DeepStateSpace, laws: DeterministicLawSpace) -> Self {
        let cells = space.len() * laws.len();
        Self {
            space,
            laws,
            q: vec![0.0; cells],
            visits: vec![0; cells],
        }
    }

    pub fn space(&self) -> &DeepStateSpace {
        &self.space
    }

    pub fn laws(&self) -> &DeterministicLawSpace {
        &self.laws
    }

    pub fn value(&self, state_rank: usize, law_index: usize) -> f64 {
        self.q[state_rank * self.laws.len() + law_index]
    }

    pub fn visits(&self, state_rank: usize, law_index: usize) -> u64 {
        self.visits[state_rank * self.laws.len() + law_index]
    }

    fn set(&mut self, state_rank: usize, law_index: usize, value: f64) {
        self.q[state_rank * self.laws.len() + law_index] = value;
    }

    /// Minimizing law index (lowest index on ties) and its value.
    pub fn min_over_laws(&self, state_rank: usize) -> (usize, f64) {
        let row = &self.q[state_rank * self.laws.len()..(state_rank + 1) * self.laws.len()];
        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for (i, &v) in row.iter().enumerate() {
            if v < best {
                best = v;
                best_idx = i;
            }
        }
        (best_idx, best)
    }

    /// Entrywise sup-norm distance to another table of the same shape.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// One Q-learning update from an observed transition.
///
/// Q(d, g) <- (1 - eta) Q(d, g) + eta (cost + beta min_g' Q(d', g')), with
/// eta taken from the schedule at the pair's pre-update visit count. The
/// update is computed in incremental form Q + eta (target - Q), which keeps
/// exact fixed points exactly fixed.
pub fn q_update(
    table: &mut QTable,
    beta: f64,
    state_rank: usize,
    law_index: usize,
    observed_cost: f64,
    next_state_rank: usize,
    schedule: LearningSchedule,
) {
    let eta = schedule.rate(table.visits(state_rank, law_index));
    let (_, next_min) = table.min_over_laws(next_state_rank);
    let target = observed_cost + beta * next_min;
    let old = table.value(state_rank, law_index);
    table.set(state_rank, law_index, old + eta * (target - old));
    table.visits[state_rank * table.laws.len() + law_index] += 1;
}

/// Knobs for a learning run.
#[derive(Debug, Clone)]
pub struct QLearningConfig {
    /// Number of episodes; the team restarts from the initial law between them.
    pub episodes: usize,
    /// Steps per episode.
    pub horizon: usize,
    pub behavior: BehaviorPolicy,
    pub schedule: LearningSchedule,
    pub seed: u64,
    /// Record a trace point every this many updates (0 disables tracing).
    pub trace_every: usize,
}

/// Snapshot along the learning run.
#[derive(Debug, Clone)]
pub struct TracePoint {
    /// Update count at the snapshot.
    pub step: u64,
    /// Sup-norm distance to the reference table, when one was supplied.
    pub sup_error: Option<f64>,
    /// Greedy law index per deep-state rank.
    pub greedy: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct QLearningRun {
    pub table: QTable,
    pub trace: Vec<TracePoint>,
}

/// Run tabular Q-learning on realized one-step team transitions.
pub fn run_q_learning(
    model: &FiniteTeamModel,
    config: &QLearningConfig,
    reference: Option<&QTable>,
) -> Result<QLearningRun> {
    let beta = model.beta();
    if beta >= 1.0 {
        return Err(FiniteError::UnsupportedDiscount { beta });
    }
    if config.episodes == 0 || config.horizon == 0 {
        return Err(FiniteError::InvalidInput(
            "learning needs episodes >= 1 and horizon >= 1".into(),
        ));
    }
    let nx = model.num_states();
    let nu = model.num_actions();
    let space = DeepStateSpace::new(model.n(), nx);
    let laws = DeterministicLawSpace::new(nx, nu)?;
    let mut table = QTable::zeros(space.clone(), laws.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::new();

    let n = model.n() as usize;
    let mut counts = vec![0u32; nx];
    let mut step: u64 = 0;
    for _ in 0..config.episodes {
        sample_counts(model, n, &mut counts, &mut rng);
        for _ in 0..config.horizon {
            let d = DeepState::new(counts.clone()).expect("counts stay consistent");
            let state_rank = space.rank(&d);
            let law_index = match config.behavior {
                BehaviorPolicy::UniformRandom => rng.random_range(0..laws.len()),
                BehaviorPolicy::EpsilonGreedy { epsilon } => {
                    if rng.random::<f64>() < epsilon {
                        rng.random_range(0..laws.len())
                    } else {
                        table.min_over_laws(state_rank).0
                    }
                }
            };
            let law = laws.law(law_index);
            let cost = step_counts(model, &mut counts, &law, &mut rng);
            let d_next = DeepState::new(counts.clone()).expect("counts stay consistent");
            let next_rank = space.rank(&d_next);
            q_update(
                &mut table,
                beta,
                state_rank,
                law_index,
                cost,
                next_rank,
                config.schedule,
            );
            step += 1;
            if config.trace_every > 0 && step.is_multiple_of(config.trace_every as u64) {
                trace.push(snapshot(step, &table, reference));
            }
        }
    }
    if config.trace_every > 0 && trace.last().map(|p| p.step) != Some(step) {
        trace.push(snapshot(step, &table, reference));
    }
    Ok(QLearningRun { table, trace })
}

fn snapshot(step: u64, table: &QTable, reference: Option<&QTable>) -> TracePoint {
    TracePoint {
        step,
        sup_error: reference.map(|r| table.sup_distance(r)),
        greedy: (0..table.space().len())
            .map(|rank| table.min_over_laws(rank).0)
            .collect(),
    }
}

fn sample_counts(model: &FiniteTeamModel, n: usize, counts: &mut [u32], rng: &mut ChaCha8Rng) {
    counts.fill(0);
    for _ in 0..n {
        counts[sample_index(rng, model.initial_law())] += 1;
    }
}

/// Advance the whole team one step under a deterministic law; returns the
/// realized per-agent average cost. Exchangeability lets the simulation work
/// directly on state counts.
fn step_counts(
    model: &FiniteTeamModel,
    counts: &mut [u32],
    law: &DeterministicLaw,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let nx = model.num_states();
    let nu = model.num_actions();
    let n: u32 = counts.iter().sum();
    let mut joint_counts = vec![0u32; nx * nu];
    for (x, &k) in counts.iter().enumerate() {
        joint_counts[x * nu + law.action(x)] = k;
    }
    let realized = JointDistribution::new(joint_counts, nu)
        .expect("joint counts are consistent")
        .to_law();
    let mut cost = 0.0;
    for (x, &k) in counts.iter().enumerate() {
        if k > 0 {
            cost += f64::from(k) * model.cost_value(x, law.action(x), &realized);
        }
    }
    cost /= f64::from(n);

    let snapshot: Vec<u32> = counts.to_vec();
    counts.fill(0);
    let mut probs = vec![0.0f64; nx];
    for (x, &k) in snapshot.iter().enumerate() {
        if k == 0 {
            continue;
        }
        for (x_next, slot) in probs.iter_mut().enumerate() {
            *slot = model.kernel_prob(x_next, x, law.action(x), &realized);
        }
        for _ in 0..k {
            counts[sample_index(rng, &probs)] += 1;
        }
    }
    cost
}

/// Greedy deterministic strategy from a Q table (lowest law index on ties).
pub fn greedy_strategy(table: &QTable) -> FiniteStrategy {
    let laws: Vec<LocalLaw> = (0..table.space().len())
        .map(|rank| {
            let (idx, _) = table.min_over_laws(rank);
            table.laws().law(idx).to_local_law(table.laws().num_actions())
        })
        .collect();
    FiniteStrategy::DeepStateFeedback(DssStrategy::new(table.space().clone(), laws))
}

/// Reference Q function from the exact planner restricted to deterministic
/// laws: Q(d, g) = expected cost + beta E[V(d') | d, g].
pub fn q_star_oracle(model: &FiniteTeamModel) -> Result<QTable> {
    q_star_oracle_bounded(model, crate::kernel::DEFAULT_ENUMERATION_BOUND)
}

pub fn q_star_oracle_bounded(model: &FiniteTeamModel, budget: usize) -> Result<QTable> {
    let nx = model.num_states();
    let nu = model.num_actions();
    let grid = LawGrid::deterministic(nx, nu)?;
    let value_table = value_iteration_dss_bounded(model, &grid, 1e-11, 1_000_000, budget)?;
    let space = DeepStateSpace::new(model.n(), nx);
    let laws = DeterministicLawSpace::new(nx, nu)?;
    let mut table = QTable::zeros(space.clone(), laws.clone());
    for d in space.iter() {
        let rank = space.rank(&d);
        for (law_index, law) in grid.laws().iter().enumerate() {
            let cost = expected_cost_bounded(model, &d, law, budget)?;
            let future: f64 = joint_deep_kernel_exact_bounded(model, &d, law, budget)?
                .into_iter()
                .map(|(ds, p)| p * value_table.value(&ds))
                .sum();
            table.set(rank, law_index, cost + model.beta() * future);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::two_state_flow;
    use approx::assert_abs_diff_eq;

    #[test]
    fn law_space_is_a_bijection() {
        let space = DeterministicLawSpace::new(3, 2).unwrap();
        assert_eq!(space.len(), 8);
        for i in 0..space.len() {
            let law = space.law(i);
            assert_eq!(space.index_of(&law), i);
        }
    }

    #[test]
    fn q_update_arithmetic() {
        let space = DeepStateSpace::new(1, 1);
        let laws = DeterministicLawSpace::new(1, 1).unwrap();
        // Full overwrite on the first visit.
        let mut table = QTable::zeros(space.clone(), laws.clone());
        q_update(&mut table, 0.5, 0, 0, 1.0, 0, LearningSchedule::InverseVisits);
        assert_abs_diff_eq!(table.value(0, 0), 1.0, epsilon = 1e-15);
        assert_eq!(table.visits(0, 0), 1);
        // eta = 1/2 with Q = 2, cost 1, beta 0.5, min next = 2 keeps Q at 2.
        let mut table = QTable::zeros(space.clone(), laws.clone());
        table.set(0, 0, 2.0);
        table.visits[0] = 1;
        q_update(&mut table, 0.5, 0, 0, 1.0, 0, LearningSchedule::InverseVisits);
        assert_abs_diff_eq!(table.value(0, 0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn single_state_geometric_fixed_point() {
        let model = crate::model::FiniteTeamModel::from_tables(
            vec!["s".into()],
            vec!["u".into()],
            1,
            0.5,
            vec![1.0],
            vec![vec![vec![1.0]]],
            vec![vec![1.0]],
        )
        .unwrap();
        let config = QLearningConfig {
            episodes: 100,
            horizon: 1000,
            behavior: BehaviorPolicy::UniformRandom,
            schedule: LearningSchedule::InverseVisits,
            seed: 1,
            trace_every: 0,
        };
        let run = run_q_learning(&model, &config, None).unwrap();
        assert_abs_diff_eq!(run.table.value(0, 0), 2.0, epsilon = 0.02);
    }

    #[test]
    fn zero_cost_model_keeps_q_zero() {
        let model = crate::model::FiniteTeamModel::from_tables(
            vec!["a".into(), "b".into()],
            vec!["u".into(), "v".into()],
            2,
            0.9,
            vec![0.5, 0.5],
            vec![
                vec![vec![0.5, 0.5], vec![0.2, 0.8]],
                vec![vec![0.9, 0.1], vec![0.4, 0.6]],
            ],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let config = QLearningConfig {
            episodes: 20,
            horizon: 50,
            behavior: BehaviorPolicy::UniformRandom,
            schedule: LearningSchedule::InverseVisits,
            seed: 2,
            trace_every: 0,
        };
        let run = run_q_learning(&model, &config, None).unwrap();
        assert_eq!(run.table.max_abs(), 0.0);
    }

    #[test]
    fn flow_reference_values_from_one_step_lookahead() {
        let model = two_state_flow(2, 0.9);
        let q_star = q_star_oracle(&model).unwrap();
        let space = q_star.space().clone();
        let laws = q_star.laws().clone();
        let all_in_a = space.rank(&DeepState::new(vec![2, 0]).unwrap());
        for index in 0..laws.len() {
            let law = laws.law(index);
            let expected = match law.action(0) {
                1 => 1.0,  // drain now, nothing afterwards
                _ => 1.9,  // stay: pay now and face the same state discounted
            };
            assert_abs_diff_eq!(q_star.value(all_in_a, index), expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn greedy_matches_planner_on_flow() {
        let model = two_state_flow(2, 0.9);
        let q_star = q_star_oracle(&model).unwrap();
        let strategy = greedy_strategy(&q_star);
        let FiniteStrategy::DeepStateFeedback(dss) = &strategy else {
            panic!("greedy strategy is deep-state feedback");
        };
        let grid = LawGrid::deterministic(2, 2).unwrap();
        let planner = crate::planning::value_iteration_dss(&model, &grid, 1e-10, 100_000).unwrap();
        for d in q_star.space().iter() {
            let rank = q_star.space().rank(&d);
            assert_eq!(
                dss.laws()[rank].deterministic_action(0),
                planner.policy_law(&d).deterministic_action(0)
            );
        }
    }

    #[test]
    fn tie_break_prefers_lowest_law_index() {
        let space = DeepStateSpace::new(1, 1);
        let laws = DeterministicLawSpace::new(1, 2).unwrap();
        let table = QTable::zeros(space, laws);
        assert_eq!(table.min_over_laws(0).0, 0);
    }

    #[test]
    fn q_stays_bounded_by_cmax_over_one_minus_beta() {
        let model = two_state_flow(3, 0.9);
        let config = QLearningConfig {
            episodes: 200,
            horizon: 20,
            behavior: BehaviorPolicy::UniformRandom,
            schedule: LearningSchedule::InverseVisits,
            seed: 3,
            trace_every: 0,
        };
        let run = run_q_learning(&model, &config, None).unwrap();
        assert!(run.table.max_abs() <= 1.0 / (1.0 - 0.9) + 1e-9);
    }

    #[test]
    fn schedules_diverge_in_sum_and_converge_in_square() {
        for schedule in [
            LearningSchedule::InverseVisits,
            LearningSchedule::polynomial(0.7).unwrap(),
        ] {
            let mut sum = 0.0;
            let mut sq = 0.0;
            let mut sums = Vec::new();
            let mut sqs = Vec::new();
            for k in 0..100_000u64 {
                let eta = schedule.rate(k);
                sum += eta;
                sq += eta * eta;
                if k == 999 || k == 9_999 || k == 99_999 {
                    sums.push(sum);
                    sqs.push(sq);
                }
            }
            // Partial sums keep growing by a non-vanishing amount per decade...
            assert!(sums[1] > sums[0] + 0.5);
            assert!(sums[2] > sums[1] + 0.5);
            // ...while the squared increments contract geometrically.
            let inc1 = sqs[1] - sqs[0];
            let inc2 = sqs[2] - sqs[1];
            assert!(inc2 < 0.5 * inc1);
        }
        assert!(LearningSchedule::polynomial(0.4).is_err());
        assert!(LearningSchedule::polynomial(1.2).is_err());
    }

    #[test]
    fn epsilon_greedy_behavior_still_converges() {
        let model = two_state_flow(2, 0.9).with_initial_law(vec![0.5, 0.5]).unwrap();
        let reference = q_star_oracle(&model).unwrap();
        let config = QLearningConfig {
            episodes: 4000,
            horizon: 10,
            behavior: BehaviorPolicy::EpsilonGreedy { epsilon: 0.3 },
            schedule: LearningSchedule::InverseVisits,
            seed: 11,
            trace_every: 0,
        };
        let run = run_q_learning(&model, &config, Some(&reference)).unwrap();
        assert!(run.table.sup_distance(&reference) <= 0.05);
    }

    #[test]
    fn rejects_undiscounted_learning() {
        let model = two_state_flow(2, 1.0);
        let config = QLearningConfig {
            episodes: 1,
            horizon: 1,
            behavior: BehaviorPolicy::UniformRandom,
            schedule: LearningSchedule::InverseVisits,
            seed: 0,
            trace_every: 0,
        };
        assert!(matches!(
            run_q_learning(&model, &config, None),
            Err(FiniteError::UnsupportedDiscount { .. })
        ));
    }
}
