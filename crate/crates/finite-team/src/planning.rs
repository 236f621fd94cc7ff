//! Dynamic programming over deep states and over the quantized simplex.
//!
//! The exact planner runs value iteration on the space of count vectors,
//! minimizing over a finite grid of local laws and using the brute-force
//! joint deep-state kernel for expectations. The mean-field planner replaces
//! count vectors by simplex points on a 1/q grid with deterministic
//! mean-field dynamics and nearest-point projection.

use crate::error::{FiniteError, Result};
use crate::kernel::{
    expected_cost_bounded, joint_deep_kernel_exact_bounded, DEFAULT_ENUMERATION_BOUND,
};
use crate::model::{DeepState, FiniteTeamModel, JointLaw, LocalLaw, PROB_TOL};
use crate::qlearning::DeterministicLawSpace;
use crate::simulate::{DssStrategy, FiniteStrategy, NsStrategy};
use crate::space::DeepStateSpace;

/// Finite set of local laws the Bellman minimization ranges over.
///
/// The default grid holds every deterministic law (|U|^|X| of them, in the
/// index order of [`DeterministicLawSpace`]); the mixed grid refines it with
/// per-state action distributions on a step-1/q probability grid.
#[derive(Debug, Clone)]
pub struct LawGrid {
    laws: Vec<LocalLaw>,
}

impl LawGrid {
    pub fn deterministic(num_states: usize, num_actions: usize) -> Result<Self> {
        let space = DeterministicLawSpace::new(num_states, num_actions)?;
        let laws = (0..space.len())
            .map(|i| space.law(i).to_local_law(num_actions))
            .collect();
        Ok(Self { laws })
    }

    /// All laws whose per-state rows have entries in {0, 1/q, …, 1}.
    pub fn mixed(num_states: usize, num_actions: usize, q: u32) -> Result<Self> {
        if q == 0 {
            return Err(FiniteError::InvalidInput(
                "law grid step parameter must be positive".into(),
            ));
        }
        let rows: Vec<Vec<f64>> = DeepStateSpace::new(q, num_actions)
            .iter()
            .map(|c| c.counts().iter().map(|&k| f64::from(k) / f64::from(q)).collect())
            .collect();
        let mut laws = Vec::new();
        let mut picks = vec![0usize; num_states];
        loop {
            let law_rows: Vec<Vec<f64>> = picks.iter().map(|&i| rows[i].clone()).collect();
            laws.push(LocalLaw::new(law_rows)?);
            // Mixed-radix increment with state 0 as the least significant digit.
            let mut carry = true;
            for p in picks.iter_mut() {
                if carry {
                    *p += 1;
                    if *p == rows.len() {
                        *p = 0;
                    } else {
                        carry = false;
                    }
                }
            }
            if carry {
                break;
            }
        }
        Ok(Self { laws })
    }

    pub fn from_laws(laws: Vec<LocalLaw>) -> Result<Self> {
        if laws.is_empty() {
            return Err(FiniteError::InvalidInput("law grid must be non-empty".into()));
        }
        Ok(Self { laws })
    }

    pub fn laws(&self) -> &[LocalLaw] {
        &self.laws
    }

    pub fn len(&self) -> usize {
        self.laws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }
}

/// Converged value function and minimizing law per deep state.
#[derive(Debug, Clone)]
pub struct ValueTable {
    space: DeepStateSpace,
    values: Vec<f64>,
    policy_indices: Vec<usize>,
    policy: Vec<LocalLaw>,
    iterations: usize,
}

impl ValueTable {
    pub fn space(&self) -> &DeepStateSpace {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, d: &DeepState) -> f64 {
        self.values[self.space.rank(d)]
    }

    pub fn policy_law(&self, d: &DeepState) -> &LocalLaw {
        &self.policy[self.space.rank(d)]
    }

    pub fn policy_laws(&self) -> &[LocalLaw] {
        &self.policy
    }

    /// Index of the minimizing law in the grid the table was solved with.
    pub fn policy_indices(&self) -> &[usize] {
        &self.policy_indices
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Per-(deep state, law) one-step data: expected cost and next-state law.
struct DssBackup {
    costs: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
}

fn precompute_dss(
    model: &FiniteTeamModel,
    space: &DeepStateSpace,
    grid: &LawGrid,
    budget: usize,
) -> Result<DssBackup> {
    let mut costs = Vec::with_capacity(space.len());
    let mut transitions = Vec::with_capacity(space.len());
    for d in space.iter() {
        let mut row_costs = Vec::with_capacity(grid.len());
        let mut row_trans = Vec::with_capacity(grid.len());
        for law in grid.laws() {
            row_costs.push(expected_cost_bounded(model, &d, law, budget)?);
            let next = joint_deep_kernel_exact_bounded(model, &d, law, budget)?;
            row_trans.push(
                next.into_iter()
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(ds, p)| (space.rank(&ds), p))
                    .collect::<Vec<_>>(),
            );
        }
        costs.push(row_costs);
        transitions.push(row_trans);
    }
    Ok(DssBackup { costs, transitions })
}

/// Exact value iteration over deep states for a discounted objective.
///
/// Stops once the sup-norm gap between sweeps is at most tol (1 - beta) / beta,
/// which bounds the value error by tol. Ties between laws go to the lowest
/// grid index.
pub fn value_iteration_dss(
    model: &FiniteTeamModel,
    grid: &LawGrid,
    tol: f64,
    max_iter: usize,
) -> Result<ValueTable> {
    value_iteration_dss_bounded(model, grid, tol, max_iter, DEFAULT_ENUMERATION_BOUND)
}

pub fn value_iteration_dss_bounded(
    model: &FiniteTeamModel,
    grid: &LawGrid,
    tol: f64,
    max_iter: usize,
    budget: usize,
) -> Result<ValueTable> {
    let beta = model.beta();
    if beta >= 1.0 {
        return Err(FiniteError::UnsupportedDiscount { beta });
    }
    if grid.is_empty() {
        return Err(FiniteError::InvalidInput("law grid must be non-empty".into()));
    }
    let space = DeepStateSpace::new(model.n(), model.num_states());
    let backup = precompute_dss(model, &space, grid, budget)?;

    let stop_gap = tol * (1.0 - beta) / beta;
    let mut values = vec![0.0f64; space.len()];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let (next, _) = sweep(&backup, &values, beta);
        gap = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        iterations += 1;
        if gap <= stop_gap {
            let (_, argmin) = sweep(&backup, &values, beta);
            let policy: Vec<LocalLaw> =
                argmin.iter().map(|&i| grid.laws()[i].clone()).collect();
            return Ok(ValueTable {
                space,
                values,
                policy_indices: argmin,
                policy,
                iterations,
            });
        }
    }
    Err(FiniteError::NoConvergence {
        iterations,
        gap,
    })
}

fn sweep(backup: &DssBackup, values: &[f64], beta: f64) -> (Vec<f64>, Vec<usize>) {
    let mut next = Vec::with_capacity(values.len());
    let mut argmin = Vec::with_capacity(values.len());
    for rank in 0..values.len() {
        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for (law_idx, cost) in backup.costs[rank].iter().enumerate() {
            let future: f64 = backup.transitions[rank][law_idx]
                .iter()
                .map(|&(r, p)| p * values[r])
                .sum();
            let q = cost + beta * future;
            if q < best {
                best = q;
                best_idx = law_idx;
            }
        }
        next.push(best);
        argmin.push(best_idx);
    }
    (next, argmin)
}

/// Deep-state feedback strategy from a converged table: every agent draws its
/// action from the stored minimizing law evaluated at its own state.
pub fn extract_dss_strategy(table: &ValueTable) -> FiniteStrategy {
    FiniteStrategy::DeepStateFeedback(DssStrategy::new(
        table.space.clone(),
        table.policy.clone(),
    ))
}

/// Point on the probability simplex over the state alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    probs: Vec<f64>,
}

impl MeanField {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || (sum - 1.0).abs() > PROB_TOL || probs.iter().any(|&p| p < 0.0) {
            return Err(FiniteError::InvalidInput(format!(
                "mean field must be a probability vector, got sum {sum}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub(crate) fn joint_with(&self, law: &LocalLaw) -> JointLaw {
        JointLaw::plug_in(&self.probs, law)
    }
}

/// One deterministic mean-field step: m'(x') = sum_{x,u} m(x) gamma(x)(u) P(x'|x,u,M)
/// with M the plug-in joint law m(x) gamma(x)(u).
pub fn mean_field_step(model: &FiniteTeamModel, m: &MeanField, law: &LocalLaw) -> MeanField {
    let joint = m.joint_with(law);
    let nx = model.num_states();
    let nu = model.num_actions();
    let mut next = vec![0.0f64; nx];
    for x in 0..nx {
        let mx = m.probs[x];
        if mx == 0.0 {
            continue;
        }
        for u in 0..nu {
            let w = mx * law.prob(x, u);
            if w == 0.0 {
                continue;
            }
            for (x_next, slot) in next.iter_mut().enumerate() {
                *slot += w * model.kernel_prob(x_next, x, u, &joint);
            }
        }
    }
    // Renormalize to absorb kernel-row rounding.
    let total: f64 = next.iter().sum();
    if total > 0.0 {
        for p in next.iter_mut() {
            *p /= total;
        }
    }
    MeanField { probs: next }
}

/// Expected per-agent cost of one mean-field step.
pub fn mean_field_cost(model: &FiniteTeamModel, m: &MeanField, law: &LocalLaw) -> f64 {
    let joint = m.joint_with(law);
    let mut total = 0.0;
    for x in 0..model.num_states() {
        let mx = m.probs[x];
        if mx == 0.0 {
            continue;
        }
        for u in 0..model.num_actions() {
            let w = mx * law.prob(x, u);
            if w > 0.0 {
                total += w * model.cost_value(x, u, &joint);
            }
        }
    }
    total
}

/// Value function and minimizing laws on the 1/q-quantized simplex.
#[derive(Debug, Clone)]
pub struct QuantizedValueTable {
    q: u32,
    space: DeepStateSpace,
    grid_points: Vec<MeanField>,
    values: Vec<f64>,
    policy_indices: Vec<usize>,
    policy: Vec<LocalLaw>,
    iterations: usize,
}

impl QuantizedValueTable {
    pub fn quantization(&self) -> u32 {
        self.q
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid_point(&self, rank: usize) -> &MeanField {
        &self.grid_points[rank]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn policy_laws(&self) -> &[LocalLaw] {
        &self.policy
    }

    pub fn policy_indices(&self) -> &[usize] {
        &self.policy_indices
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Law stored at the grid point nearest to `m`.
    pub fn policy_at(&self, m: &MeanField) -> &LocalLaw {
        &self.policy[self.project(m)]
    }

    pub fn value_at(&self, m: &MeanField) -> f64 {
        self.values[self.project(m)]
    }

    /// Nearest grid point in Euclidean distance; exact ties go to the
    /// lexicographically smallest count vector.
    pub fn project(&self, m: &MeanField) -> usize {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        let mut best_counts: Option<DeepState> = None;
        for (rank, point) in self.grid_points.iter().enumerate() {
            let d2: f64 = point
                .probs
                .iter()
                .zip(&m.probs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let counts = self.space.unrank(rank);
            let better = d2 < best_d2
                || (d2 == best_d2
                    && best_counts
                        .as_ref()
                        .is_some_and(|bc| counts.counts() < bc.counts()));
            if better {
                best = rank;
                best_d2 = d2;
                best_counts = Some(counts);
            }
        }
        best
    }
}

/// Value iteration for the mean-field Bellman equation on the 1/q grid, with
/// nearest-grid-point projection of the deterministic dynamics.
pub fn value_iteration_ns(
    model: &FiniteTeamModel,
    q: u32,
    grid: &LawGrid,
    tol: f64,
    max_iter: usize,
) -> Result<QuantizedValueTable> {
    let beta = model.beta();
    if beta >= 1.0 {
        return Err(FiniteError::UnsupportedDiscount { beta });
    }
    if q == 0 {
        return Err(FiniteError::InvalidInput("quantization level must be positive".into()));
    }
    if grid.is_empty() {
        return Err(FiniteError::InvalidInput("law grid must be non-empty".into()));
    }
    let space = DeepStateSpace::new(q, model.num_states());
    let grid_points: Vec<MeanField> = space
        .iter()
        .map(|c| MeanField {
            probs: c.counts().iter().map(|&k| f64::from(k) / f64::from(q)).collect(),
        })
        .collect();

    // Projection shell used while precomputing successor ranks.
    let shell = QuantizedValueTable {
        q,
        space: space.clone(),
        grid_points: grid_points.clone(),
        values: vec![0.0; grid_points.len()],
        policy_indices: vec![0; grid_points.len()],
        policy: vec![grid.laws()[0].clone(); grid_points.len()],
        iterations: 0,
    };
    let mut costs = Vec::with_capacity(grid_points.len());
    let mut successors = Vec::with_capacity(grid_points.len());
    for point in &grid_points {
        let mut row_costs = Vec::with_capacity(grid.len());
        let mut row_succ = Vec::with_capacity(grid.len());
        for law in grid.laws() {
            row_costs.push(mean_field_cost(model, point, law));
            row_succ.push(shell.project(&mean_field_step(model, point, law)));
        }
        costs.push(row_costs);
        successors.push(row_succ);
    }

    let stop_gap = tol * (1.0 - beta) / beta;
    let mut values = vec![0.0f64; grid_points.len()];
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        let mut next = Vec::with_capacity(values.len());
        for rank in 0..values.len() {
            let best = costs[rank]
                .iter()
                .zip(&successors[rank])
                .map(|(c, &succ)| c + beta * values[succ])
                .fold(f64::INFINITY, f64::min);
            next.push(best);
        }
        gap = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        iterations += 1;
        if gap <= stop_gap {
            let mut policy_indices = Vec::with_capacity(values.len());
            for rank in 0..values.len() {
                let mut best = f64::INFINITY;
                let mut best_idx = 0;
                for (law_idx, c) in costs[rank].iter().enumerate() {
                    let v = c + beta * values[successors[rank][law_idx]];
                    if v < best {
                        best = v;
                        best_idx = law_idx;
                    }
                }
                policy_indices.push(best_idx);
            }
            let policy: Vec<LocalLaw> = policy_indices
                .iter()
                .map(|&i| grid.laws()[i].clone())
                .collect();
            return Ok(QuantizedValueTable {
                q,
                space,
                grid_points,
                values,
                policy_indices,
                policy,
                iterations,
            });
        }
    }
    Err(FiniteError::NoConvergence { iterations, gap })
}

/// Open-loop mean-field strategy from a quantized table: the law at step t is
/// the stored policy at the projected predicted mean field, and the mean
/// field itself propagates unprojected.
pub fn extract_ns_strategy(table: &QuantizedValueTable, initial: MeanField) -> FiniteStrategy {
    FiniteStrategy::MeanFieldOpenLoop(NsStrategy::new(table.clone(), initial))
}
