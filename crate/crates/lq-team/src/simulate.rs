//! Closed-loop simulation of LQ teams and Monte-Carlo cost evaluation.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LqError, Result};
use crate::model::{aggregate, LqTeamModel, Sampler};

/// State norm beyond which a trajectory counts as diverged.
pub const DIVERGENCE_NORM: f64 = 1e9;

/// Feedback gains of the two-level controller: a local gain applied to each
/// agent's own state and an aggregate gain applied to the stacked features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGains {
    /// h_u x h_x local gain.
    pub theta: DMatrix<f64>,
    /// (z h_u) x (z h_x) aggregate gain.
    pub thetabold: DMatrix<f64>,
}

impl FeedbackGains {
    pub fn new(theta: DMatrix<f64>, thetabold: DMatrix<f64>) -> Self {
        Self { theta, thetabold }
    }

    pub fn zeros(h_x: usize, h_u: usize, z: usize) -> Self {
        Self {
            theta: DMatrix::zeros(h_u, h_x),
            thetabold: DMatrix::zeros(z * h_u, z * h_x),
        }
    }

    /// Row block j of the aggregate gain: the h_u x (z h_x) map producing
    /// feature j's aggregate control contribution.
    pub fn aggregate_row_block(&self, j: usize, h_u: usize) -> DMatrix<f64> {
        self.thetabold.rows(j * h_u, h_u).into_owned()
    }
}

/// Anything that can control all agents for one step.
pub trait LqController: Send + Sync {
    /// Controls for step `t` (1-based): column i is agent i's action, given
    /// the agent states (column per agent) and the realized deep state.
    fn control_step(
        &self,
        t: usize,
        states: &DMatrix<f64>,
        deep_state: &DVector<f64>,
    ) -> DMatrix<f64>;
}

/// u_i = theta x_i + sum_j alpha[i,j] (thetabold_j reference - theta reference_j).
///
/// Shared by the deep-state and mean-field controllers, which differ only in
/// what they use as the reference vector.
fn gain_controls(
    gains: &FeedbackGains,
    alpha: &DMatrix<f64>,
    states: &DMatrix<f64>,
    reference: &DVector<f64>,
) -> DMatrix<f64> {
    let h_u = gains.theta.nrows();
    let h_x = gains.theta.ncols();
    let z = alpha.ncols();
    let mut feature_terms = DMatrix::zeros(h_u, z);
    for j in 0..z {
        let row_block = gains.thetabold.rows(j * h_u, h_u);
        let ref_block = reference.rows(j * h_x, h_x);
        let v = row_block * reference - &gains.theta * ref_block;
        feature_terms.set_column(j, &v);
    }
    &gains.theta * states + feature_terms * alpha.transpose()
}

/// Deep-state feedback controller: the reference is the realized aggregate.
pub struct DssController {
    gains: FeedbackGains,
    alpha: DMatrix<f64>,
}

impl DssController {
    pub fn new(gains: FeedbackGains, alpha: DMatrix<f64>) -> Self {
        Self { gains, alpha }
    }

    pub fn gains(&self) -> &FeedbackGains {
        &self.gains
    }

    /// One agent's control, convenient for spot checks.
    pub fn control_single(
        &self,
        agent: usize,
        x: &DVector<f64>,
        deep_state: &DVector<f64>,
    ) -> DVector<f64> {
        let states = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let alpha_row = self.alpha.row(agent).into_owned();
        let alpha_one = DMatrix::from_row_slice(1, self.alpha.ncols(), alpha_row.as_slice());
        let u = gain_controls(&self.gains, &alpha_one, &states, deep_state);
        u.column(0).into_owned()
    }
}

impl LqController for DssController {
    fn control_step(
        &self,
        _t: usize,
        states: &DMatrix<f64>,
        deep_state: &DVector<f64>,
    ) -> DMatrix<f64> {
        gain_controls(&self.gains, &self.alpha, states, deep_state)
    }
}

/// Mean-field controller: the reference is the deterministic prediction
/// m_{t+1} = closed_loop m_t, grown lazily and cached.
pub struct NsController {
    gains: FeedbackGains,
    alpha: DMatrix<f64>,
    closed_loop: DMatrix<f64>,
    cache: Mutex<Vec<DVector<f64>>>,
}

impl NsController {
    pub fn new(
        gains: FeedbackGains,
        alpha: DMatrix<f64>,
        closed_loop: DMatrix<f64>,
        m1: DVector<f64>,
    ) -> Self {
        Self {
            gains,
            alpha,
            closed_loop,
            cache: Mutex::new(vec![m1]),
        }
    }

    pub fn mean_field_at(&self, t: usize) -> DVector<f64> {
        assert!(t >= 1, "time indices are 1-based");
        let mut cache = self.cache.lock().expect("mean-field cache lock");
        while cache.len() < t {
            let next = &self.closed_loop * cache.last().expect("cache is never empty");
            cache.push(next);
        }
        cache[t - 1].clone()
    }
}

impl LqController for NsController {
    fn control_step(
        &self,
        t: usize,
        states: &DMatrix<f64>,
        _deep_state: &DVector<f64>,
    ) -> DMatrix<f64> {
        let m = self.mean_field_at(t);
        gain_controls(&self.gains, &self.alpha, states, &m)
    }
}

/// Applies no control; handy as a baseline.
pub struct ZeroController {
    pub h_u: usize,
}

impl LqController for ZeroController {
    fn control_step(&self, _t: usize, states: &DMatrix<f64>, _d: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.h_u, states.ncols())
    }
}

/// What to do when a trajectory's state norm passes [`DIVERGENCE_NORM`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergencePolicy {
    /// Abort with an error carrying the step index.
    Error,
    /// Stop stepping, cap every recorded cost at the ceiling and pad the
    /// remaining steps with it.
    CapCosts { ceiling: f64 },
}

#[derive(Debug, Clone)]
pub struct LqSimOptions {
    pub record_agents: bool,
    pub divergence: DivergencePolicy,
}

impl Default for LqSimOptions {
    fn default() -> Self {
        Self {
            record_agents: false,
            divergence: DivergencePolicy::Error,
        }
    }
}

/// One recorded step of an LQ trajectory.
#[derive(Debug, Clone)]
pub struct LqStep {
    /// 1-based time index.
    pub t: usize,
    /// Stacked feature regressions of the states at this step.
    pub deep_state: DVector<f64>,
    /// Per-agent average cost of this step.
    pub avg_cost: f64,
    pub agent_states: Option<DMatrix<f64>>,
    pub agent_actions: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct LqTrajectoryLog {
    pub seed: u64,
    pub steps: Vec<LqStep>,
    /// Step at which the state norm passed the divergence threshold, if any.
    pub diverged_at: Option<usize>,
}

impl LqTrajectoryLog {
    pub fn costs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.avg_cost).collect()
    }
}

/// Simulate the n-agent closed loop for `horizon` steps.
pub fn simulate_lq_team(
    model: &LqTeamModel,
    controller: &dyn LqController,
    horizon: usize,
    seed: u64,
) -> Result<LqTrajectoryLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_lq_team_with(model, controller, horizon, seed, &LqSimOptions::default(), &mut rng)
}

/// Simulation engine; `seed` only labels the log, randomness comes from `rng`.
pub fn simulate_lq_team_with(
    model: &LqTeamModel,
    controller: &dyn LqController,
    horizon: usize,
    seed: u64,
    options: &LqSimOptions,
    rng: &mut ChaCha8Rng,
) -> Result<LqTrajectoryLog> {
    let n = model.n();
    let h_x = model.h_x();
    let initial = Sampler::new(model.initial());
    let noise = Sampler::new(model.noise());

    let mut states = DMatrix::zeros(h_x, n);
    let mut scratch = DVector::zeros(h_x);
    for i in 0..n {
        initial.sample_into(rng, &mut scratch);
        states.set_column(i, &scratch);
    }

    // Per-feature common coupling term (Abar_j xbar + Bbar_j ubar).
    let mut coupling = DMatrix::zeros(h_x, model.z());
    let mut steps = Vec::with_capacity(horizon);
    let mut diverged_at: Option<usize> = None;
    for t in 1..=horizon {
        if states.amax() > DIVERGENCE_NORM {
            match options.divergence {
                DivergencePolicy::Error => {
                    return Err(LqError::Diverged {
                        step: t,
                        threshold: DIVERGENCE_NORM,
                    })
                }
                DivergencePolicy::CapCosts { ceiling } => {
                    diverged_at = Some(t);
                    let pad_state = aggregate(&states, model.alpha())?;
                    for pad_t in t..=horizon {
                        steps.push(LqStep {
                            t: pad_t,
                            deep_state: pad_state.clone(),
                            avg_cost: ceiling,
                            agent_states: None,
                            agent_actions: None,
                        });
                    }
                    break;
                }
            }
        }
        let xbar = aggregate(&states, model.alpha())?;
        let actions = controller.control_step(t, &states, &xbar);
        if actions.nrows() != model.h_u() || actions.ncols() != n {
            return Err(LqError::Dimension(
                "controller must return one h_u column per agent".into(),
            ));
        }
        let ubar = aggregate(&actions, model.alpha())?;

        // Average cost: (1/n) sum_i x'Qx + u'Ru, plus the shared aggregate terms.
        let qx = model.q() * &states;
        let ru = model.r() * &actions;
        let mut avg_cost = (states.dot(&qx) + actions.dot(&ru)) / n as f64;
        avg_cost += (xbar.transpose() * model.qbar() * &xbar)[(0, 0)];
        avg_cost += (ubar.transpose() * model.rbar() * &ubar)[(0, 0)];
        if let DivergencePolicy::CapCosts { ceiling } = options.divergence {
            avg_cost = avg_cost.min(ceiling);
        }

        steps.push(LqStep {
            t,
            deep_state: xbar.clone(),
            avg_cost,
            agent_states: options.record_agents.then(|| states.clone()),
            agent_actions: options.record_agents.then(|| actions.clone()),
        });

        for j in 0..model.z() {
            let v = &model.abar()[j] * &xbar + &model.bbar()[j] * &ubar;
            coupling.set_column(j, &v);
        }
        let mut next = model.a() * &states + model.b() * &actions;
        next += &coupling * model.alpha().transpose();
        for i in 0..n {
            noise.sample_into(rng, &mut scratch);
            for r in 0..h_x {
                next[(r, i)] += scratch[r];
            }
        }
        states = next;
    }
    Ok(LqTrajectoryLog {
        seed,
        steps,
        diverged_at,
    })
}

/// Monte-Carlo estimate of a controller's per-agent objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Objective of one realized cost sequence: (1-beta)-normalized truncated
/// discounted sum for beta < 1, plain time average for beta = 1.
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

/// Estimate the objective over independent trials; trial r uses stream r of
/// the seeded generator, so the estimate is reproducible.
pub fn evaluate_controller_cost(
    model: &LqTeamModel,
    controller: &dyn LqController,
    beta: f64,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<CostEstimate> {
    if horizon == 0 || trials == 0 {
        return Err(LqError::InvalidInput(
            "evaluation needs horizon >= 1 and trials >= 1".into(),
        ));
    }
    if !(0.0 < beta && beta <= 1.0) {
        return Err(LqError::InvalidInput(format!(
            "objective discount {beta} outside (0, 1]"
        )));
    }
    let options = LqSimOptions::default();
    let mut samples = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);
        let log = simulate_lq_team_with(model, controller, horizon, seed, &options, &mut rng)?;
        samples.push(objective_from_costs(&log.costs(), beta));
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
