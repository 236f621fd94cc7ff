//! Model-free zeroth-order policy gradient over the feedback-gain pair.
//!
//! Each iteration rolls out L finite-horizon trajectories under gains
//! perturbed by matrices drawn uniformly from Frobenius-norm-r spheres (one
//! fresh pair per trajectory, shared by all agents within it), forms the
//! sphere-smoothing gradient estimates, and takes a gradient step.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{LqError, Result};
use crate::model::LqTeamModel;
use crate::simulate::{
    simulate_lq_team_with, DivergencePolicy, DssController, FeedbackGains, LqSimOptions,
};

/// Hyperparameters of the policy-gradient loop.
#[derive(Debug, Clone)]
pub struct PgHyperparams {
    /// Trajectories per iteration (L).
    pub trajectories: usize,
    /// Rollout horizon (T).
    pub horizon: usize,
    /// Frobenius radius of the perturbation spheres (r).
    pub smoothing_radius: f64,
    /// Gradient step size (eta).
    pub step_size: f64,
    /// Discount weighting the within-rollout cost sum.
    pub beta: f64,
    /// Iteration budget.
    pub iters: usize,
    pub seed: u64,
    /// Per-step cost ceiling applied to diverged rollouts.
    pub cost_ceiling: f64,
}

impl PgHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 || self.horizon == 0 {
            return Err(LqError::InvalidInput(
                "policy gradient needs trajectories >= 1 and horizon >= 1".into(),
            ));
        }
        if self.smoothing_radius.is_nan() || self.smoothing_radius <= 0.0 {
            return Err(LqError::InvalidInput("smoothing radius must be positive".into()));
        }
        if self.step_size.is_nan() || self.step_size <= 0.0 {
            return Err(LqError::InvalidInput("step size must be positive".into()));
        }
        if !(0.0 < self.beta && self.beta <= 1.0) {
            return Err(LqError::InvalidInput(format!(
                "discount {} outside (0, 1]",
                self.beta
            )));
        }
        Ok(())
    }
}

/// SplitMix64 step; used to derive independent per-rollout seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seed for (iteration k, trajectory l, purpose tag), independent of the
/// order rollouts execute in.
pub(crate) fn derive_seed(base: u64, k: u64, l: u64, tag: u64) -> u64 {
    let mut s = splitmix64(base ^ 0xD1B54A32D192ED03);
    for v in [k, l, tag] {
        s = splitmix64(s ^ v.wrapping_mul(0x9E3779B97F4A7C15));
    }
    s
}

/// Uniform draw from the Frobenius-norm-`radius` sphere of the given shape:
/// a spherically symmetric Gaussian draw rescaled to the exact radius.
pub fn sample_perturbation(rows: usize, cols: usize, radius: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_perturbation_with(&mut rng, rows, cols, radius)
}

pub fn sample_perturbation_with(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    radius: f64,
) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = m.norm();
        if norm > 1e-12 {
            return m * (radius / norm);
        }
    }
}

/// One rollout under perturbed gains.
#[derive(Debug, Clone)]
pub struct PerturbedRollout {
    /// Per-step per-agent average costs c_1..c_T.
    pub costs: Vec<f64>,
    pub theta_pert: DMatrix<f64>,
    pub thetabold_pert: DMatrix<f64>,
    pub diverged: bool,
}

/// Simulate the team under the two-level control form with perturbed gains;
/// diverged trajectories are capped at the ceiling rather than aborted.
pub fn rollout_cost(
    model: &LqTeamModel,
    theta: &DMatrix<f64>,
    thetabold: &DMatrix<f64>,
    horizon: usize,
    cost_ceiling: f64,
    seed: u64,
) -> Result<(Vec<f64>, bool)> {
    let controller = DssController::new(
        FeedbackGains::new(theta.clone(), thetabold.clone()),
        model.alpha().clone(),
    );
    let options = LqSimOptions {
        record_agents: false,
        divergence: DivergencePolicy::CapCosts {
            ceiling: cost_ceiling,
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log = simulate_lq_team_with(model, &controller, horizon, seed, &options, &mut rng)?;
    Ok((log.costs(), log.diverged_at.is_some()))
}

/// Sphere-smoothing gradient estimates from L perturbed rollouts:
/// the local estimate is dim(theta) / (T L r^2) times the discounted-cost
/// weighted sum of the local perturbations, and likewise for the aggregate
/// gain with its own dimension factor.
pub fn gradient_estimates(
    samples: &[PerturbedRollout],
    horizon: usize,
    radius: f64,
    beta: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = samples
        .first()
        .ok_or_else(|| LqError::InvalidInput("gradient needs at least one rollout".into()))?;
    let (tr, tc) = first.theta_pert.shape();
    let (br, bc) = first.thetabold_pert.shape();
    let mut grad_theta = DMatrix::zeros(tr, tc);
    let mut grad_thetabold = DMatrix::zeros(br, bc);
    for sample in samples {
        if sample.theta_pert.shape() != (tr, tc) || sample.thetabold_pert.shape() != (br, bc) {
            return Err(LqError::Dimension("perturbation shapes differ across rollouts".into()));
        }
        let mut disc = 1.0;
        let mut weight = 0.0;
        for &c in &sample.costs {
            weight += disc * c;
            disc *= beta;
        }
        grad_theta += &sample.theta_pert * weight;
        grad_thetabold += &sample.thetabold_pert * weight;
    }
    let l = samples.len() as f64;
    let t = horizon as f64;
    let scale_local = (tr * tc) as f64 / (t * l * radius * radius);
    let scale_aggregate = (br * bc) as f64 / (t * l * radius * radius);
    Ok((grad_theta * scale_local, grad_thetabold * scale_aggregate))
}

/// Gradient step on both gains.
pub fn update_gains(
    theta: &DMatrix<f64>,
    thetabold: &DMatrix<f64>,
    grad_theta: &DMatrix<f64>,
    grad_thetabold: &DMatrix<f64>,
    step_size: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        theta - grad_theta * step_size,
        thetabold - grad_thetabold * step_size,
    )
}

/// Per-iteration record of the learning run.
#[derive(Debug, Clone)]
pub struct GainTracePoint {
    /// 1-based iteration index.
    pub iter: usize,
    /// Gains used during this iteration (before the update).
    pub theta: DMatrix<f64>,
    pub thetabold: DMatrix<f64>,
    /// Mean per-step rollout cost across the iteration's trajectories.
    pub mean_cost: f64,
    /// Frobenius distances to the reference gains, when supplied.
    pub dist_theta: Option<f64>,
    pub dist_thetabold: Option<f64>,
    /// Rollouts capped by the divergence guard this iteration.
    pub diverged_rollouts: usize,
}

#[derive(Debug, Clone)]
pub struct GainTrace {
    pub points: Vec<GainTracePoint>,
}

impl GainTrace {
    pub fn final_gains(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        self.points.last().map(|p| (&p.theta, &p.thetabold))
    }

    /// First iteration at which both gains are within `tol` of the reference
    /// in Frobenius norm.
    pub fn first_iteration_within(&self, tol: f64) -> Option<usize> {
        self.points.iter().find_map(|p| {
            match (p.dist_theta, p.dist_thetabold) {
                (Some(a), Some(b)) if a <= tol && b <= tol => Some(p.iter),
                _ => None,
            }
        })
    }
}

/// Run the zeroth-order policy-gradient loop from zero initial gains.
pub fn run_policy_gradient(
    model: &LqTeamModel,
    hyper: &PgHyperparams,
    reference: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<GainTrace> {
    hyper.validate()?;
    let (h_x, h_u, z) = (model.h_x(), model.h_u(), model.z());
    let mut theta = DMatrix::zeros(h_u, h_x);
    let mut thetabold = DMatrix::zeros(z * h_u, z * h_x);
    let mut points = Vec::with_capacity(hyper.iters);
    for k in 1..=hyper.iters {
        let mut samples = Vec::with_capacity(hyper.trajectories);
        let mut cost_total = 0.0;
        let mut diverged = 0usize;
        for l in 0..hyper.trajectories {
            let mut pert_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, k as u64, l as u64, 0));
            let theta_pert =
                sample_perturbation_with(&mut pert_rng, h_u, h_x, hyper.smoothing_radius);
            let thetabold_pert =
                sample_perturbation_with(&mut pert_rng, z * h_u, z * h_x, hyper.smoothing_radius);
            let rollout_seed = derive_seed(hyper.seed, k as u64, l as u64, 1);
            let (costs, did_diverge) = rollout_cost(
                model,
                &(&theta + &theta_pert),
                &(&thetabold + &thetabold_pert),
                hyper.horizon,
                hyper.cost_ceiling,
                rollout_seed,
            )?;
            cost_total += costs.iter().sum::<f64>();
            diverged += usize::from(did_diverge);
            samples.push(PerturbedRollout {
                costs,
                theta_pert,
                thetabold_pert,
                diverged: did_diverge,
            });
        }
        let (grad_theta, grad_thetabold) =
            gradient_estimates(&samples, hyper.horizon, hyper.smoothing_radius, hyper.beta)?;
        points.push(GainTracePoint {
            iter: k,
            theta: theta.clone(),
            thetabold: thetabold.clone(),
            mean_cost: cost_total / (hyper.trajectories * hyper.horizon) as f64,
            dist_theta: reference.map(|(t, _)| (&theta - t).norm()),
            dist_thetabold: reference.map(|(_, tb)| (&thetabold - tb).norm()),
            diverged_rollouts: diverged,
        });
        let (next_theta, next_thetabold) =
            update_gains(&theta, &thetabold, &grad_theta, &grad_thetabold, hyper.step_size);
        theta = next_theta;
        thetabold = next_thetabold;
    }
    Ok(GainTrace { points })
}
