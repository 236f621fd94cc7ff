//! Linear-quadratic deep structured teams.
//!
//! Agents with identical linear dynamics and quadratic costs are coupled
//! through z orthonormal feature regressions of states and actions. The crate
//! provides the feature aggregation and gauge machinery, the coupled
//! local/aggregate discrete Riccati solver with its feedback controllers
//! (deep-state feedback and mean-field substitution), closed-loop simulation,
//! and a model-free zeroth-order policy-gradient learner.

pub mod error;
pub mod fixtures;
pub mod model;
pub mod policy_gradient;
pub mod riccati;
pub mod simulate;

pub use error::{LqError, Result};
pub use model::{
    aggregate, build_aggregate_matrices, gauge_transform, per_step_cost, AggregateMatrices,
    DistributionSpec, GaugeDecomposition, LqTeamModel, LqTeamParams, ORTHONORMALITY_TOL,
};
pub use policy_gradient::{
    gradient_estimates, rollout_cost, run_policy_gradient, sample_perturbation, update_gains,
    GainTrace, GainTracePoint, PerturbedRollout, PgHyperparams,
};
pub use riccati::{
    assemble_weakly_coupled, check_assumptions, dss_controller, initial_mean_field, ns_controller,
    propagate_mean_field, riccati_predicted_cost, riccati_residual, solve_deep_riccati,
    solve_weakly_coupled, AssumptionCheck, AssumptionReport, DeepRiccatiSolution,
    WeaklyCoupledBlock,
};
pub use simulate::{
    evaluate_controller_cost, objective_from_costs, simulate_lq_team, simulate_lq_team_with,
    CostEstimate, DivergencePolicy, DssController, FeedbackGains, LqController, LqSimOptions,
    LqStep, LqTrajectoryLog, NsController, ZeroController, DIVERGENCE_NORM,
};
