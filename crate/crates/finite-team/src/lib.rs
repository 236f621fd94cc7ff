//! Finite-state deep structured teams.
//!
//! `n` exchangeable agents on finite alphabets interact only through the
//! empirical distribution of their states and actions. This crate provides
//! the deep-state transition machinery (binomial arrival counts and their
//! convolution, plus an exact brute-force joint kernel), dynamic programming
//! over deep states and over the quantized simplex, tabular Q-learning over
//! deterministic local laws, and seeded sample-path simulation.

pub mod error;
pub mod fixtures;
pub mod kernel;
pub mod model;
pub mod planning;
pub mod qlearning;
pub mod simulate;
pub mod space;

pub use error::{FiniteError, Result};
pub use kernel::{
    bar_phi, deep_state_marginal, expected_cost, joint_action_distribution,
    joint_deep_kernel_exact, mixed_transition, phi, plug_in_joint, DEFAULT_ENUMERATION_BOUND,
};
pub use model::{
    empirical_from_profile, CostSpec, CountDistribution, DeepState, FiniteTeamModel,
    JointDistribution, JointLaw, KernelSpec, LocalLaw,
};
pub use planning::{
    extract_dss_strategy, extract_ns_strategy, mean_field_cost, mean_field_step,
    value_iteration_dss, value_iteration_ns, LawGrid, MeanField, QuantizedValueTable, ValueTable,
};
pub use qlearning::{
    greedy_strategy, q_star_oracle, q_update, run_q_learning, BehaviorPolicy, DeterministicLaw,
    DeterministicLawSpace, LearningSchedule, QLearningConfig, QLearningRun, QTable, TracePoint,
};
pub use simulate::{
    evaluate_strategy_cost, objective_from_costs, simulate_finite_team, CostEstimate, DssStrategy,
    FiniteStrategy, NsStrategy, TrajectoryLog, TrajectoryStep,
};
pub use space::DeepStateSpace;
