//! Task execution: build the model from the scenario, run the requested
//! computation, and emit CSV/JSON artifacts plus a manifest.

use nalgebra::DMatrix;
use serde_json::json;
use std::path::PathBuf;

use finite_team::{
    evaluate_strategy_cost, extract_dss_strategy, extract_ns_strategy,
    qlearning::q_star_oracle_bounded, simulate_finite_team, value_iteration_ns, BehaviorPolicy,
    DssStrategy, FiniteStrategy, FiniteTeamModel, LawGrid, LearningSchedule, MeanField,
    QLearningConfig,
};
use finite_team::planning::value_iteration_dss_bounded;
use lq_team::{
    check_assumptions, dss_controller, evaluate_controller_cost, ns_controller,
    riccati_predicted_cost, run_policy_gradient, simulate_lq_team, solve_deep_riccati,
    solve_weakly_coupled, AssumptionCheck, AssumptionReport, DeepRiccatiSolution, GainTrace,
    LqController, LqTeamModel, PgHyperparams, ZeroController,
};

use crate::error::{CliError, Result};
use crate::output::{column_name, g17, OutputWriter};
use crate::scenario::{ModelType, ScenarioConfig, TaskKind};

const DEFAULT_TOL: f64 = 1e-10;
const DEFAULT_PLAN_TOL: f64 = 1e-9;
const DEFAULT_MAX_ITER: usize = 100_000;
const DEFAULT_QUANTIZATION: u32 = 16;
const DEFAULT_EPISODES: usize = 2_000;
const DEFAULT_EPISODE_HORIZON: usize = 10;
const DEFAULT_TRACE_EVERY: usize = 1_000;
const DEFAULT_SIM_HORIZON: usize = 100;
const DEFAULT_EVAL_HORIZON: usize = 200;
const DEFAULT_EVAL_TRIALS: usize = 100;
const DEFAULT_PG_ITERS: usize = 5_000;
const DEFAULT_PG_ROLLOUTS: usize = 100;
const DEFAULT_PG_HORIZON: usize = 10;
const DEFAULT_PG_RADIUS: f64 = 0.15;
const DEFAULT_PG_STEP: f64 = 0.3;
const DEFAULT_COST_CEILING: f64 = 1e6;
/// Horizon used when estimating the cost of greedy-policy snapshots.
const QLEARN_EVAL_HORIZON: usize = 50;
const QLEARN_EVAL_TRIALS: usize = 20;

/// Seeds of the bundled smart-grid experiment.
pub const SMART_GRID_SEEDS: [u64; 3] = [1, 5, 6];

pub const SMART_GRID_SCENARIO: &str = include_str!("../scenarios/smart_grid.toml");

pub fn run_task(kind: TaskKind, config: &ScenarioConfig) -> Result<Vec<PathBuf>> {
    if config.task.kind != kind {
        return Err(CliError::Config(format!(
            "scenario declares task '{}' but '{kind}' was requested; \
             add --override task.kind={kind} to run it anyway",
            config.task.kind
        )));
    }
    let expected_type = match kind {
        TaskKind::Riccati | TaskKind::Pg => Some(ModelType::Lq),
        TaskKind::PlanDss | TaskKind::PlanNs | TaskKind::Qlearn => Some(ModelType::Finite),
        TaskKind::Simulate | TaskKind::Evaluate => None,
    };
    if let Some(expected) = expected_type {
        if config.model.model_type != expected {
            return Err(CliError::Config(format!(
                "task '{kind}' requires model_type {expected:?}"
            )));
        }
    }
    log::info!("running task {kind}");
    let mut writer = OutputWriter::new(&config.output.dir, &config.output.formats);
    match kind {
        TaskKind::Riccati => riccati_task(config, &mut writer)?,
        TaskKind::Pg => pg_task(config, &mut writer)?,
        TaskKind::PlanDss => plan_dss_task(config, &mut writer)?,
        TaskKind::PlanNs => plan_ns_task(config, &mut writer)?,
        TaskKind::Qlearn => qlearn_task(config, &mut writer)?,
        TaskKind::Simulate => simulate_task(config, &mut writer)?,
        TaskKind::Evaluate => evaluate_task(config, &mut writer)?,
    }
    writer.finalize(config)
}

fn matrix_json(m: &DMatrix<f64>) -> serde_json::Value {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    json!({ "rows": m.nrows(), "cols": m.ncols(), "data": data })
}

fn check_json(check: &AssumptionCheck) -> serde_json::Value {
    json!({ "passed": check.passed, "detail": check.detail })
}

fn report_json(report: &AssumptionReport) -> serde_json::Value {
    json!({
        "cost_matrices": check_json(&report.cost_matrices),
        "stabilizable_local": check_json(&report.stabilizable_local),
        "stabilizable_aggregate": check_json(&report.stabilizable_aggregate),
        "detectable_local": check_json(&report.detectable_local),
        "detectable_aggregate": check_json(&report.detectable_aggregate),
        "bounded_covariances": check_json(&report.bounded_covariances),
        "ns_stability": report.ns_stability.as_ref().map(check_json),
        "pd_covariances": check_json(&report.pd_covariances),
    })
}

fn riccati_json(model: &LqTeamModel, config: &ScenarioConfig) -> Result<(DeepRiccatiSolution, serde_json::Value)> {
    let tol = config.hyper.tol.unwrap_or(DEFAULT_TOL);
    let max_iter = config.hyper.max_iter.unwrap_or(DEFAULT_MAX_ITER);
    let solution = solve_deep_riccati(model, tol, max_iter)?;
    let report = check_assumptions(model, Some(&solution));
    let weak_blocks = if model.weakly_coupled() {
        let blocks = solve_weakly_coupled(model, tol, max_iter)?;
        Some(
            blocks
                .iter()
                .map(|b| {
                    json!({
                        "pbar": matrix_json(&b.pbar),
                        "thetabar": matrix_json(&b.thetabar),
                        "residual": b.residual,
                    })
                })
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let (predicted_cost, predicted_note) = match riccati_predicted_cost(&solution, model) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let value = json!({
        "p": matrix_json(&solution.p),
        "pbold": matrix_json(&solution.pbold),
        "theta": matrix_json(&solution.theta),
        "thetabold": matrix_json(&solution.thetabold),
        "residual_local": solution.residual_local,
        "residual_aggregate": solution.residual_aggregate,
        "iterations_local": solution.iterations_local,
        "iterations_aggregate": solution.iterations_aggregate,
        "weakly_coupled_blocks": weak_blocks,
        "assumptions": report_json(&report),
        "predicted_cost": predicted_cost,
        "predicted_cost_note": predicted_note,
    });
    Ok((solution, value))
}

fn riccati_task(config: &ScenarioConfig, writer: &mut OutputWriter) -> Result<()> {
    let model = config.build_lq_model()?;
    let (_, value) = riccati_json(&model, config)?;
    writer.add_json("riccati.json", &value);
    Ok(())
}

fn pg_hyperparams(config: &ScenarioConfig, model: &LqTeamModel) -> PgHyperparams {
    let h = &config.hyper;
    PgHyperparams {
        trajectories: h.rollouts.unwrap_or(DEFAULT_PG_ROLLOUTS),
        horizon: h.horizon.unwrap_or(DEFAULT_PG_HORIZON),
        smoothing_radius: h.smoothing_radius.unwrap_or(DEFAULT_PG_RADIUS),
        step_size: h.step_size.unwrap_or(DEFAULT_PG_STEP),
        beta: model.beta(),
        iters: h.iters.unwrap_or(DEFAULT_PG_ITERS),
        seed: config.seed,
        cost_ceiling: h.cost_ceiling.unwrap_or(DEFAULT_COST_CEILING),
    }
}

fn pg_trace_csv(model: &LqTeamModel, trace: &GainTrace, writer: &mut OutputWriter, name: &str) {
    let (h_x, h_u, z) = (model.h_x(), model.h_u(), model.z());
    let mut header = vec!["iter".to_string()];
    for r in 0..h_u {
        for c in 0..h_x {
            header.push(format!("theta_{r}_{c}"));
        }
    }
    for r in 0..z * h_u {
        for c in 0..z * h_x {
            header.push(format!("thetabold_{r}_{c}"));
        }
    }
    header.extend(
        ["mean_step_cost", "dist_theta", "dist_thetabold", "diverged_rollouts"]
            .map(String::from),
    );
    let rows: Vec<Vec<String>> = trace
        .points
        .iter()
        .map(|p| {
            let mut row = vec![p.iter.to_string()];
            for r in 0..h_u {
                for c in 0..h_x {
                    row.push(g17(p.theta[(r, c)]));
                }
            }
            for r in 0..z * h_u {
                for c in 0..z * h_x {
                    row.push(g17(p.thetabold[(r, c)]));
                }
            }
            row.push(g17(p.mean_cost));
            row.push(p.dist_theta.map(g17).unwrap_or_default());
            row.push(p.dist_thetabold.map(g17).unwrap_or_default());
            row.push(p.diverged_rollouts.to_string());
            row
        })
        .collect();
    writer.add_csv(name, &header, &rows);
}

fn pg_task(config: &ScenarioConfig, writer: &mut OutputWriter) -> Result<()> {
    let model = config.build_lq_model()?;
    let hyper = pg_hyperparams(config, &model);
    let reference = match solve_deep_riccati(&model, DEFAULT_TOL, DEFAULT_MAX_ITER) {
        Ok(solution) => Some(solution),
        Err(e) => {
            log::warn!("no Riccati reference available: {e}");
            None
        }
    };
    let trace = run_policy_gradient(
        &model,
        &hyper,
        reference.as_ref().map(|s| (&s.theta, &s.thetabold)),
    )?;
    pg_trace_csv(&model, &trace, writer, "pg_trace.csv");
    let last = trace.points.last();
    let value = json!({
        "iters": hyper.iters,
        "seed": hyper.seed,
        "reference": reference.as_ref().map(|s| json!({
            "theta": matrix_json(&s.theta),
            "thetabold": matrix_json(&s.thetabold),
        })),
        "final": last.map(|p| json!({
            "theta": matrix_json(&p.theta),
            "thetabold": matrix_json(&p.thetabold),
            "dist_theta": p.dist_theta,
            "dist_thetabold": p.dist_thetabold,
        })),
        "first_iteration_within_005": trace.first_iteration_within(0.05),
    });
    writer.add_json("pg_result.json", &value);
    Ok(())
}

fn law_grid(config: &ScenarioConfig, model: &FiniteTeamModel) -> Result<LawGrid> {
    let grid = match config.hyper.law_step {
        Some(q) => LawGrid::mixed(model.num_states(), model.num_actions(), q)?,
        None => LawGrid::deterministic(model.num_states(), model.num_actions())?,
    };
    Ok(grid)
}

fn law_columns(model: &FiniteTeamModel) -> Vec<String> {
    let mut cols = Vec::new();
    for x in model.states() {
        for u in model.actions() {
            cols.push(format!("gamma_{}_{}", column_name(x), column_name(u)));
        }
    }
    cols
}

fn plan_dss_task(config: &ScenarioConfig, writer: &mut OutputWriter) -> Result<()> {
    let model = config.build_finite_model()?;
    let grid = law_grid(config, &model)?;
    let table = value_iteration_dss_bounded(
        &model,
        &grid,
        config.hyper.tol.unwrap_or(DEFAULT_PLAN_TOL),
        config.hyper.max_iter.unwrap_or(DEFAULT_MAX_ITER),
        config
            .hyper
            .enumeration_budget
            .unwrap_or(finite_team::DEFAULT_ENUMERATION_BOUND),
    )?;
    let mut header = vec!["rank".to_string()];
    header.extend(model.states().iter().map(|s| format!("count_{}", column_name(s))));
    header.push("value".to_string());
    header.push("law_index".to_string());
    header.extend(law_columns(&model));
    let space = table.space().clone();
    let rows: Vec<Vec<String>> = space
        .iter()
        .enumerate()
        .map(|(rank, d)| {
            let mut row = vec![rank.to_string()];
            row.extend(d.counts().iter().map(|c| c.to_string()));
            row.push(g17(table.values()[rank]));
            row.push(table.policy_indices()[rank].to_string());
            let law = &table.policy_laws()[rank];
            for x in 0..model.num_states() {
                for u in 0..model.num_actions() {
                    row.push(g17(law.prob(x, u)));
                }
            }
            row
        })
        .collect();
    writer.add_csv("value_table.csv", &header, &rows);
    Ok(())
}

fn plan_ns_task(config: &ScenarioConfig, writer: &mut OutputWriter) -> Result<()> {
    let model = config.build_finite_model()?;
    let grid = law_grid(config, &model)?;
    let table = value_iteration_ns(
        &model,
        config.hyper.quantization.unwrap_or(DEFAULT_QUANTIZATION),
        &grid,
        config.hyper.tol.unwrap_or(DEFAULT_PLAN_TOL),
        config.hyper.max_iter.unwrap_or(DEFAULT_MAX_ITER),
    )?;
    let mut header = vec!["rank".to_string()];
    header.extend(model.states().iter().map(|s| format!("m_{}", column_name(s))));
    header.push("value".to_string());
    header.push("law_index".to_string());
    header.extend(law_columns(&model));
    let rows: Vec<Vec<String>> = (0..table.len())
        .map(|rank| {
            let mut row = vec![rank.to_string()];
            row.extend(table.grid_point(rank).probs().iter().map(|&p| g17(p)));
            row.push(g17(table.values()[rank]));
            row.push(table.policy_indices()[rank].to_string());
            let law = &table.policy_laws()[rank];
            for x in 0..model.num_states() {
                for u in 0..model.num_actions() {
                    row.push(g17(law.prob(x, u)));
                }
            }
            row
        })
        .collect();
    writer.add_csv("mean_field_table.csv", &header, &rows);
    Ok(())
}

fn parse_behavior(text: Option<&str>) -> Result<BehaviorPolicy> {
    match text.unwrap_or("uniform") {
        "uniform" => Ok(BehaviorPolicy::UniformRandom),
        other => match other.strip_prefix("eps:") {
            Some(eps) => {
                let epsilon: f64 = eps
                    .parse()
                    .map_err(|_| CliError::Config(format!("cannot parse epsilon in '{other}'")))?;
                if !(0.0..=1.0).contains(&epsilon) {
                    return Err(CliError::Config(format!("epsilon {epsilon} outside [0, 1]")));
                }
                Ok(BehaviorPolicy::EpsilonGreedy { epsilon })
            }
            None => Err(CliError::Config(format!(
                "unknown behavior '{other}' (expected 'uniform' or 'eps:<epsilon>')"
            ))),
        },
    }
}

fn parse_schedule(text: Option<&str>) -> Result<LearningSchedule> {
    match text.unwrap_or("inverse-visits") {
        "inverse-visits" => Ok(LearningSchedule::InverseVisits),
        other => match other.strip_prefix("poly:") {
            Some(exp) => {
                let exponent: f64 = exp
                    .parse()
                    .map_err(|_| CliError::Config(format!("cannot parse exponent in '{other}'")))?;
                LearningSchedule::polynomial(exponent).map_err(CliError::from)
            }
            None => Err(CliError::Config(format!(
                "unknown schedule '{other}' (expected 'inverse-visits' or 'poly:<exponent>')"
            ))),
        },
    }
}

fn qlearn_task(config: &ScenarioConfig, writer: &mut OutputWriter) -> Result<()> {
    let model = config.build_finite_model()?;
    let h = &config.hyper;
    let qconfig = QLearningConfig {
        episodes: h.episodes.unwrap_or(DEFAULT_EPISODES),
        horizon: h.horizon.unwrap_or(DEFAULT_EPISODE_HORIZON),
        behavior: parse_behavior(h.behavior.as_deref())?,
        schedule: parse_schedule(h.schedule.as_deref())?,
        seed: config.seed,
        trace_every: h.trace_every.unwrap_or(DEFAULT_TRACE_EVERY),
    };
    let budget = h
        .enumeration_budget
        .unwrap_or(finite_team::DEFAULT_ENUMERATION_BOUND);
    let reference = match q_star_oracle_bounded(&model, budget) {
        Ok(table) => Some(table),
        Err(e) => {
            log::warn!("no exact reference available: {e}");
            None
        }
    };
    let run = finite_team::run_q_learning(&model, &qconfig, reference.as_ref())?;

    // Trace with per-checkpoint greedy-policy cost estimates.
    let eval_trials = h.trials.unwrap_or(QLEARN_EVAL_TRIALS);
    let eval_seed = config.seed ^ 0x51CA7E;
    let space = run.table.space().clone();
    let header: Vec<String> = ["step", "sup_error", "greedy_cost"].map(String::from).to_vec();
    let mut rows = Vec::with_capacity(run.trace.len());
    for point in &run.trace {
        let laws = point
            .greedy
            .iter()
            .map(|&idx| {
                run.table
                    .laws()
                    .law(idx)
                    .to_local_law(model.num_actions())
            })
            .collect();
        let strategy =
            FiniteStrategy::DeepStateFeedback(DssStrategy::new(space.clone(), laws));
        let estimate = evaluate_strategy_cost(
            &model,
            &strategy,
            model.beta(),
            QLEARN_EVAL_HORIZON,
            eval_trials,
            eval_seed,
        )?;
        rows.push(vec![
            point.step.to_string(),
            point.sup_error.map(g17).unwrap_or_default(),
            g17(estimate.mean),
        ]);
    }
    writer.add_csv("qlearn_trace.csv", &header, &rows);

    // Final Q table.
    let mut header = vec!["rank".to_string()];
    header.extend(model.states().iter().map(|s| format!("count_{}", column_name(s))));
    header.push("law_index".to_string());
    header.extend(
        model
            .states()
            .iter()
            .map(|s| format!("action_{}", column_name(s))),
    );
    header.push("q_value".to_string());
    header.push("visits".to_string());
    let mut rows = Vec::new();
    for (rank, d) in space.iter().enumerate() {
        for law_idx in 0..run.table.laws().len() {
            let law = run.table.laws().law(law_idx);
            let mut row = vec![rank.to_string()];
            row.extend(d.counts().iter().map(|c| c.to_string()));
            row.push(law_idx.to_string());
            row.extend(law.actions().iter().map(|a| a.to_string()));
            row.push(g17(run.table.value(rank, law_idx)));
            row.push(run.table.visits(rank, law_idx).to_string());
            rows.push(row);
        }
    }
    writer.add_csv("qtable.csv", &header, &rows);

    let final_sup = reference.as_ref().map(|r| run.table.sup_distance(r));
    let greedy_matches = reference.as_ref().map(|r| {
        (0..space.len()).all(|rank| {
            run.table.min_over_laws(rank).0 == r.min_over_laws(rank).0
        })
    });
    let value = json!({
        "episodes": qconfig.episodes,
        "horizon": qconfig.horizon,
        "steps": qconfig.episodes * qconfig.horizon,
        "seed": config.seed,
        "final_sup_error": final_sup,
        "greedy_matches_reference": greedy_matches,
    });
    writer.add_json("qlearn_result.json", &value);
    Ok(())
}

fn finite_strategy(config: &ScenarioConfig, model: &FiniteTeamModel) -> Result<FiniteStrategy> {
    let grid = law_grid(config, model)?;
    let tol = config.hyper.tol.unwrap_or(DEFAULT_PLAN_TOL);
    let max_iter = config.hyper.max_iter.unwrap_or(DEFAULT_MAX_ITER);
    match config.hyper.strategy.as_deref().unwrap_or("dss") {
        "dss" => {
            let budget = config
                .hyper
                .enumeration_budget
                .unwrap_or(finite_team::DEFAULT_ENUMERATION_BOUND);
            let table = value_iteration_dss_bounded(model, &grid, tol, max_iter, budget)?;
            Ok(extract_dss_strategy(&table))
        }
        "ns" => {
            let table = value_iteration_ns(
                model,
                config.hyper.quantization.unwrap_or(DEFAULT_QUANTIZATION),
                &grid,
                tol,
                max_iter,
            )?;
            let initial = MeanField::new(model.initial_law().to_vec())?;
            Ok(extract_ns_strategy(&table, initial))
        }
        other => Err(CliError::Config(format!(
            "unknown finite strategy '{other}' (expected 'dss' or 'ns')"
        ))),
    }
}

fn lq_controller(
    config: &ScenarioConfig,
    model: &LqTeamModel,
) -> Result<Box<dyn LqController>> {
    let tol = config.hyper.tol.unwrap_or(DEFAULT_TOL);
    let max_iter = config.hyper.max_iter.unwrap_or(DEFAULT_MAX_ITER);
    match config.hyper.strategy.as_deref().unwrap_or("dss") {
        "dss" => {
            let solution = solve_deep_riccati(model, tol, max_iter)?;
            Ok(Box::new(dss_controller(&solution, model.alpha())))
        }
        "ns" => {
            let solution = solve_deep_riccati(model, tol, max_iter)?;
            Ok(Box::new(ns_controller(model, &solution, None)?))
        }
        "zero" => Ok(Box::new(ZeroController { h_u: model.h_u() })),
        other => Err(CliError::Config(format!(
            "unknown LQ strategy '{other}' (expected 'dss', 'ns' or 'zero')"
        ))),
    }
}

fn simulate_task(config: &ScenarioConfig, writer: &mut OutputWriter) -> Result<()> {
    let horizon = config.hyper.horizon.unwrap_or(DEFAULT_SIM_HORIZON);
    match config.model.model_type {
        ModelType::Finite => {
            let model = config.build_finite_model()?;
            let strategy = finite_strategy(config, &model)?;
            let log = simulate_finite_team(&model, &strategy, horizon, config.seed);
            let mut header = vec!["t".to_string()];
            header.extend(
                model
                    .states()
                    .iter()
                    .map(|s| format!("count_{}", column_name(s))),
            );
            header.push("avg_cost".to_string());
            let rows: Vec<Vec<String>> = log
                .steps
                .iter()
                .map(|s| {
                    let mut row = vec![s.t.to_string()];
                    row.extend(s.deep_state.counts().iter().map(|c| c.to_string()));
                    row.push(g17(s.avg_cost));
                    row
                })
                .collect();
            writer.add_csv("trajectory.csv", &header, &rows);
        }
        ModelType::Lq => {
            let model = config.build_lq_model()?;
            let controller = lq_controller(config, &model)?;
            let log = simulate_lq_team(&model, controller.as_ref(), horizon, config.seed)?;
            let mut header = vec!["t".to_string()];
            for j in 0..model.z() {
                for d in 0..model.h_x() {
                    header.push(format!("xbar_{j}_{d}"));
                }
            }
            header.push("avg_cost".to_string());
            let rows: Vec<Vec<String>> = log
                .steps
                .iter()
                .map(|s| {
                    let mut row = vec![s.t.to_string()];
                    row.extend(s.deep_state.iter().map(|&v| g17(v)));
                    row.push(g17(s.avg_cost));
                    row
                })
                .collect();
            writer.add_csv("trajectory.csv", &header, &rows);
        }
    }
    Ok(())
}

fn evaluate_task(config: &ScenarioConfig, writer: &mut OutputWriter) -> Result<()> {
    let horizon = config.hyper.horizon.unwrap_or(DEFAULT_EVAL_HORIZON);
    let trials = config.hyper.trials.unwrap_or(DEFAULT_EVAL_TRIALS);
    let strategy_name = config.hyper.strategy.clone().unwrap_or_else(|| "dss".into());
    let estimate = match config.model.model_type {
        ModelType::Finite => {
            let model = config.build_finite_model()?;
            let strategy = finite_strategy(config, &model)?;
            let est = evaluate_strategy_cost(
                &model,
                &strategy,
                model.beta(),
                horizon,
                trials,
                config.seed,
            )?;
            (est.mean, est.std_error, model.beta())
        }
        ModelType::Lq => {
            let model = config.build_lq_model()?;
            let controller = lq_controller(config, &model)?;
            let est = evaluate_controller_cost(
                &model,
                controller.as_ref(),
                model.beta(),
                horizon,
                trials,
                config.seed,
            )?;
            (est.mean, est.std_error, model.beta())
        }
    };
    let value = json!({
        "strategy": strategy_name,
        "beta": estimate.2,
        "horizon": horizon,
        "trials": trials,
        "seed": config.seed,
        "mean": estimate.0,
        "std_error": estimate.1,
    });
    writer.add_json("evaluate.json", &value);
    Ok(())
}

/// Bundled smart-grid experiment: solve the Riccati reference, then learn the
/// gains model-free on the bundled seeds, emitting everything in one manifest.
pub fn run_smart_grid_example(
    overrides: &[String],
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<Vec<PathBuf>> {
    let mut config = crate::scenario::parse_scenario_str(SMART_GRID_SCENARIO, overrides)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(out) = out {
        config.output.dir = out;
    }
    if config.task.kind != TaskKind::Pg {
        return Err(CliError::Config(
            "the smart-grid example expects a pg scenario".into(),
        ));
    }
    let model = config.build_lq_model()?;
    let mut writer = OutputWriter::new(&config.output.dir, &config.output.formats);
    let (solution, riccati_value) = riccati_json(&model, &config)?;
    writer.add_json("riccati.json", &riccati_value);

    let seeds: Vec<u64> = match seed {
        Some(s) => vec![s],
        None => SMART_GRID_SEEDS.to_vec(),
    };
    let mut per_seed = Vec::new();
    let mut terminal_hits = 0usize;
    for &run_seed in &seeds {
        let mut hyper = pg_hyperparams(&config, &model);
        hyper.seed = run_seed;
        let trace = run_policy_gradient(
            &model,
            &hyper,
            Some((&solution.theta, &solution.thetabold)),
        )?;
        pg_trace_csv(&model, &trace, &mut writer, &format!("pg_trace_seed{run_seed}.csv"));
        let last = trace.points.last();
        let (dist_theta, dist_thetabold) = last
            .map(|p| (p.dist_theta, p.dist_thetabold))
            .unwrap_or((None, None));
        let terminal_within = matches!(
            (dist_theta, dist_thetabold),
            (Some(a), Some(b)) if a <= 0.05 && b <= 0.05
        );
        terminal_hits += usize::from(terminal_within);
        per_seed.push(json!({
            "seed": run_seed,
            "first_iteration_within_005": trace.first_iteration_within(0.05),
            "terminal_dist_theta": dist_theta,
            "terminal_dist_thetabold": dist_thetabold,
            "terminal_within_005": terminal_within,
        }));
    }
    let summary = json!({
        "seeds": seeds,
        "reference": {
            "theta": matrix_json(&solution.theta),
            "thetabold": matrix_json(&solution.thetabold),
        },
        "per_seed": per_seed,
        "majority_terminal_within_005": 2 * terminal_hits > seeds.len(),
    });
    writer.add_json("summary.json", &summary);
    writer.finalize(&config)
}
