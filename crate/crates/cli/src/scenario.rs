//! Scenario files: a TOML document with one model section (finite or LQ),
//! the task it is written for, hyperparameters, and output settings. Unknown
//! keys are rejected everywhere.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use finite_team::FiniteTeamModel;
use lq_team::{DistributionSpec, LqTeamModel, LqTeamParams};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub task: TaskSection,
    #[serde(default)]
    pub hyper: HyperSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    PlanDss,
    PlanNs,
    Qlearn,
    Riccati,
    Pg,
    Simulate,
    Evaluate,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::PlanDss => "plan-dss",
            TaskKind::PlanNs => "plan-ns",
            TaskKind::Qlearn => "qlearn",
            TaskKind::Riccati => "riccati",
            TaskKind::Pg => "pg",
            TaskKind::Simulate => "simulate",
            TaskKind::Evaluate => "evaluate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
}

/// Model section: one flat table discriminated by `model_type`, holding the
/// union of finite and LQ fields. Field applicability is validated when the
/// model is built.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub model_type: ModelType,
    pub beta: f64,

    // Finite model fields.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    /// Transition table indexed `[state][action][next state]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<Vec<Vec<f64>>>>,
    /// Cost table indexed `[state][action]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_law: Option<Vec<f64>>,

    // LQ model fields.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qbar: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rbar: Option<Vec<Vec<f64>>>,
    /// Impact factors: one row per agent, one column per feature.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<Vec<f64>>>,
    /// Per-feature state coupling blocks, each h_x x (z h_x).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abar: Option<Vec<Vec<Vec<f64>>>>,
    /// Per-feature action coupling blocks, each h_x x (z h_u).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbar: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<DistField>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<DistField>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub weakly_coupled: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModelType {
    Finite,
    Lq,
}

/// Distribution field: either shorthand text like "norm(0, 0.02)" (variance,
/// not standard deviation), "unif(0, 0.1)" or "point(0)", or a table with an
/// explicit family and vector parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum DistField {
    Text(String),
    Table(DistTable),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DistTable {
    pub family: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub low: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub high: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HyperSection {
    // Planning.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Mean-field simplex quantization level q.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantization: Option<u32>,
    /// When set, refine the law grid with mixed laws on a step-1/q grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub law_step: Option<u32>,
    /// Term budget for exact enumerations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enumeration_budget: Option<usize>,

    // Q-learning.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episodes: Option<usize>,
    /// `"uniform"` or `"eps:<epsilon>"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub behavior: Option<String>,
    /// `"inverse-visits"` or `"poly:<exponent>"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_every: Option<usize>,

    // Policy gradient.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rollouts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_ceiling: Option<f64>,

    // Simulation / evaluation / rollout and episode length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    /// "dss", "ns" or (LQ only) "zero".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            formats: default_formats(),
        }
    }
}

/// Parse a scenario file, apply dotted-path overrides, and validate.
pub fn parse_scenario(path: &Path, overrides: &[String]) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    parse_scenario_str(&text, overrides)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Parse scenario text (used for bundled scenarios and tests).
pub fn parse_scenario_str(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let mut table: toml::Table =
        toml::from_str(text).map_err(|e| CliError::Config(format!("scenario parse error: {e}")))?;
    for entry in overrides {
        apply_override(&mut table, entry)?;
    }
    let config: ScenarioConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Config(format!("scenario validation error: {e}")))?;
    config.validate()?;
    Ok(config)
}

/// Apply one `dotted.path=value` override; the value is parsed as TOML and
/// falls back to a plain string.
fn apply_override(table: &mut toml::Table, entry: &str) -> Result<()> {
    let (path, raw_value) = entry.split_once('=').ok_or_else(|| {
        CliError::Config(format!("override '{entry}' must have the form KEY=VALUE"))
    })?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!("override key '{path}' has empty segments")));
    }
    let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw_value}")) {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(raw_value.to_string()),
    };
    let mut cursor = table;
    for seg in &segments[..segments.len() - 1] {
        cursor = cursor
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::Config(format!("override path '{path}' crosses a non-table value"))
            })?;
    }
    cursor.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        match self.model.model_type {
            ModelType::Finite => {
                self.build_finite_model()?;
            }
            ModelType::Lq => {
                self.build_lq_model()?;
            }
        }
        Ok(())
    }

    fn require<'a, T>(&self, field: &'a Option<T>, name: &str) -> Result<&'a T> {
        field.as_ref().ok_or_else(|| {
            CliError::Config(format!(
                "model.{name} is required for model_type {:?}",
                self.model.model_type
            ))
        })
    }

    fn reject_foreign(&self, present: &[(&str, bool)]) -> Result<()> {
        for (name, is_set) in present {
            if *is_set {
                return Err(CliError::Config(format!(
                    "model.{name} does not apply to model_type {:?}",
                    self.model.model_type
                )));
            }
        }
        Ok(())
    }

    pub fn build_finite_model(&self) -> Result<FiniteTeamModel> {
        let m = &self.model;
        self.reject_foreign(&[
            ("a", m.a.is_some()),
            ("b", m.b.is_some()),
            ("q", m.q.is_some()),
            ("r", m.r.is_some()),
            ("qbar", m.qbar.is_some()),
            ("rbar", m.rbar.is_some()),
            ("alpha", m.alpha.is_some()),
            ("abar", m.abar.is_some()),
            ("bbar", m.bbar.is_some()),
            ("noise", m.noise.is_some()),
            ("initial", m.initial.is_some()),
            ("weakly_coupled", m.weakly_coupled),
        ])?;
        let states = self.require(&m.states, "states")?.clone();
        let actions = self.require(&m.actions, "actions")?.clone();
        let n = *self.require(&m.n, "n")?;
        let kernel = self.require(&m.kernel, "kernel")?.clone();
        let cost = self.require(&m.cost, "cost")?.clone();
        let initial_law = self.require(&m.initial_law, "initial_law")?.clone();
        FiniteTeamModel::from_tables(states, actions, n, m.beta, initial_law, kernel, cost)
            .map_err(CliError::from)
    }

    pub fn build_lq_model(&self) -> Result<LqTeamModel> {
        let m = &self.model;
        self.reject_foreign(&[
            ("states", m.states.is_some()),
            ("actions", m.actions.is_some()),
            ("n", m.n.is_some()),
            ("kernel", m.kernel.is_some()),
            ("cost", m.cost.is_some()),
            ("initial_law", m.initial_law.is_some()),
        ])?;
        let a = to_matrix(self.require(&m.a, "a")?, "a")?;
        let b = to_matrix(self.require(&m.b, "b")?, "b")?;
        let q = to_matrix(self.require(&m.q, "q")?, "q")?;
        let r = to_matrix(self.require(&m.r, "r")?, "r")?;
        let qbar = to_matrix(self.require(&m.qbar, "qbar")?, "qbar")?;
        let rbar = to_matrix(self.require(&m.rbar, "rbar")?, "rbar")?;
        let alpha = to_matrix(self.require(&m.alpha, "alpha")?, "alpha")?;
        let abar = match &m.abar {
            Some(blocks) => blocks
                .iter()
                .enumerate()
                .map(|(j, blk)| to_matrix(blk, &format!("abar[{j}]")))
                .collect::<Result<Vec<_>>>()?,
            None => vec![],
        };
        let bbar = match &m.bbar {
            Some(blocks) => blocks
                .iter()
                .enumerate()
                .map(|(j, blk)| to_matrix(blk, &format!("bbar[{j}]")))
                .collect::<Result<Vec<_>>>()?,
            None => vec![],
        };
        let noise = dist_spec(self.require(&m.noise, "noise")?)?;
        let initial = dist_spec(self.require(&m.initial, "initial")?)?;
        LqTeamModel::new(LqTeamParams {
            a,
            b,
            abar,
            bbar,
            q,
            r,
            qbar,
            rbar,
            alpha,
            beta: m.beta,
            noise,
            initial,
            weakly_coupled: m.weakly_coupled,
        })
        .map_err(CliError::from)
    }
}

fn to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::Config(format!("model.{name} must be a non-empty matrix")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Config(format!("model.{name} rows have unequal lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

fn dist_spec(field: &DistField) -> Result<DistributionSpec> {
    match field {
        DistField::Text(text) => parse_dist_text(text),
        DistField::Table(table) => {
            let vector = |v: &Option<Vec<f64>>, name: &str| -> Result<DVector<f64>> {
                v.as_ref()
                    .map(|v| DVector::from_vec(v.clone()))
                    .ok_or_else(|| {
                        CliError::Config(format!(
                            "distribution family '{}' needs field '{name}'",
                            table.family
                        ))
                    })
            };
            match table.family.as_str() {
                "gaussian" | "norm" => {
                    let mean = vector(&table.mean, "mean")?;
                    let cov = to_matrix(
                        table.cov.as_ref().ok_or_else(|| {
                            CliError::Config("gaussian distribution needs field 'cov'".into())
                        })?,
                        "cov",
                    )?;
                    Ok(DistributionSpec::Gaussian { mean, cov })
                }
                "uniform" | "unif" => Ok(DistributionSpec::Uniform {
                    low: vector(&table.low, "low")?,
                    high: vector(&table.high, "high")?,
                }),
                "point" => Ok(DistributionSpec::Point {
                    value: vector(&table.value, "value")?,
                }),
                other => Err(CliError::Config(format!("unknown distribution family '{other}'"))),
            }
        }
    }
}

/// Shorthand forms: norm(mean, variance), unif(low, high), point(value).
fn parse_dist_text(text: &str) -> Result<DistributionSpec> {
    let trimmed = text.trim();
    let open = trimmed.find('(');
    let close = trimmed.rfind(')');
    let (name, args) = match (open, close) {
        (Some(o), Some(c)) if c > o => (&trimmed[..o], &trimmed[o + 1..c]),
        _ => {
            return Err(CliError::Config(format!(
                "cannot parse distribution '{text}': expected family(args)"
            )))
        }
    };
    let nums: Vec<f64> = args
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| {
                CliError::Config(format!("cannot parse number '{}' in '{text}'", s.trim()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    match (name.trim(), nums.as_slice()) {
        ("norm", [mean, variance]) => Ok(DistributionSpec::norm(*mean, *variance)),
        ("unif", [low, high]) => Ok(DistributionSpec::unif(*low, *high)),
        ("point", [value]) => Ok(DistributionSpec::point(*value)),
        _ => Err(CliError::Config(format!(
            "unknown distribution shorthand '{text}' (expected norm(m,v), unif(a,b) or point(v))"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMART_GRID: &str = include_str!("../scenarios/smart_grid.toml");
    const FLOW: &str = include_str!("../scenarios/two_state_flow.toml");

    #[test]
    fn smart_grid_scenario_parses_and_builds() {
        let config = parse_scenario_str(SMART_GRID, &[]).unwrap();
        assert_eq!(config.task.kind, TaskKind::Pg);
        let model = config.build_lq_model().unwrap();
        assert_eq!(model.n(), 10);
        assert_eq!(model.z(), 1);
        assert!((model.qbar()[(0, 0)] - 4.0).abs() < 1e-15);
        assert!((model.noise().covariance()[(0, 0)] - 0.02).abs() < 1e-15);
        let hyper = &config.hyper;
        assert_eq!(hyper.iters, Some(5000));
        assert_eq!(hyper.rollouts, Some(100));
        assert_eq!(hyper.horizon, Some(10));
        assert_eq!(hyper.smoothing_radius, Some(0.15));
        assert_eq!(hyper.step_size, Some(0.3));
    }

    #[test]
    fn flow_scenario_parses_and_builds() {
        let config = parse_scenario_str(FLOW, &[]).unwrap();
        assert_eq!(config.task.kind, TaskKind::PlanDss);
        let model = config.build_finite_model().unwrap();
        assert_eq!(model.n(), 4);
        assert_eq!(model.num_states(), 2);
    }

    #[test]
    fn missing_model_type_is_rejected() {
        let text = "seed = 1\n[model]\nbeta = 1.0\n[task]\nkind = \"pg\"\n";
        assert!(parse_scenario_str(text, &[]).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{SMART_GRID}\n[extra]\nx = 1\n");
        assert!(parse_scenario_str(&text, &[]).is_err());
        let bad_override = parse_scenario_str(SMART_GRID, &["hyper.not_a_key=1".into()]);
        assert!(bad_override.is_err());
    }

    #[test]
    fn non_orthonormal_alpha_is_rejected_with_invariant_name() {
        let err = parse_scenario_str(SMART_GRID, &["model.alpha=[[1.0],[0.5]]".into()])
            .map(|_| ())
            .unwrap_err();
        let message = err.to_string();
        assert!(message.contains("orthonormal"), "message was: {message}");
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let config = parse_scenario_str(
            SMART_GRID,
            &["hyper.iters=7".into(), "seed=99".into()],
        )
        .unwrap();
        assert_eq!(config.hyper.iters, Some(7));
        assert_eq!(config.seed, 99);
    }

    #[test]
    fn round_trip_is_identical() {
        for text in [SMART_GRID, FLOW] {
            let config = parse_scenario_str(text, &[]).unwrap();
            let serialized = toml::to_string(&config).unwrap();
            let reparsed = parse_scenario_str(&serialized, &[]).unwrap();
            assert_eq!(config, reparsed);
        }
    }

    #[test]
    fn structured_distribution_tables_parse() {
        let text = SMART_GRID
            .replace(
                "noise = \"norm(0, 0.02)\"",
                "noise = { family = \"gaussian\", mean = [0.0], cov = [[0.02]] }",
            )
            .replace(
                "initial = \"unif(0, 0.1)\"",
                "initial = { family = \"uniform\", low = [0.0], high = [0.1] }",
            );
        let config = parse_scenario_str(&text, &[]).unwrap();
        let model = config.build_lq_model().unwrap();
        assert!((model.noise().covariance()[(0, 0)] - 0.02).abs() < 1e-15);
        assert!((model.initial().mean()[0] - 0.05).abs() < 1e-15);
        // Missing required field for the family.
        let bad = SMART_GRID.replace(
            "noise = \"norm(0, 0.02)\"",
            "noise = { family = \"gaussian\", mean = [0.0] }",
        );
        assert!(parse_scenario_str(&bad, &[]).is_err());
    }

    #[test]
    fn dist_shorthand_parser() {
        assert!(matches!(
            parse_dist_text("norm(0, 0.02)").unwrap(),
            DistributionSpec::Gaussian { .. }
        ));
        assert!(matches!(
            parse_dist_text(" unif(0,0.1) ").unwrap(),
            DistributionSpec::Uniform { .. }
        ));
        assert!(matches!(
            parse_dist_text("point(3)").unwrap(),
            DistributionSpec::Point { .. }
        ));
        assert!(parse_dist_text("norm(0)").is_err());
        assert!(parse_dist_text("gauss(0,1)").is_err());
    }
}
