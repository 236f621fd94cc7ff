//! Domain types for finite-state teams.
//!
//! A team of `n` exchangeable agents lives on finite state and action
//! alphabets. Agents are coupled only through the empirical distribution of
//! (state, action) pairs, so the model is specified per agent: a transition
//! kernel `p(x' | x, u, D)`, a per-step cost `c(x, u, D)`, a discount factor
//! and the initial state law.

use std::fmt;
use std::sync::Arc;

use crate::error::{FiniteError, Result};

/// Tolerance for probability-vector normalization checks.
pub const PROB_TOL: f64 = 1e-12;

/// Count vector of agent states: entry `x` holds the number of agents in
/// state `x`. Dividing by `n` gives the empirical state distribution.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeepState {
    counts: Vec<u32>,
}

impl DeepState {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(FiniteError::InvalidInput(
                "deep state needs at least one coordinate".into(),
            ));
        }
        Ok(Self { counts })
    }

    /// Total number of agents.
    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, state: usize) -> u32 {
        self.counts[state]
    }

    /// Fraction of agents in `state`: d(x) = counts(x) / n.
    pub fn fraction(&self, state: usize) -> f64 {
        f64::from(self.counts[state]) / f64::from(self.n())
    }

    pub fn fractions(&self) -> Vec<f64> {
        let n = f64::from(self.n());
        self.counts.iter().map(|&c| f64::from(c) / n).collect()
    }
}

impl fmt::Display for DeepState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.counts.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Count the agents per state in an explicit state profile.
pub fn empirical_from_profile(profile: &[usize], num_states: usize) -> Result<DeepState> {
    let mut counts = vec![0u32; num_states];
    for &x in profile {
        if x >= num_states {
            return Err(FiniteError::InvalidInput(format!(
                "state symbol {x} outside alphabet of size {num_states}"
            )));
        }
        counts[x] += 1;
    }
    DeepState::new(counts)
}

/// Count matrix over (state, action) cells: entry (x, u) holds the number of
/// agents in state `x` that played action `u`. Row sums recover the deep
/// state, dividing by `n` gives the realized joint empirical distribution.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointDistribution {
    counts: Vec<u32>,
    num_actions: usize,
}

impl JointDistribution {
    pub fn new(counts: Vec<u32>, num_actions: usize) -> Result<Self> {
        if num_actions == 0 || !counts.len().is_multiple_of(num_actions) {
            return Err(FiniteError::InvalidInput(
                "joint count matrix shape must be |X| x |U|".into(),
            ));
        }
        Ok(Self {
            counts,
            num_actions,
        })
    }

    pub fn num_states(&self) -> usize {
        self.counts.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn count(&self, state: usize, action: usize) -> u32 {
        self.counts[state * self.num_actions + action]
    }

    /// Row sums over actions: the deep state this joint realization refines.
    pub fn deep_state(&self) -> DeepState {
        let counts = (0..self.num_states())
            .map(|x| (0..self.num_actions).map(|u| self.count(x, u)).sum())
            .collect();
        DeepState::new(counts).expect("row sums form a valid deep state")
    }

    /// Normalized view: D(x, u) = count(x, u) / n.
    pub fn to_law(&self) -> JointLaw {
        let n = f64::from(self.n());
        JointLaw {
            probs: self.counts.iter().map(|&c| f64::from(c) / n).collect(),
            num_actions: self.num_actions,
        }
    }
}

/// Real-valued distribution over (state, action) cells.
///
/// Kernels and costs are evaluated against this type: exact computations pass
/// realized count distributions, the mean-field path passes the plug-in
/// product m(x) * gamma(x)(u).
#[derive(Debug, Clone, PartialEq)]
pub struct JointLaw {
    probs: Vec<f64>,
    num_actions: usize,
}

impl JointLaw {
    pub fn new(probs: Vec<f64>, num_actions: usize) -> Result<Self> {
        if num_actions == 0 || !probs.len().is_multiple_of(num_actions) {
            return Err(FiniteError::InvalidInput(
                "joint law shape must be |X| x |U|".into(),
            ));
        }
        Ok(Self { probs, num_actions })
    }

    /// Plug-in joint law d(x) * gamma(x)(u) from state fractions and a local law.
    pub fn plug_in(fractions: &[f64], law: &LocalLaw) -> Self {
        let num_actions = law.num_actions();
        let mut probs = Vec::with_capacity(fractions.len() * num_actions);
        for (x, &dx) in fractions.iter().enumerate() {
            for u in 0..num_actions {
                probs.push(dx * law.prob(x, u));
            }
        }
        Self { probs, num_actions }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / (num_states * num_actions) as f64;
        Self {
            probs: vec![p; num_states * num_actions],
            num_actions,
        }
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.num_actions + action]
    }

    pub fn num_states(&self) -> usize {
        self.probs.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

/// Local control law: one action distribution per state.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalLaw {
    rows: Vec<Vec<f64>>,
}

impl LocalLaw {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (x, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(FiniteError::InvalidInput(format!(
                    "law row {x} is empty"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(FiniteError::InvalidInput(format!(
                    "law row {x} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0 + PROB_TOL).contains(&p)) {
                return Err(FiniteError::InvalidInput(format!(
                    "law row {x} has entries outside [0, 1]"
                )));
            }
        }
        Ok(Self { rows })
    }

    /// Deterministic law selecting `actions[x]` in state `x`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let mut rows = Vec::with_capacity(actions.len());
        for &u in actions {
            if u >= num_actions {
                return Err(FiniteError::InvalidInput(format!(
                    "action symbol {u} outside alphabet of size {num_actions}"
                )));
            }
            let mut row = vec![0.0; num_actions];
            row[u] = 1.0;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn num_actions(&self) -> usize {
        self.rows[0].len()
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.rows[state][action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.rows[state]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// The deterministic action in `state`, if the row is a point mass.
    pub fn deterministic_action(&self, state: usize) -> Option<usize> {
        let row = &self.rows[state];
        let mut hit = None;
        for (u, &p) in row.iter().enumerate() {
            if (p - 1.0).abs() <= PROB_TOL {
                hit = Some(u);
            } else if p.abs() > PROB_TOL {
                return None;
            }
        }
        hit
    }
}

/// Distribution over a contiguous count support {0, 1, …, len-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct CountDistribution {
    probs: Vec<f64>,
}

impl CountDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(FiniteError::InvalidInput(
                "count distribution needs a non-empty support".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(FiniteError::InvalidInput(format!(
                "count distribution sums to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn point_mass(at: usize, support_size: usize) -> Self {
        let mut probs = vec![0.0; support_size];
        probs[at] = 1.0;
        Self { probs }
    }

    pub(crate) fn from_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, count: usize) -> f64 {
        self.probs[count]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

type KernelFn = dyn Fn(usize, usize, usize, &JointLaw) -> f64 + Send + Sync;
type CostFn = dyn Fn(usize, usize, &JointLaw) -> f64 + Send + Sync;

/// Transition kernel, either a dense table (then necessarily independent of
/// the joint distribution) or a callable.
#[derive(Clone)]
pub enum KernelSpec {
    /// Dense `[x][u][x']` table.
    Table(Arc<Vec<f64>>),
    /// Callable `(x', x, u, D) -> probability`; the flag records whether it
    /// actually reads `D`.
    Callable {
        f: Arc<KernelFn>,
        depends_on_joint: bool,
    },
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Table(_) => write!(f, "KernelSpec::Table"),
            KernelSpec::Callable {
                depends_on_joint, ..
            } => write!(f, "KernelSpec::Callable(depends_on_joint={depends_on_joint})"),
        }
    }
}

/// Per-step cost, table or callable, mirroring [`KernelSpec`].
#[derive(Clone)]
pub enum CostSpec {
    /// Dense `[x][u]` table.
    Table(Arc<Vec<f64>>),
    Callable {
        f: Arc<CostFn>,
        depends_on_joint: bool,
    },
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostSpec::Table(_) => write!(f, "CostSpec::Table"),
            CostSpec::Callable {
                depends_on_joint, ..
            } => write!(f, "CostSpec::Callable(depends_on_joint={depends_on_joint})"),
        }
    }
}

/// A finite-state team model.
#[derive(Debug, Clone)]
pub struct FiniteTeamModel {
    states: Vec<String>,
    actions: Vec<String>,
    n: u32,
    beta: f64,
    initial_law: Vec<f64>,
    kernel: KernelSpec,
    cost: CostSpec,
}

impl FiniteTeamModel {
    pub fn new(
        states: Vec<String>,
        actions: Vec<String>,
        n: u32,
        beta: f64,
        initial_law: Vec<f64>,
        kernel: KernelSpec,
        cost: CostSpec,
    ) -> Result<Self> {
        if states.is_empty() || actions.is_empty() {
            return Err(FiniteError::InvalidModel(
                "state and action alphabets must be non-empty".into(),
            ));
        }
        if n == 0 {
            return Err(FiniteError::InvalidModel("agent count must be positive".into()));
        }
        if !(0.0 < beta && beta <= 1.0) {
            return Err(FiniteError::InvalidModel(format!(
                "discount factor {beta} outside (0, 1]"
            )));
        }
        if initial_law.len() != states.len() {
            return Err(FiniteError::InvalidModel(
                "initial law length must match the state alphabet".into(),
            ));
        }
        let sum: f64 = initial_law.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL || initial_law.iter().any(|&p| p < 0.0) {
            return Err(FiniteError::InvalidModel(format!(
                "initial law sums to {sum}, expected 1 with non-negative entries"
            )));
        }
        let model = Self {
            states,
            actions,
            n,
            beta,
            initial_law,
            kernel,
            cost,
        };
        model.validate_kernel_and_cost()?;
        Ok(model)
    }

    /// Convenience constructor from dense tables.
    ///
    /// `kernel[x][u][x']` and `cost[x][u]` are copied into flat row-major
    /// storage; both are independent of the joint distribution by
    /// construction.
    pub fn from_tables(
        states: Vec<String>,
        actions: Vec<String>,
        n: u32,
        beta: f64,
        initial_law: Vec<f64>,
        kernel: Vec<Vec<Vec<f64>>>,
        cost: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let nx = states.len();
        let nu = actions.len();
        if kernel.len() != nx || kernel.iter().any(|r| r.len() != nu)
            || kernel.iter().flatten().any(|p| p.len() != nx)
        {
            return Err(FiniteError::InvalidModel(
                "kernel table shape must be |X| x |U| x |X|".into(),
            ));
        }
        if cost.len() != nx || cost.iter().any(|r| r.len() != nu) {
            return Err(FiniteError::InvalidModel(
                "cost table shape must be |X| x |U|".into(),
            ));
        }
        let kernel_flat: Vec<f64> = kernel.into_iter().flatten().flatten().collect();
        let cost_flat: Vec<f64> = cost.into_iter().flatten().collect();
        Self::new(
            states,
            actions,
            n,
            beta,
            initial_law,
            KernelSpec::Table(Arc::new(kernel_flat)),
            CostSpec::Table(Arc::new(cost_flat)),
        )
    }

    fn validate_kernel_and_cost(&self) -> Result<()> {
        let nx = self.num_states();
        let nu = self.num_actions();
        match &self.kernel {
            KernelSpec::Table(table) => {
                if table.len() != nx * nu * nx {
                    return Err(FiniteError::InvalidModel(
                        "kernel table shape must be |X| x |U| x |X|".into(),
                    ));
                }
            }
            KernelSpec::Callable { .. } => {}
        }
        if let CostSpec::Table(table) = &self.cost {
            if table.len() != nx * nu {
                return Err(FiniteError::InvalidModel(
                    "cost table shape must be |X| x |U|".into(),
                ));
            }
        }
        // Rows must sum to one and costs be finite and non-negative. Callable
        // forms can only be spot-checked; the uniform joint law is the probe.
        let probe = JointLaw::uniform(nx, nu);
        for x in 0..nx {
            for u in 0..nu {
                let mut row_sum = 0.0;
                for x_next in 0..nx {
                    let p = self.kernel_prob(x_next, x, u, &probe);
                    if !(0.0..=1.0 + PROB_TOL).contains(&p) {
                        return Err(FiniteError::InvalidModel(format!(
                            "kernel({x_next}|{x},{u}) = {p} outside [0, 1]"
                        )));
                    }
                    row_sum += p;
                }
                if (row_sum - 1.0).abs() > PROB_TOL {
                    return Err(FiniteError::InvalidModel(format!(
                        "kernel row (x={x}, u={u}) sums to {row_sum}, expected 1"
                    )));
                }
                let c = self.cost_value(x, u, &probe);
                if !c.is_finite() || c < 0.0 {
                    return Err(FiniteError::InvalidModel(format!(
                        "cost({x},{u}) = {c} must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn initial_law(&self) -> &[f64] {
        &self.initial_law
    }

    /// True when the kernel reads the joint distribution beyond (x, u).
    pub fn kernel_depends_on_joint(&self) -> bool {
        match &self.kernel {
            KernelSpec::Table(_) => false,
            KernelSpec::Callable {
                depends_on_joint, ..
            } => *depends_on_joint,
        }
    }

    /// True when the cost reads the joint distribution beyond (x, u).
    pub fn cost_depends_on_joint(&self) -> bool {
        match &self.cost {
            CostSpec::Table(_) => false,
            CostSpec::Callable {
                depends_on_joint, ..
            } => *depends_on_joint,
        }
    }

    pub fn kernel_prob(&self, x_next: usize, x: usize, u: usize, joint: &JointLaw) -> f64 {
        match &self.kernel {
            KernelSpec::Table(table) => {
                let nx = self.num_states();
                let nu = self.num_actions();
                table[(x * nu + u) * nx + x_next]
            }
            KernelSpec::Callable { f, .. } => f(x_next, x, u, joint),
        }
    }

    pub fn cost_value(&self, x: usize, u: usize, joint: &JointLaw) -> f64 {
        match &self.cost {
            CostSpec::Table(table) => table[x * self.num_actions() + u],
            CostSpec::Callable { f, .. } => f(x, u, joint),
        }
    }

    /// Same model with a different agent count (alphabets and per-agent data
    /// are population-independent).
    pub fn with_agent_count(&self, n: u32) -> Result<Self> {
        Self::new(
            self.states.clone(),
            self.actions.clone(),
            n,
            self.beta,
            self.initial_law.clone(),
            self.kernel.clone(),
            self.cost.clone(),
        )
    }

    /// Same model with a different discount factor.
    pub fn with_discount(&self, beta: f64) -> Result<Self> {
        Self::new(
            self.states.clone(),
            self.actions.clone(),
            self.n,
            beta,
            self.initial_law.clone(),
            self.kernel.clone(),
            self.cost.clone(),
        )
    }

    /// Same model with a different initial state law. Learning runs restart
    /// episodes from it, so full support keeps every deep state reachable.
    pub fn with_initial_law(&self, initial_law: Vec<f64>) -> Result<Self> {
        Self::new(
            self.states.clone(),
            self.actions.clone(),
            self.n,
            self.beta,
            initial_law,
            self.kernel.clone(),
            self.cost.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_counts_profiles() {
        let d = empirical_from_profile(&[0, 0], 2).unwrap();
        assert_eq!(d.counts(), &[2, 0]);
        let d = empirical_from_profile(&[0, 1], 2).unwrap();
        assert_eq!(d.counts(), &[1, 1]);
        let d = empirical_from_profile(&[0; 10], 2).unwrap();
        assert_eq!(d.counts(), &[10, 0]);
        assert_eq!(d.n(), 10);
    }

    #[test]
    fn empirical_rejects_foreign_symbols() {
        assert!(matches!(
            empirical_from_profile(&[0, 2], 2),
            Err(FiniteError::InvalidInput(_))
        ));
    }

    #[test]
    fn local_law_rows_must_normalize() {
        assert!(LocalLaw::new(vec![vec![0.5, 0.4]]).is_err());
        let law = LocalLaw::new(vec![vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert_eq!(law.deterministic_action(0), None);
        assert_eq!(law.deterministic_action(1), Some(1));
    }

    #[test]
    fn joint_distribution_row_sums() {
        let joint = JointDistribution::new(vec![1, 2, 0, 3], 2).unwrap();
        assert_eq!(joint.deep_state().counts(), &[3, 3]);
        assert_eq!(joint.n(), 6);
        let law = joint.to_law();
        assert!((law.prob(0, 1) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn model_rejects_bad_initial_law() {
        let res = FiniteTeamModel::from_tables(
            vec!["a".into()],
            vec!["u".into()],
            2,
            0.9,
            vec![0.5],
            vec![vec![vec![1.0]]],
            vec![vec![0.0]],
        );
        assert!(matches!(res, Err(FiniteError::InvalidModel(_))));
    }

    #[test]
    fn model_rejects_non_stochastic_kernel() {
        let res = FiniteTeamModel::from_tables(
            vec!["a".into(), "b".into()],
            vec!["u".into()],
            2,
            0.9,
            vec![1.0, 0.0],
            vec![
                vec![vec![0.5, 0.4]],
                vec![vec![0.0, 1.0]],
            ],
            vec![vec![0.0], vec![0.0]],
        );
        assert!(matches!(res, Err(FiniteError::InvalidModel(_))));
    }
}
