//! Model types for linear-quadratic teams with feature-weighted coupling.
//!
//! Each of the `n` agents carries linear dynamics (A, B) and quadratic costs
//! (Q, R); coupling enters only through z orthonormal linear regressions of
//! the states and actions, weighted by the impact-factor matrix alpha. The
//! stacked regressions ("deep state") obey their own linear dynamics built
//! from the aggregate matrices assembled here.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{LqError, Result};

/// Tolerance for the impact-factor orthonormality check.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Initial-state / noise distribution families.
///
/// Coordinates of the uniform family are independent; the Gaussian family
/// takes a full covariance matrix (variance, not standard deviation, on the
/// diagonal).
#[derive(Debug, Clone)]
pub enum DistributionSpec {
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
    Uniform { low: DVector<f64>, high: DVector<f64> },
    Point { value: DVector<f64> },
}

impl DistributionSpec {
    /// Scalar Gaussian with the given mean and variance.
    pub fn norm(mean: f64, variance: f64) -> Self {
        DistributionSpec::Gaussian {
            mean: DVector::from_element(1, mean),
            cov: DMatrix::from_element(1, 1, variance),
        }
    }

    /// Scalar uniform on [low, high].
    pub fn unif(low: f64, high: f64) -> Self {
        DistributionSpec::Uniform {
            low: DVector::from_element(1, low),
            high: DVector::from_element(1, high),
        }
    }

    pub fn point(value: f64) -> Self {
        DistributionSpec::Point {
            value: DVector::from_element(1, value),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DistributionSpec::Gaussian { mean, .. } => mean.len(),
            DistributionSpec::Uniform { low, .. } => low.len(),
            DistributionSpec::Point { value } => value.len(),
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        match self {
            DistributionSpec::Gaussian { mean, .. } => mean.clone(),
            DistributionSpec::Uniform { low, high } => (low + high) * 0.5,
            DistributionSpec::Point { value } => value.clone(),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            DistributionSpec::Gaussian { cov, .. } => cov.clone(),
            DistributionSpec::Uniform { low, high } => {
                let d = self.dim();
                let mut cov = DMatrix::zeros(d, d);
                for i in 0..d {
                    let w = high[i] - low[i];
                    cov[(i, i)] = w * w / 12.0;
                }
                cov
            }
            DistributionSpec::Point { value } => DMatrix::zeros(value.len(), value.len()),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(LqError::Dimension(format!(
                "distribution dimension {} does not match state dimension {dim}",
                self.dim()
            )));
        }
        match self {
            DistributionSpec::Gaussian { cov, .. } => {
                if cov.nrows() != dim || cov.ncols() != dim {
                    return Err(LqError::Dimension(
                        "covariance must be square with the state dimension".into(),
                    ));
                }
                check_symmetric_psd(cov, "covariance")?;
            }
            DistributionSpec::Uniform { low, high } => {
                if low.iter().zip(high.iter()).any(|(l, h)| h < l) {
                    return Err(LqError::InvalidModel(
                        "uniform bounds must satisfy low <= high".into(),
                    ));
                }
            }
            DistributionSpec::Point { .. } => {}
        }
        Ok(())
    }

    /// True when every covariance eigenvalue is strictly positive.
    pub fn covariance_is_pd(&self) -> bool {
        let cov = self.covariance();
        if cov.nrows() == 0 {
            return false;
        }
        cov.clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .all(|&l| l > 1e-12)
    }
}

/// Draws vectors from a [`DistributionSpec`]; the Gaussian factor is computed
/// once at construction.
pub struct Sampler {
    spec: DistributionSpec,
    gaussian_factor: Option<DMatrix<f64>>,
}

impl Sampler {
    pub fn new(spec: &DistributionSpec) -> Self {
        let gaussian_factor = match spec {
            DistributionSpec::Gaussian { cov, .. } => Some(psd_factor(cov)),
            _ => None,
        };
        Self {
            spec: spec.clone(),
            gaussian_factor,
        }
    }

    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut DVector<f64>) {
        match &self.spec {
            DistributionSpec::Gaussian { mean, .. } => {
                let factor = self.gaussian_factor.as_ref().expect("factor precomputed");
                let z = DVector::from_fn(mean.len(), |_, _| rng.sample(StandardNormal));
                out.copy_from(mean);
                out.gemv(1.0, factor, &z, 1.0);
            }
            DistributionSpec::Uniform { low, high } => {
                for i in 0..low.len() {
                    out[i] = if high[i] > low[i] {
                        rng.random_range(low[i]..high[i])
                    } else {
                        low[i]
                    };
                }
            }
            DistributionSpec::Point { value } => out.copy_from(value),
        }
    }
}

/// Factor F with F F' = cov; Cholesky when positive definite, symmetric
/// square root with clipped eigenvalues otherwise.
fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = cov.clone().cholesky() {
        return chol.l();
    }
    let eig = cov.clone().symmetric_eigen();
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * sqrt
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(LqError::Dimension(format!("{name} must be square")));
    }
    let dev = (m - m.transpose()).amax();
    if dev > 1e-9 {
        return Err(LqError::InvalidModel(format!(
            "{name} is not symmetric (max deviation {dev:.3e})"
        )));
    }
    Ok(())
}

pub(crate) fn check_symmetric_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    check_symmetric(m, name)?;
    let min_eig = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    if min_eig < -1e-9 {
        return Err(LqError::InvalidModel(format!(
            "{name} is not positive semi-definite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

pub(crate) fn check_symmetric_pd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    check_symmetric(m, name)?;
    let min_eig = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    if min_eig <= 1e-12 {
        return Err(LqError::InvalidModel(format!(
            "{name} is not positive definite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

/// Everything needed to build an [`LqTeamModel`].
#[derive(Debug, Clone)]
pub struct LqTeamParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Coupling blocks, one h_x x (z h_x) matrix per feature; empty for
    /// decoupled dynamics.
    pub abar: Vec<DMatrix<f64>>,
    /// Coupling blocks, one h_x x (z h_u) matrix per feature; empty for
    /// decoupled dynamics.
    pub bbar: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Aggregate state cost, (z h_x) square.
    pub qbar: DMatrix<f64>,
    /// Aggregate action cost, (z h_u) square.
    pub rbar: DMatrix<f64>,
    /// Impact factors, n x z, with (1/n) alpha' alpha = I.
    pub alpha: DMatrix<f64>,
    pub beta: f64,
    pub noise: DistributionSpec,
    pub initial: DistributionSpec,
    /// Coupling acts feature-by-feature (block structure is validated).
    pub weakly_coupled: bool,
}

/// A validated linear-quadratic team model.
#[derive(Debug, Clone)]
pub struct LqTeamModel {
    params: LqTeamParams,
    h_x: usize,
    h_u: usize,
    n: usize,
    z: usize,
}

impl LqTeamModel {
    pub fn new(params: LqTeamParams) -> Result<Self> {
        let h_x = params.a.nrows();
        let h_u = params.b.ncols();
        let n = params.alpha.nrows();
        let z = params.alpha.ncols();
        if params.a.ncols() != h_x {
            return Err(LqError::Dimension("A must be square".into()));
        }
        if params.b.nrows() != h_x {
            return Err(LqError::Dimension("B must have the state dimension rows".into()));
        }
        if n == 0 || z == 0 {
            return Err(LqError::InvalidModel(
                "alpha must be n x z with n, z >= 1".into(),
            ));
        }
        let mut params = params;
        if params.abar.is_empty() {
            params.abar = vec![DMatrix::zeros(h_x, z * h_x); z];
        }
        if params.bbar.is_empty() {
            params.bbar = vec![DMatrix::zeros(h_x, z * h_u); z];
        }
        if params.abar.len() != z || params.bbar.len() != z {
            return Err(LqError::Dimension(
                "coupling blocks must supply one matrix per feature".into(),
            ));
        }
        for (j, m) in params.abar.iter().enumerate() {
            if m.nrows() != h_x || m.ncols() != z * h_x {
                return Err(LqError::Dimension(format!(
                    "state coupling block {j} must be {h_x} x {}",
                    z * h_x
                )));
            }
        }
        for (j, m) in params.bbar.iter().enumerate() {
            if m.nrows() != h_x || m.ncols() != z * h_u {
                return Err(LqError::Dimension(format!(
                    "action coupling block {j} must be {h_x} x {}",
                    z * h_u
                )));
            }
        }
        if params.q.nrows() != h_x || params.q.ncols() != h_x {
            return Err(LqError::Dimension("Q must be h_x square".into()));
        }
        if params.r.nrows() != h_u || params.r.ncols() != h_u {
            return Err(LqError::Dimension("R must be h_u square".into()));
        }
        if params.qbar.nrows() != z * h_x || params.qbar.ncols() != z * h_x {
            return Err(LqError::Dimension("aggregate state cost must be (z h_x) square".into()));
        }
        if params.rbar.nrows() != z * h_u || params.rbar.ncols() != z * h_u {
            return Err(LqError::Dimension("aggregate action cost must be (z h_u) square".into()));
        }
        if !(0.0 < params.beta && params.beta <= 1.0) {
            return Err(LqError::InvalidModel(format!(
                "discount factor {} outside (0, 1]",
                params.beta
            )));
        }

        // Orthonormality of the impact factors in the feature space.
        let gram = params.alpha.transpose() * &params.alpha / n as f64;
        let dev = (&gram - DMatrix::<f64>::identity(z, z)).amax();
        if dev > ORTHONORMALITY_TOL {
            return Err(LqError::InvalidModel(format!(
                "impact factors are not orthonormal: max |(1/n) alpha'alpha - I| = {dev:.3e}"
            )));
        }

        check_symmetric_psd(&params.q, "Q")?;
        check_symmetric_pd(&params.r, "R")?;
        check_symmetric(&params.qbar, "aggregate state cost")?;
        check_symmetric(&params.rbar, "aggregate action cost")?;
        params.noise.validate(h_x)?;
        params.initial.validate(h_x)?;

        let model = Self {
            params,
            h_x,
            h_u,
            n,
            z,
        };
        // Assembled aggregate cost matrices carry the definiteness bound.
        let agg = model.aggregate_matrices();
        check_symmetric_psd(&agg.qbold, "assembled aggregate state cost")?;
        check_symmetric_pd(&agg.rbold, "assembled aggregate action cost")?;

        if model.params.weakly_coupled {
            model.validate_weak_structure()?;
        }
        Ok(model)
    }

    fn validate_weak_structure(&self) -> Result<()> {
        let (h_x, h_u, z) = (self.h_x, self.h_u, self.z);
        let tol = 1e-12;
        for (j, m) in self.params.abar.iter().enumerate() {
            for k in 0..z {
                if k == j {
                    continue;
                }
                if m.view((0, k * h_x), (h_x, h_x)).amax() > tol {
                    return Err(LqError::InvalidModel(format!(
                        "weakly coupled flag set but state coupling block {j} reads feature {k}"
                    )));
                }
            }
        }
        for (j, m) in self.params.bbar.iter().enumerate() {
            for k in 0..z {
                if k == j {
                    continue;
                }
                if m.view((0, k * h_u), (h_x, h_u)).amax() > tol {
                    return Err(LqError::InvalidModel(format!(
                        "weakly coupled flag set but action coupling block {j} reads feature {k}"
                    )));
                }
            }
        }
        for (name, mat, blk) in [
            ("aggregate state cost", &self.params.qbar, h_x),
            ("aggregate action cost", &self.params.rbar, h_u),
        ] {
            for j in 0..z {
                for k in 0..z {
                    if j != k && mat.view((j * blk, k * blk), (blk, blk)).amax() > tol {
                        return Err(LqError::InvalidModel(format!(
                            "weakly coupled flag set but {name} has off-diagonal blocks"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn h_x(&self) -> usize {
        self.h_x
    }

    pub fn h_u(&self) -> usize {
        self.h_u
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn z(&self) -> usize {
        self.z
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.params.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.params.b
    }

    pub fn abar(&self) -> &[DMatrix<f64>] {
        &self.params.abar
    }

    pub fn bbar(&self) -> &[DMatrix<f64>] {
        &self.params.bbar
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.params.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.params.r
    }

    pub fn qbar(&self) -> &DMatrix<f64> {
        &self.params.qbar
    }

    pub fn rbar(&self) -> &DMatrix<f64> {
        &self.params.rbar
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.params.alpha
    }

    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    pub fn noise(&self) -> &DistributionSpec {
        &self.params.noise
    }

    pub fn initial(&self) -> &DistributionSpec {
        &self.params.initial
    }

    pub fn weakly_coupled(&self) -> bool {
        self.params.weakly_coupled
    }

    /// Per-feature coupling block j restricted to its own feature columns.
    pub fn weak_abar_block(&self, j: usize) -> DMatrix<f64> {
        self.params.abar[j]
            .view((0, j * self.h_x), (self.h_x, self.h_x))
            .into_owned()
    }

    pub fn weak_bbar_block(&self, j: usize) -> DMatrix<f64> {
        self.params.bbar[j]
            .view((0, j * self.h_u), (self.h_x, self.h_u))
            .into_owned()
    }

    pub fn weak_qbar_block(&self, j: usize) -> DMatrix<f64> {
        self.params.qbar
            .view((j * self.h_x, j * self.h_x), (self.h_x, self.h_x))
            .into_owned()
    }

    pub fn weak_rbar_block(&self, j: usize) -> DMatrix<f64> {
        self.params.rbar
            .view((j * self.h_u, j * self.h_u), (self.h_u, self.h_u))
            .into_owned()
    }

    /// Assemble the aggregate dynamics and cost matrices.
    pub fn aggregate_matrices(&self) -> AggregateMatrices {
        build_aggregate_matrices(self)
    }

    /// Same model with a different population; alpha must be supplied anew so
    /// orthonormality can be re-checked.
    pub fn with_population(&self, alpha: DMatrix<f64>) -> Result<Self> {
        let mut params = self.params.clone();
        params.alpha = alpha;
        Self::new(params)
    }
}

/// Aggregate matrices of the deep-state dynamics and cost.
#[derive(Debug, Clone)]
pub struct AggregateMatrices {
    pub abold: DMatrix<f64>,
    pub bbold: DMatrix<f64>,
    pub qbold: DMatrix<f64>,
    pub rbold: DMatrix<f64>,
}

fn block_diag(block: &DMatrix<f64>, copies: usize) -> DMatrix<f64> {
    let (r, c) = (block.nrows(), block.ncols());
    let mut out = DMatrix::zeros(r * copies, c * copies);
    for k in 0..copies {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}

/// Stack matrices with equal column counts on top of each other.
fn row_stack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks[0].ncols();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), cols)).copy_from(b);
        at += b.nrows();
    }
    out
}

/// DIAG(A,…,A) + ROW(coupling blocks), and the analogous B, Q, R assemblies.
pub fn build_aggregate_matrices(model: &LqTeamModel) -> AggregateMatrices {
    let z = model.z();
    AggregateMatrices {
        abold: block_diag(model.a(), z) + row_stack(model.abar()),
        bbold: block_diag(model.b(), z) + row_stack(model.bbar()),
        qbold: block_diag(model.q(), z) + model.qbar(),
        rbold: block_diag(model.r(), z) + model.rbar(),
    }
}

/// Feature aggregation: block j of the output is `(1/n) sum_i alpha[i,j] v_i`,
/// where column i of `values` belongs to agent i.
pub fn aggregate(values: &DMatrix<f64>, alpha: &DMatrix<f64>) -> Result<DVector<f64>> {
    if values.ncols() != alpha.nrows() {
        return Err(LqError::Dimension(format!(
            "aggregate: {} agent columns but alpha has {} rows",
            values.ncols(),
            alpha.nrows()
        )));
    }
    let blocks = values * alpha / alpha.nrows() as f64;
    // Column-major storage lines the columns up as stacked feature blocks.
    Ok(DVector::from_column_slice(blocks.as_slice()))
}

/// Gauge decomposition of a state/action profile.
#[derive(Debug, Clone)]
pub struct GaugeDecomposition {
    /// Column i holds x_i minus its feature reconstruction.
    pub delta_states: DMatrix<f64>,
    pub delta_actions: DMatrix<f64>,
    /// Stacked feature regressions of the states.
    pub xbar: DVector<f64>,
    pub ubar: DVector<f64>,
}

/// Split a profile into per-agent deviations and stacked feature regressions.
///
/// The reconstruction `x_i = delta_i + sum_j alpha[i,j] xbar_j` is exact, and
/// the alpha-weighted means of the deviations vanish feature by feature.
pub fn gauge_transform(
    states: &DMatrix<f64>,
    actions: &DMatrix<f64>,
    alpha: &DMatrix<f64>,
) -> Result<GaugeDecomposition> {
    let n = alpha.nrows();
    if states.ncols() != n || actions.ncols() != n {
        return Err(LqError::Dimension(
            "gauge transform: one column per agent required".into(),
        ));
    }
    let x_blocks = states * alpha / n as f64; // h_x x z
    let u_blocks = actions * alpha / n as f64; // h_u x z
    let delta_states = states - &x_blocks * alpha.transpose();
    let delta_actions = actions - &u_blocks * alpha.transpose();
    Ok(GaugeDecomposition {
        delta_states,
        delta_actions,
        xbar: DVector::from_column_slice(x_blocks.as_slice()),
        ubar: DVector::from_column_slice(u_blocks.as_slice()),
    })
}

/// One agent's per-step cost: x'Qx + u'Ru + xbar' Qbar xbar + ubar' Rbar ubar.
pub fn per_step_cost(
    model: &LqTeamModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    xbar: &DVector<f64>,
    ubar: &DVector<f64>,
) -> f64 {
    (x.transpose() * model.q() * x)[(0, 0)]
        + (u.transpose() * model.r() * u)[(0, 0)]
        + (xbar.transpose() * model.qbar() * xbar)[(0, 0)]
        + (ubar.transpose() * model.rbar() * ubar)[(0, 0)]
}
