//! Deep Riccati planning: coupled local/aggregate discrete Riccati equations,
//! the optimal two-level feedback controller, its mean-field substitute, and
//! numeric verification of the standing assumptions.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{LqError, Result};
use crate::model::{
    check_symmetric_pd, check_symmetric_psd, AggregateMatrices, LqTeamModel,
};
use crate::simulate::{DssController, FeedbackGains, NsController};

/// Rank/eigenvalue tolerance for the stabilizability and detectability checks.
pub const PBH_TOL: f64 = 1e-8;

/// Solution of the two discounted algebraic Riccati equations.
#[derive(Debug, Clone)]
pub struct DeepRiccatiSolution {
    /// Local value matrix, h_x square.
    pub p: DMatrix<f64>,
    /// Aggregate value matrix, (z h_x) square.
    pub pbold: DMatrix<f64>,
    /// Local gain, h_u x h_x.
    pub theta: DMatrix<f64>,
    /// Aggregate gain, (z h_u) x (z h_x).
    pub thetabold: DMatrix<f64>,
    /// Independently re-evaluated fixed-point residuals.
    pub residual_local: f64,
    pub residual_aggregate: f64,
    pub iterations_local: usize,
    pub iterations_aggregate: usize,
}

impl DeepRiccatiSolution {
    pub fn gains(&self) -> FeedbackGains {
        FeedbackGains::new(self.theta.clone(), self.thetabold.clone())
    }
}

/// One application of the discounted Riccati map
/// P -> Q + beta A'PA - beta A'PB (B'PB + R/beta)^{-1} B'PA.
fn riccati_map(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    beta: f64,
) -> Result<DMatrix<f64>> {
    let at_p = a.transpose() * p;
    let bt_p_b = b.transpose() * p * b + r / beta;
    let bt_p_a = b.transpose() * p * a;
    let chol = bt_p_b
        .clone()
        .cholesky()
        .ok_or_else(|| LqError::InvalidModel("B'PB + R/beta is not positive definite".into()))?;
    let gain_core = chol.solve(&bt_p_a);
    let next = q + beta * (&at_p * a) - beta * (at_p * b) * gain_core;
    // Symmetrize against roundoff drift.
    Ok((&next + next.transpose()) * 0.5)
}

/// Residual of the fixed-point equation at `p`, evaluated from scratch.
pub fn riccati_residual(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    beta: f64,
) -> Result<f64> {
    Ok((p - riccati_map(p, a, b, q, r, beta)?).amax())
}

/// Gain associated with a Riccati solution: -(B'PB + R/beta)^{-1} B'PA.
fn riccati_gain(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    beta: f64,
) -> Result<DMatrix<f64>> {
    let bt_p_b = b.transpose() * p * b + r / beta;
    let bt_p_a = b.transpose() * p * a;
    let chol = bt_p_b
        .cholesky()
        .ok_or_else(|| LqError::InvalidModel("B'PB + R/beta is not positive definite".into()))?;
    Ok(-chol.solve(&bt_p_a))
}

/// Fixed-point iteration of the discounted Riccati map from P = Q.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64, usize)> {
    let mut p = q.clone();
    for iter in 1..=max_iter {
        let next = riccati_map(&p, a, b, q, r, beta)?;
        let step = (&next - &p).amax();
        p = next;
        if step <= tol {
            let residual = riccati_residual(&p, a, b, q, r, beta)?;
            let theta = riccati_gain(&p, a, b, r, beta)?;
            return Ok((p, theta, residual, iter));
        }
    }
    let residual = riccati_residual(&p, a, b, q, r, beta)?;
    Err(LqError::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|v| Complex::new(v, 0.0))
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// PBH test: (A, B) is stabilizable iff [A - lambda I, B] has full row rank
/// at every eigenvalue with |lambda| >= 1.
fn pbh_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (bool, String) {
    let h = a.nrows();
    let eigs = a.clone().complex_eigenvalues();
    for lambda in eigs.iter() {
        if lambda.norm() < 1.0 - PBH_TOL {
            continue;
        }
        let mut test = DMatrix::<Complex<f64>>::zeros(h, h + b.ncols());
        let mut shifted = to_complex(a);
        for i in 0..h {
            shifted[(i, i)] -= lambda;
        }
        test.view_mut((0, 0), (h, h)).copy_from(&shifted);
        test.view_mut((0, h), (h, b.ncols())).copy_from(&to_complex(b));
        let sv = test.svd(false, false).singular_values;
        let smax = sv.iter().fold(0.0f64, |m, &s| m.max(s));
        let rank = sv.iter().filter(|&&s| s > PBH_TOL * smax.max(1.0)).count();
        if rank < h {
            return (
                false,
                format!("rank defect at eigenvalue {lambda} (|lambda| = {:.6})", lambda.norm()),
            );
        }
    }
    (true, "full rank at every unstable mode".into())
}

/// (A, C) is detectable iff (A', C') is stabilizable.
fn pbh_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> (bool, String) {
    pbh_stabilizable(&a.transpose(), &c.transpose())
}

/// Symmetric PSD square root via the eigendecomposition.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * sqrt * eig.eigenvectors.transpose()
}

struct StabilityChecks {
    stabilizable_local: (bool, String),
    stabilizable_aggregate: (bool, String),
    detectable_local: (bool, String),
    detectable_aggregate: (bool, String),
}

/// The discount is absorbed as (sqrt(beta) A, sqrt(beta) B) before testing.
fn stability_checks(model: &LqTeamModel, agg: &AggregateMatrices) -> StabilityChecks {
    let sb = model.beta().sqrt();
    let a = model.a() * sb;
    let b = model.b() * sb;
    let abold = &agg.abold * sb;
    let bbold = &agg.bbold * sb;
    StabilityChecks {
        stabilizable_local: pbh_stabilizable(&a, &b),
        stabilizable_aggregate: pbh_stabilizable(&abold, &bbold),
        detectable_local: pbh_detectable(&a, &sqrt_psd(model.q())),
        detectable_aggregate: pbh_detectable(&abold, &sqrt_psd(&agg.qbold)),
    }
}

/// Solve both Riccati equations and derive the feedback gains.
pub fn solve_deep_riccati(
    model: &LqTeamModel,
    tol: f64,
    max_iter: usize,
) -> Result<DeepRiccatiSolution> {
    let agg = model.aggregate_matrices();
    let checks = stability_checks(model, &agg);
    for (name, (ok, detail)) in [
        ("local stabilizability", &checks.stabilizable_local),
        ("aggregate stabilizability", &checks.stabilizable_aggregate),
        ("local detectability", &checks.detectable_local),
        ("aggregate detectability", &checks.detectable_aggregate),
    ] {
        if !*ok {
            return Err(LqError::AssumptionViolated(format!("{name}: {detail}")));
        }
    }

    let beta = model.beta();
    let (p, theta, residual_local, iterations_local) =
        solve_dare(model.a(), model.b(), model.q(), model.r(), beta, tol, max_iter)?;
    let (pbold, thetabold, residual_aggregate, iterations_aggregate) = solve_dare(
        &agg.abold, &agg.bbold, &agg.qbold, &agg.rbold, beta, tol, max_iter,
    )?;
    Ok(DeepRiccatiSolution {
        p,
        pbold,
        theta,
        thetabold,
        residual_local,
        residual_aggregate,
        iterations_local,
        iterations_aggregate,
    })
}

/// Per-feature solution of the reduced aggregate Riccati equation.
#[derive(Debug, Clone)]
pub struct WeaklyCoupledBlock {
    pub pbar: DMatrix<f64>,
    pub thetabar: DMatrix<f64>,
    pub residual: f64,
}

/// For weakly coupled models the aggregate equation splits feature by
/// feature: block j solves the Riccati equation in
/// (A + Abar_j, B + Bbar_j, Q + Qbar_j, R + Rbar_j).
pub fn solve_weakly_coupled(
    model: &LqTeamModel,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<WeaklyCoupledBlock>> {
    if !model.weakly_coupled() {
        return Err(LqError::InvalidInput(
            "model is not flagged weakly coupled".into(),
        ));
    }
    let beta = model.beta();
    let mut blocks = Vec::with_capacity(model.z());
    for j in 0..model.z() {
        let a = model.a() + model.weak_abar_block(j);
        let b = model.b() + model.weak_bbar_block(j);
        let q = model.q() + model.weak_qbar_block(j);
        let r = model.r() + model.weak_rbar_block(j);
        let (pbar, thetabar, residual, _) = solve_dare(&a, &b, &q, &r, beta, tol, max_iter)?;
        blocks.push(WeaklyCoupledBlock {
            pbar,
            thetabar,
            residual,
        });
    }
    Ok(blocks)
}

/// Assemble the block-diagonal aggregate value matrix from per-feature blocks.
pub fn assemble_weakly_coupled(blocks: &[WeaklyCoupledBlock]) -> DMatrix<f64> {
    let h = blocks[0].pbar.nrows();
    let z = blocks.len();
    let mut out = DMatrix::zeros(z * h, z * h);
    for (j, blk) in blocks.iter().enumerate() {
        out.view_mut((j * h, j * h), (h, h)).copy_from(&blk.pbar);
    }
    out
}

/// Deep-state feedback controller from a Riccati solution.
pub fn dss_controller(solution: &DeepRiccatiSolution, alpha: &DMatrix<f64>) -> DssController {
    DssController::new(solution.gains(), alpha.clone())
}

/// One step of the deterministic mean-field recursion
/// m' = (Abold + Bbold thetabold) m.
pub fn propagate_mean_field(
    m: &DVector<f64>,
    aggregates: &AggregateMatrices,
    thetabold: &DMatrix<f64>,
) -> DVector<f64> {
    (&aggregates.abold + &aggregates.bbold * thetabold) * m
}

/// Expectation of the initial deep state: block j is mean(alpha[., j]) times
/// the initial mean state.
pub fn initial_mean_field(model: &LqTeamModel) -> DVector<f64> {
    let mu = model.initial().mean();
    let n = model.n() as f64;
    let mut m = DVector::zeros(model.z() * model.h_x());
    for j in 0..model.z() {
        let abar_j: f64 = model.alpha().column(j).iter().sum::<f64>() / n;
        m.rows_mut(j * model.h_x(), model.h_x())
            .copy_from(&(&mu * abar_j));
    }
    m
}

/// Mean-field controller; refuses to build when the no-sharing stability
/// condition fails (spectral radius of Abold + Bbold diag(theta) at or
/// beyond one).
pub fn ns_controller(
    model: &LqTeamModel,
    solution: &DeepRiccatiSolution,
    m1: Option<DVector<f64>>,
) -> Result<NsController> {
    let agg = model.aggregate_matrices();
    let radius = ns_stability_radius(model, &agg, &solution.theta);
    if radius >= 1.0 {
        return Err(LqError::UnstableClosedLoop {
            spectral_radius: radius,
        });
    }
    let closed_loop = &agg.abold + &agg.bbold * &solution.thetabold;
    let m1 = m1.unwrap_or_else(|| initial_mean_field(model));
    if m1.len() != model.z() * model.h_x() {
        return Err(LqError::Dimension(
            "initial mean field must stack z feature blocks".into(),
        ));
    }
    Ok(NsController::new(
        solution.gains(),
        model.alpha().clone(),
        closed_loop,
        m1,
    ))
}

/// Spectral radius of Abold + Bbold diag(theta, ..., theta).
fn ns_stability_radius(
    model: &LqTeamModel,
    agg: &AggregateMatrices,
    theta: &DMatrix<f64>,
) -> f64 {
    let z = model.z();
    let (h_u, h_x) = (model.h_u(), model.h_x());
    let mut theta_diag = DMatrix::zeros(z * h_u, z * h_x);
    for j in 0..z {
        theta_diag
            .view_mut((j * h_u, j * h_x), (h_u, h_x))
            .copy_from(theta);
    }
    spectral_radius(&(&agg.abold + &agg.bbold * theta_diag))
}

/// One verified condition.
#[derive(Debug, Clone)]
pub struct AssumptionCheck {
    pub passed: bool,
    pub detail: String,
}

impl AssumptionCheck {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

/// Numeric verification report over the model (and, when a solution is
/// supplied, the no-sharing stability condition). Report-only: nothing fails.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// Q and the assembled aggregate state cost PSD; R and the assembled
    /// aggregate action cost PD.
    pub cost_matrices: AssumptionCheck,
    pub stabilizable_local: AssumptionCheck,
    pub stabilizable_aggregate: AssumptionCheck,
    pub detectable_local: AssumptionCheck,
    pub detectable_aggregate: AssumptionCheck,
    /// Noise and initial covariances finite (uniform boundedness probe).
    pub bounded_covariances: AssumptionCheck,
    /// Spectral radius of Abold + Bbold diag(theta) strictly below one. The
    /// stability wording is continuous-time; the unit-circle reading is used
    /// for this discrete-time model and the radius is reported verbatim.
    pub ns_stability: Option<AssumptionCheck>,
    /// Noise and initial covariances strictly positive definite.
    pub pd_covariances: AssumptionCheck,
}

pub fn check_assumptions(
    model: &LqTeamModel,
    solution: Option<&DeepRiccatiSolution>,
) -> AssumptionReport {
    let agg = model.aggregate_matrices();
    let cost_ok = check_symmetric_psd(model.q(), "Q")
        .and_then(|_| check_symmetric_pd(model.r(), "R"))
        .and_then(|_| check_symmetric_psd(&agg.qbold, "assembled aggregate state cost"))
        .and_then(|_| check_symmetric_pd(&agg.rbold, "assembled aggregate action cost"));
    let cost_matrices = match cost_ok {
        Ok(()) => AssumptionCheck::new(true, "cost matrices PSD/PD as required"),
        Err(e) => AssumptionCheck::new(false, e.to_string()),
    };

    let checks = stability_checks(model, &agg);
    let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
    let bounded = finite(&model.noise().covariance()) && finite(&model.initial().covariance());
    let pd = model.noise().covariance_is_pd() && model.initial().covariance_is_pd();

    let ns_stability = solution.map(|s| {
        let radius = ns_stability_radius(model, &agg, &s.theta);
        AssumptionCheck::new(
            radius < 1.0,
            format!("spectral radius of Abold + Bbold diag(theta) = {radius:.6}"),
        )
    });

    AssumptionReport {
        cost_matrices,
        stabilizable_local: AssumptionCheck::new(
            checks.stabilizable_local.0,
            checks.stabilizable_local.1,
        ),
        stabilizable_aggregate: AssumptionCheck::new(
            checks.stabilizable_aggregate.0,
            checks.stabilizable_aggregate.1,
        ),
        detectable_local: AssumptionCheck::new(
            checks.detectable_local.0,
            checks.detectable_local.1,
        ),
        detectable_aggregate: AssumptionCheck::new(
            checks.detectable_aggregate.0,
            checks.detectable_aggregate.1,
        ),
        bounded_covariances: AssumptionCheck::new(
            bounded,
            "noise and initial covariance entries are finite",
        ),
        ns_stability,
        pd_covariances: AssumptionCheck::new(
            pd,
            "noise and initial covariances strictly positive definite",
        ),
    }
}

/// Predicted per-agent objective of the optimal controller.
///
/// The gauge change of variables splits the average per-agent cost into n
/// identical deviation subproblems (value matrix P, closed loop A + B theta,
/// noise covariance (1 - z/n) Sigma_w) and one aggregate subproblem (value
/// matrix Pbold, noise covariance (1/n) diag(Sigma_w, ..., Sigma_w)). For a
/// stable closed loop with value matrix P and noise covariance S the
/// dynamic-programming identity V(x) = x'Px + g gives
///     g = beta/(1-beta) trace(P S),
/// so the (1-beta)-normalized objective is
///     (1-beta) E[x_1' P x_1] + beta trace(P S),
/// and its beta -> 1 limit, the time-average cost, is trace(P S). Initial
/// second moments enter through the deviation average
///     S_delta = (1 - z/n) Sigma_x + (1/n) sum_i (1 - s_i)^2 mu mu',
/// with `s_i = sum_j alpha[i,j] mean_j(alpha)`, and through the aggregate
/// moment m_1 m_1' + (1/n) diag(Sigma_x).
pub fn riccati_predicted_cost(solution: &DeepRiccatiSolution, model: &LqTeamModel) -> Result<f64> {
    if model.noise().mean().amax() > 1e-12 {
        return Err(LqError::InvalidModel(
            "predicted cost assumes zero-mean noise".into(),
        ));
    }
    let agg = model.aggregate_matrices();
    let local_radius = spectral_radius(&(model.a() + model.b() * &solution.theta));
    let aggregate_radius =
        spectral_radius(&(&agg.abold + &agg.bbold * &solution.thetabold));
    let radius = local_radius.max(aggregate_radius);
    if radius >= 1.0 - 1e-12 {
        return Err(LqError::UnstableClosedLoop {
            spectral_radius: radius,
        });
    }

    let n = model.n() as f64;
    let z = model.z() as f64;
    let h_x = model.h_x();
    let sigma_w = model.noise().covariance();
    let sigma_x = model.initial().covariance();
    let mu = model.initial().mean();

    // Noise-driven steady terms.
    let noise_local = (&solution.p * &sigma_w).trace() * (1.0 - z / n);
    let mut noise_aggregate = 0.0;
    for j in 0..model.z() {
        let pjj = solution.pbold.view((j * h_x, j * h_x), (h_x, h_x));
        noise_aggregate += (pjj * &sigma_w).trace() / n;
    }

    let beta = model.beta();
    if beta >= 1.0 {
        return Ok(noise_local + noise_aggregate);
    }

    // Initial-state terms.
    let alpha_means: Vec<f64> = (0..model.z())
        .map(|j| model.alpha().column(j).iter().sum::<f64>() / n)
        .collect();
    let mut mean_weight = 0.0;
    for i in 0..model.n() {
        let s_i: f64 = (0..model.z())
            .map(|j| model.alpha()[(i, j)] * alpha_means[j])
            .sum();
        mean_weight += (1.0 - s_i) * (1.0 - s_i);
    }
    let s_delta = &sigma_x * (1.0 - z / n) + (&mu * mu.transpose()) * (mean_weight / n);
    let initial_local = (&solution.p * s_delta).trace();

    let m1 = initial_mean_field(model);
    let mut s_bar = &m1 * m1.transpose();
    for j in 0..model.z() {
        let mut view = s_bar.view_mut((j * h_x, j * h_x), (h_x, h_x));
        view += &sigma_x / n;
    }
    let initial_aggregate = (&solution.pbold * s_bar).trace();

    Ok((1.0 - beta) * (initial_local + initial_aggregate)
        + beta * (noise_local + noise_aggregate))
}
