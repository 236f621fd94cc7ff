//! Ready-made LQ team models used in tests and bundled scenarios.

use nalgebra::DMatrix;

use crate::model::{DistributionSpec, LqTeamModel, LqTeamParams};

/// Impact factors of the ten-user smart-grid example: six low-priority users
/// and four of increasing priority, normalized so (1/10) sum alpha_i^2 = 1.
pub fn smart_grid_alpha() -> Vec<f64> {
    let mut alpha = vec![0.5f64.sqrt(); 6];
    alpha.push(1.5f64.sqrt());
    alpha.push(1.0);
    alpha.push(2.0f64.sqrt());
    alpha.push(2.5f64.sqrt());
    alpha
}

/// Parameters of the smart-grid energy-allocation example: scalar integrator
/// users x' = x + u + w, operational cost x^2 + u^2, aggregate purchase cost
/// 4 xbar^2 + ubar^2, time-average objective.
pub fn smart_grid_params() -> LqTeamParams {
    let alpha = smart_grid_alpha();
    LqTeamParams {
        a: DMatrix::from_element(1, 1, 1.0),
        b: DMatrix::from_element(1, 1, 1.0),
        abar: vec![],
        bbar: vec![],
        q: DMatrix::from_element(1, 1, 1.0),
        r: DMatrix::from_element(1, 1, 1.0),
        qbar: DMatrix::from_element(1, 1, 4.0),
        rbar: DMatrix::from_element(1, 1, 1.0),
        alpha: DMatrix::from_column_slice(alpha.len(), 1, &alpha),
        beta: 1.0,
        noise: DistributionSpec::norm(0.0, 0.02),
        initial: DistributionSpec::unif(0.0, 0.1),
        weakly_coupled: true,
    }
}

pub fn smart_grid() -> LqTeamModel {
    LqTeamModel::new(smart_grid_params()).expect("smart-grid model is valid")
}

/// Smart-grid cost structure with a plain-average feature (alpha = 1) so the
/// population size can vary freely; used for population-trend studies.
pub fn consensus_grid(n: usize) -> LqTeamModel {
    let mut params = smart_grid_params();
    params.alpha = DMatrix::from_element(n, 1, 1.0);
    LqTeamModel::new(params).expect("consensus-grid model is valid")
}
