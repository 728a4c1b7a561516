//! Per-mode load-bus models and the weighted least-squares estimator.

mod branch;
mod chi2;
mod measurement;
mod model;
mod solver;

pub use branch::simulate_branch_currents;
pub use chi2::{chi_squared_cdf, chi_squared_confidence, gamma_p, gamma_q, ln_gamma};
pub use measurement::{evaluate_h, evaluate_jacobian, initial_guess, row_sigmas, weighted_residual};
pub use model::{build_model, FaultTopology, ModelKind, ModelSpec, StateLayout, SystemParams};
pub use solver::{gauss_newton_solve, Estimate, SolverOptions};

use crate::error::Result;
use crate::sample::MeasurementWindow;

/// Initial guess followed by a full solve.
pub fn estimate(spec: &ModelSpec, window: &MeasurementWindow, opts: &SolverOptions) -> Result<Estimate> {
    let x0 = initial_guess(spec, window)?;
    gauss_newton_solve(spec, window, &x0, opts)
}
