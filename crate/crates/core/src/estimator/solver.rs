use nalgebra::{DMatrix, DVector};

use super::chi2::chi_squared_confidence;
use super::measurement::{evaluate_jacobian, row_sigmas, weighted_residual};
use super::model::ModelSpec;
use crate::defaults;
use crate::error::{invalid, DseError, Result};
use crate::sample::MeasurementWindow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub delta_j_threshold: f64,
    pub j_floor: f64,
    /// Marquardt factor on diag(HᵀH).
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: defaults::MAX_ITERATIONS,
            delta_j_threshold: defaults::DELTA_J_THRESHOLD,
            j_floor: defaults::J_FLOOR,
            damping: defaults::DAMPING,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(invalid("max_iterations must be >= 1"));
        }
        if !(self.delta_j_threshold > 0.0) {
            return Err(invalid("delta_j_threshold must be > 0"));
        }
        if !(self.damping >= 0.0) {
            return Err(invalid("damping must be >= 0"));
        }
        if !(self.j_floor >= 0.0) {
            return Err(invalid("j_floor must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub x_hat: Vec<f64>,
    pub j: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
    pub confidence: f64,
    pub params_out: Vec<(&'static str, f64)>,
}

impl Estimate {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params_out.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

fn log_j(j: f64, floor: f64) -> f64 {
    j.max(floor).max(f64::MIN_POSITIVE).ln()
}

/// One damped Gauss-Newton step for the weighted problem.
fn gn_step(spec: &ModelSpec, window: &MeasurementWindow, x: &[f64], eps: &[f64], damping: f64) -> Result<DVector<f64>> {
    let mut h = evaluate_jacobian(spec, x, window.dt())?;
    for (row, sigma) in row_sigmas(spec).into_iter().enumerate() {
        h.row_mut(row).scale_mut(1.0 / sigma);
    }
    let ht = h.transpose();
    let normal = &ht * &h;
    let grad = &ht * DVector::from_column_slice(eps);

    // column equilibration: inactive (all-zero) columns get a zero step
    let n = spec.n_states;
    let scale: Vec<f64> = (0..n)
        .map(|j| if normal[(j, j)] > 0.0 { 1.0 / normal[(j, j)].sqrt() } else { 0.0 })
        .collect();
    let mut system = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for a in 0..n {
        rhs[a] = scale[a] * grad[a];
        for b in 0..n {
            system[(a, b)] = scale[a] * normal[(a, b)] * scale[b];
        }
        system[(a, a)] = if scale[a] == 0.0 { 1.0 } else { system[(a, a)] + damping };
    }

    let y = match system.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| DseError::SingularSystem(spec.kind.to_string()))?,
    };
    if y.iter().any(|v| !v.is_finite()) {
        return Err(DseError::SingularSystem(format!("{} step is not finite", spec.kind)));
    }
    Ok(DVector::from_iterator(n, y.iter().zip(&scale).map(|(y, s)| y * s)))
}

/// Weighted Gauss-Newton fit of `spec` to `window`, starting from `x0`.
///
/// Stops when the change in log J falls below the threshold, when J drops
/// under the floor, or after `max_iterations`. A non-converged run still
/// returns its best estimate.
pub fn gauss_newton_solve(spec: &ModelSpec, window: &MeasurementWindow, x0: &[f64], opts: &SolverOptions) -> Result<Estimate> {
    opts.validate()?;
    spec.check_state(x0)?;
    let mut x = x0.to_vec();
    spec.project(&mut x);
    let (mut eps, mut j) = weighted_residual(window, spec, &x)?;
    let mut iterations = 0;
    let mut converged = j < opts.j_floor;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let step = gn_step(spec, window, &x, &eps, opts.damping)?;

        // halve the step while it makes things worse
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, di)| xi + t * di).collect();
            spec.project(&mut trial);
            let (e, jt) = weighted_residual(window, spec, &trial)?;
            if jt.is_finite() && jt <= j {
                accepted = Some((trial, e, jt));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, e, jt)) = accepted else {
            // no descent along the Gauss-Newton direction: stationary
            converged = true;
            break;
        };
        let delta = (log_j(jt, opts.j_floor) - log_j(j, opts.j_floor)).abs();
        x = trial;
        eps = e;
        j = jt;
        converged = j < opts.j_floor || delta < opts.delta_j_threshold;
    }

    let confidence = chi_squared_confidence(j, spec.dof)?;
    Ok(Estimate {
        params_out: spec.params_out(&x),
        x_hat: x,
        j,
        dof: spec.dof,
        iterations,
        converged,
        confidence,
    })
}
