use nalgebra::DMatrix;

use super::branch::{phase_currents, phase_sensitivity, Trapezoid};
use super::model::{FaultTopology, ModelSpec};
use crate::defaults;
use crate::error::{invalid, Result};
use crate::sample::MeasurementWindow;

/// Row of phase `p` current at window position `k`.
fn i_row(n: usize, p: usize, k: usize) -> usize {
    (3 + p) * n + k
}

fn v_states(spec: &ModelSpec, x: &[f64]) -> [Vec<f64>; 3] {
    let lay = &spec.layout;
    [0, 1, 2].map(|p| x[lay.v(p, 0)..lay.v(p, 0) + spec.n].to_vec())
}

/// Predicted measurements `h(x)`, ordered like [`MeasurementWindow::stacked`].
pub fn evaluate_h(spec: &ModelSpec, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    spec.check_state(x)?;
    if !(dt > 0.0) {
        return Err(invalid(format!("dt = {dt} must be positive")));
    }
    let n = spec.n;
    let lay = &spec.layout;
    let v = v_states(spec, x);
    let mut h = vec![0.0; 6 * n];
    h[..3 * n].copy_from_slice(&x[lay.v_r..lay.v_r + 3 * n]);

    if let Some(il0) = lay.il0 {
        let (r, l) = spec.branch_rl(x);
        let trap = Trapezoid::new(r, l, dt);
        for p in 0..3 {
            let il = phase_currents(&trap, x[il0 + p], &v[p]);
            h[i_row(n, p, 0)..i_row(n, p, 0) + n].copy_from_slice(&il);
        }
    }

    let g = lay.g_f.map(|g| x[g]).unwrap_or(0.0);
    for k in 0..n {
        match spec.kind.topology() {
            FaultTopology::None => {}
            FaultTopology::ThreePhase => {
                for p in 0..3 {
                    h[i_row(n, p, k)] = g * v[p][k];
                }
            }
            FaultTopology::LineGround(p) => h[i_row(n, p, k)] += g * v[p][k],
            FaultTopology::LineLine(p, q) => {
                let d = g * (v[p][k] - v[q][k]);
                h[i_row(n, p, k)] += d;
                h[i_row(n, q, k)] -= d;
            }
        }
    }
    Ok(h)
}

/// Analytic Jacobian of [`evaluate_h`], `6N x n_states`.
pub fn evaluate_jacobian(spec: &ModelSpec, x: &[f64], dt: f64) -> Result<DMatrix<f64>> {
    spec.check_state(x)?;
    if !(dt > 0.0) {
        return Err(invalid(format!("dt = {dt} must be positive")));
    }
    let n = spec.n;
    let lay = &spec.layout;
    let v = v_states(spec, x);
    let mut jac = DMatrix::<f64>::zeros(6 * n, spec.n_states);

    for p in 0..3 {
        for k in 0..n {
            jac[(p * n + k, lay.v(p, k))] = 1.0;
        }
    }

    if let Some(il0) = lay.il0 {
        let (r, l) = spec.branch_rl(x);
        for p in 0..3 {
            let sens = phase_sensitivity(r, l, dt, x[il0 + p], &v[p]);
            for m in 0..n {
                let row = i_row(n, p, m);
                jac[(row, il0 + p)] = sens.d_il0[m];
                for k in 0..=m {
                    jac[(row, lay.v(p, k))] = sens.d_v[m][k];
                }
                if let (Some(ri), Some(li)) = (lay.r, lay.l) {
                    jac[(row, ri)] = sens.d_r[m];
                    jac[(row, li)] = sens.d_l[m];
                }
            }
        }
    }

    if let Some(gi) = lay.g_f {
        let g = x[gi];
        for k in 0..n {
            match spec.kind.topology() {
                FaultTopology::None => {}
                FaultTopology::ThreePhase => {
                    for p in 0..3 {
                        jac[(i_row(n, p, k), gi)] = v[p][k];
                        jac[(i_row(n, p, k), lay.v(p, k))] = g;
                    }
                }
                FaultTopology::LineGround(p) => {
                    jac[(i_row(n, p, k), gi)] = v[p][k];
                    jac[(i_row(n, p, k), lay.v(p, k))] += g;
                }
                FaultTopology::LineLine(p, q) => {
                    let d = v[p][k] - v[q][k];
                    let (rp, rq) = (i_row(n, p, k), i_row(n, q, k));
                    jac[(rp, gi)] = d;
                    jac[(rq, gi)] = -d;
                    jac[(rp, lay.v(p, k))] += g;
                    jac[(rp, lay.v(q, k))] -= g;
                    jac[(rq, lay.v(p, k))] -= g;
                    jac[(rq, lay.v(q, k))] += g;
                }
            }
        }
    }
    Ok(jac)
}

/// Per-row noise standard deviation: sigma_v for voltage rows, sigma_i for currents.
pub fn row_sigmas(spec: &ModelSpec) -> Vec<f64> {
    let n = spec.n;
    (0..6 * n).map(|row| if row < 3 * n { spec.sigma_v } else { spec.sigma_i }).collect()
}

/// Normalised residual `(z - h(x)) / sigma` and its squared norm J.
pub fn weighted_residual(window: &MeasurementWindow, spec: &ModelSpec, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    if !(spec.sigma_v > 0.0 && spec.sigma_i > 0.0) {
        return Err(invalid("sigma_v and sigma_i must be positive"));
    }
    if window.len() != spec.n {
        return Err(invalid(format!("window has {} samples, model expects {}", window.len(), spec.n)));
    }
    let z = window.stacked();
    let h = evaluate_h(spec, x, window.dt())?;
    let eps: Vec<f64> = z
        .iter()
        .zip(&h)
        .zip(row_sigmas(spec))
        .map(|((z, h), s)| (z - h) / s)
        .collect();
    let j = eps.iter().map(|e| e * e).sum();
    Ok((eps, j))
}

/// Starting point: measured voltages, first-sample currents, nominal load, 10 S fault.
pub fn initial_guess(spec: &ModelSpec, window: &MeasurementWindow) -> Result<Vec<f64>> {
    if window.len() != spec.n {
        return Err(invalid(format!("window has {} samples, model expects {}", window.len(), spec.n)));
    }
    let lay = &spec.layout;
    let mut x = vec![0.0; spec.n_states];
    let z = window.stacked();
    x[lay.v_r..lay.v_r + 3 * spec.n].copy_from_slice(&z[..3 * spec.n]);
    if let Some(il0) = lay.il0 {
        let first = window.samples()[0].currents();
        x[il0..il0 + 3].copy_from_slice(&first);
    }
    if let Some(g) = lay.g_f {
        x[g] = defaults::G_F_INITIAL;
    }
    if let (Some(r), Some(l)) = (lay.r, lay.l) {
        x[r] = spec.params.r_load;
        x[l] = spec.params.l_load;
    }
    Ok(x)
}
