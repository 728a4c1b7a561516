//! Trapezoidal recursion for one series R-L load branch, with forward
//! sensitivities for the measurement Jacobian.

use crate::error::{invalid, Result};

/// Recursion coefficients `i(n) = alpha * i(n-1) + beta * (v(n) + v(n-1))`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Trapezoid {
    pub alpha: f64,
    pub beta: f64,
    denom: f64,
    l_over_dt: f64,
    dt: f64,
}

impl Trapezoid {
    pub fn new(r: f64, l: f64, dt: f64) -> Self {
        let l_over_dt = l / dt;
        let denom = l_over_dt + 0.5 * r;
        Trapezoid { alpha: (l_over_dt - 0.5 * r) / denom, beta: 0.5 / denom, denom, l_over_dt, dt }
    }

    fn d_alpha_dr(&self) -> f64 {
        -self.l_over_dt / (self.denom * self.denom)
    }

    fn d_alpha_dl(&self, r: f64) -> f64 {
        (r / self.dt) / (self.denom * self.denom)
    }

    fn d_beta_dr(&self) -> f64 {
        -0.25 / (self.denom * self.denom)
    }

    fn d_beta_dl(&self) -> f64 {
        -0.5 / (self.dt * self.denom * self.denom)
    }
}

/// Branch currents of three independent phases.
pub fn simulate_branch_currents(
    r: f64,
    l: f64,
    dt: f64,
    il0: [f64; 3],
    v_seq: &[Vec<f64>; 3],
) -> Result<[Vec<f64>; 3]> {
    if !(dt > 0.0) {
        return Err(invalid(format!("dt = {dt} must be positive")));
    }
    if !(l / dt + r / 2.0 > 0.0) {
        return Err(invalid(format!("L/dt + R/2 must be positive (R={r}, L={l})")));
    }
    let trap = Trapezoid::new(r, l, dt);
    Ok([0, 1, 2].map(|p| phase_currents(&trap, il0[p], &v_seq[p])))
}

pub(crate) fn phase_currents(trap: &Trapezoid, il0: f64, v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    if v.is_empty() {
        return out;
    }
    out.push(il0);
    for n in 1..v.len() {
        let prev = out[n - 1];
        out.push(trap.alpha * prev + trap.beta * (v[n] + v[n - 1]));
    }
    out
}

/// Partial derivatives of one phase's current trajectory.
#[derive(Debug, Clone)]
pub(crate) struct BranchSensitivity {
    /// d i(n) / d i(1)
    pub d_il0: Vec<f64>,
    /// d i(n) / d v(k), row n, column k; lower triangular.
    pub d_v: Vec<Vec<f64>>,
    pub d_r: Vec<f64>,
    pub d_l: Vec<f64>,
}

pub(crate) fn phase_sensitivity(r: f64, l: f64, dt: f64, il0: f64, v: &[f64]) -> BranchSensitivity {
    let trap = Trapezoid::new(r, l, dt);
    let n = v.len();
    let current = phase_currents(&trap, il0, v);
    let mut d_il0 = vec![1.0; n];
    let mut d_v = vec![vec![0.0; n]; n];
    let mut d_r = vec![0.0; n];
    let mut d_l = vec![0.0; n];
    let (da_r, da_l) = (trap.d_alpha_dr(), trap.d_alpha_dl(r));
    let (db_r, db_l) = (trap.d_beta_dr(), trap.d_beta_dl());
    for m in 1..n {
        d_il0[m] = trap.alpha * d_il0[m - 1];
        for k in 0..m {
            d_v[m][k] = trap.alpha * d_v[m - 1][k];
        }
        d_v[m][m] += trap.beta;
        d_v[m][m - 1] += trap.beta;
        let vsum = v[m] + v[m - 1];
        d_r[m] = da_r * current[m - 1] + trap.alpha * d_r[m - 1] + db_r * vsum;
        d_l[m] = da_l * current[m - 1] + trap.alpha * d_l[m - 1] + db_l * vsum;
    }
    BranchSensitivity { d_il0, d_v, d_r, d_l }
}

#[cfg(test)]
mod tests {
    use super::*;

    const R: f64 = 18.432;
    const L: f64 = 24e-3;

    #[test]
    fn zero_input_zero_state() {
        let v = [vec![0.0; 7], vec![0.0; 7], vec![0.0; 7]];
        let i = simulate_branch_currents(R, L, 5e-4, [0.0; 3], &v).unwrap();
        assert!(i.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let v = [vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]];
        assert!(simulate_branch_currents(R, L, 0.0, [0.0; 3], &v).is_err());
        assert!(simulate_branch_currents(R, L, -1e-4, [0.0; 3], &v).is_err());
    }

    #[test]
    fn step_response_matches_exponential() {
        // v = R volts applied from rest: i(t) = 1 - exp(-t/tau), tau = L/R
        let dt = 10e-6;
        let tau = L / R;
        assert!((tau - 1.302e-3).abs() < 1e-6);
        let n = 2000;
        let v = [vec![R; n], vec![R; n], vec![R; n]];
        let i = simulate_branch_currents(R, L, dt, [0.0; 3], &v).unwrap();
        for (k, x) in i[0].iter().enumerate() {
            let exact = 1.0 - (-(k as f64) * dt / tau).exp();
            assert!((x - exact).abs() < 1e-4, "k={k}: {x} vs {exact}");
        }
        assert!((i[0][n - 1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sinusoidal_steady_state_matches_phasor() {
        // |Z| = |18.432 + j 2 pi 60 0.024| = 20.53 ohm, angle 26.1 deg
        let dt = 50e-6;
        let w = 2.0 * std::f64::consts::PI * 60.0;
        let vpk = 277.128 * std::f64::consts::SQRT_2;
        let n = 20_000; // 1 s
        let v: Vec<f64> = (0..n).map(|k| vpk * (w * k as f64 * dt).cos()).collect();
        let i = phase_currents(&Trapezoid::new(R, L, dt), 0.0, &v);
        // project the last 3 cycles (10 000 steps = 30 cycles is plenty) onto cos/sin
        let start = n - 1000; // 1000 * 50us = 50 ms = 3 cycles
        let (mut c, mut s) = (0.0, 0.0);
        for k in start..n {
            let th = w * k as f64 * dt;
            c += i[k] * th.cos();
            s += i[k] * th.sin();
        }
        c *= 2.0 / 1000.0;
        s *= 2.0 / 1000.0;
        let peak = c.hypot(s);
        let lag = s.atan2(c).to_degrees();
        assert!((peak - 19.09).abs() < 0.01, "peak {peak}");
        assert!((lag - 26.14).abs() < 0.05, "lag {lag}");
    }
}
