//! Offline three-phase circuit simulator that produces load-bus measurements.
//!
//! Source (ideal or current-clamped) -> series R-L line -> load bus. At the
//! bus: grounded-wye R-L load (neutral to ground through `r_ground`) and the
//! switched fault conductances. Inductive branches use trapezoidal companion
//! models; each step solves the 4x4 nodal system for the three bus voltages
//! and the load neutral.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::defaults;
use crate::error::{DseError, Result};
use crate::estimator::{FaultTopology, ModelKind, SystemParams};
use crate::sample::Sample;

/// The three fault sequences plus a free-form one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    I,
    II,
    III,
    Custom,
}

impl CaseId {
    pub fn fault_kind(self) -> Option<ModelKind> {
        match self {
            CaseId::I => Some(ModelKind::FaultAG),
            CaseId::II => Some(ModelKind::FaultBC),
            CaseId::III => Some(ModelKind::Fault3P),
            CaseId::Custom => None,
        }
    }
}

impl FromStr for CaseId {
    type Err = DseError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(CaseId::I),
            "II" | "2" => Ok(CaseId::II),
            "III" | "3" => Ok(CaseId::III),
            "CUSTOM" => Ok(CaseId::Custom),
            other => Err(DseError::InvalidConfig(format!("unknown case '{other}'"))),
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CaseId::I => "I",
            CaseId::II => "II",
            CaseId::III => "III",
            CaseId::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceMode {
    Ideal,
    CurrentLimited,
}

impl FromStr for SourceMode {
    type Err = DseError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ideal" => Ok(SourceMode::Ideal),
            "current-limited" | "limited" | "clamped" => Ok(SourceMode::CurrentLimited),
            other => Err(DseError::InvalidConfig(format!("unknown source mode '{other}'"))),
        }
    }
}

/// Fault location and path conductance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultSpec {
    pub kind: ModelKind,
    /// Siemens per fault path (phase-ground, phase-phase, or each phase of a three-phase fault).
    pub conductance: f64,
}

impl FaultSpec {
    pub fn for_kind(kind: ModelKind) -> Self {
        let r = match kind.topology() {
            FaultTopology::None => f64::INFINITY,
            FaultTopology::LineGround(_) => defaults::FAULT_R_LINE_GROUND,
            FaultTopology::LineLine(..) => defaults::FAULT_R_LINE_LINE,
            FaultTopology::ThreePhase => defaults::FAULT_R_THREE_PHASE,
        };
        FaultSpec { kind, conductance: 1.0 / r }
    }

    /// Nodal admittance stamp on the three bus voltages.
    fn stamp(&self) -> [[f64; 3]; 3] {
        let g = self.conductance;
        let mut y = [[0.0; 3]; 3];
        match self.kind.topology() {
            FaultTopology::None => {}
            FaultTopology::LineGround(p) => y[p][p] += g,
            FaultTopology::LineLine(p, q) => {
                y[p][p] += g;
                y[q][q] += g;
                y[p][q] -= g;
                y[q][p] -= g;
            }
            FaultTopology::ThreePhase => {
                for (p, row) in y.iter_mut().enumerate() {
                    row[p] += g;
                }
            }
        }
        y
    }

    /// Current leaving the bus into ground through the fault.
    fn ground_current(&self, v: &[f64; 3]) -> f64 {
        match self.kind.topology() {
            FaultTopology::LineGround(p) => self.conductance * v[p],
            FaultTopology::ThreePhase => self.conductance * v.iter().sum::<f64>(),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub case: CaseId,
    pub params: SystemParams,
    pub line_r: f64,
    pub line_l: f64,
    pub fault: FaultSpec,
    pub t_fault: f64,
    pub t_end: f64,
    pub fs_out: f64,
    pub internal_step: f64,
    pub noise_sigma_v: f64,
    pub noise_sigma_i: f64,
    pub seed: u64,
    pub source_mode: SourceMode,
    /// Instantaneous clamp on each source phase current, amperes; `None` means the default.
    pub i_limit: Option<f64>,
}

impl ScenarioConfig {
    pub fn for_case(case: CaseId) -> Self {
        let kind = case.fault_kind().unwrap_or(ModelKind::Fault3P);
        ScenarioConfig {
            case,
            params: SystemParams::default(),
            line_r: defaults::LINE_R,
            line_l: defaults::LINE_L,
            fault: FaultSpec::for_kind(kind),
            t_fault: defaults::T_FAULT,
            t_end: defaults::T_END,
            fs_out: defaults::FS_OUT,
            internal_step: defaults::INTERNAL_STEP,
            noise_sigma_v: 0.0,
            noise_sigma_i: 0.0,
            seed: 0,
            source_mode: SourceMode::Ideal,
            i_limit: None,
        }
    }

    pub fn custom(kind: ModelKind) -> Self {
        ScenarioConfig { fault: FaultSpec::for_kind(kind), ..Self::for_case(CaseId::Custom) }
    }

    pub fn current_limited(mut self) -> Self {
        self.source_mode = SourceMode::CurrentLimited;
        self
    }

    /// Clamp level actually used: explicit value or 2 pu of rated peak load current.
    pub fn effective_i_limit(&self) -> f64 {
        self.i_limit
            .unwrap_or(defaults::I_LIMIT_PU * std::f64::consts::SQRT_2 * self.params.rated_current_rms())
    }

    pub fn output_period(&self) -> f64 {
        1.0 / self.fs_out
    }

    fn steps_per_sample(&self) -> usize {
        (self.output_period() / self.internal_step).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DseError::InvalidConfig(m));
        self.params.validate().map_err(|e| DseError::InvalidConfig(e.to_string()))?;
        if !(self.line_r >= 0.0 && self.line_l > 0.0) {
            return bad(format!("line impedance R={} L={} invalid", self.line_r, self.line_l));
        }
        if !(self.fs_out > 0.0 && self.internal_step > 0.0) {
            return bad("fs_out and internal_step must be positive".into());
        }
        if self.internal_step > self.output_period() * (1.0 + 1e-9) {
            return bad(format!("internal step {} exceeds output period {}", self.internal_step, self.output_period()));
        }
        let ratio = self.output_period() / self.internal_step;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return bad(format!("output period must be an integer multiple of the internal step (ratio {ratio})"));
        }
        if !(self.t_end > 0.0) {
            return bad("t_end must be positive".into());
        }
        if !(self.t_fault >= 0.0 && self.t_fault < self.t_end) {
            return bad(format!("t_fault {} must lie in [0, t_end={})", self.t_fault, self.t_end));
        }
        if matches!(self.case, CaseId::I | CaseId::II | CaseId::III) && self.fault.kind == ModelKind::Unfaulted {
            return bad("cases I-III need a fault".into());
        }
        if self.fault.kind.is_fault() && !(self.fault.conductance > 0.0 && self.fault.conductance.is_finite()) {
            return bad(format!("fault conductance {} must be positive", self.fault.conductance));
        }
        if !(self.noise_sigma_v >= 0.0 && self.noise_sigma_i >= 0.0) {
            return bad("noise sigmas must be non-negative".into());
        }
        if self.source_mode == SourceMode::CurrentLimited && !(self.effective_i_limit() > 0.0) {
            return bad("current limit must be positive".into());
        }
        Ok(())
    }
}

/// Samples plus the bookkeeping the invariant checks need.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub samples: Vec<Sample>,
    /// Ground-return current (fault to ground plus load neutral) at each output sample.
    pub ground_current: Vec<f64>,
    /// Source-side line currents at each output sample.
    pub line_current: Vec<[f64; 3]>,
    /// Worst nodal current balance error over all internal steps, relative to the largest branch current.
    pub max_kcl_residual: f64,
}

/// Series R-L branch as a conductance plus history current source.
#[derive(Debug, Clone, Copy)]
struct Companion {
    g: f64,
    alpha: f64,
    beta: f64,
}

impl Companion {
    fn trapezoidal(r: f64, l: f64, h: f64) -> Self {
        let denom = l / h + 0.5 * r;
        let g = 0.5 / denom;
        Companion { g, alpha: (l / h - 0.5 * r) / denom, beta: g }
    }

    fn backward_euler(r: f64, l: f64, h: f64) -> Self {
        let g = 1.0 / (r + l / h);
        Companion { g, alpha: l / h * g, beta: 0.0 }
    }

    fn history(&self, i_prev: f64, dv_prev: f64) -> f64 {
        self.alpha * i_prev + self.beta * dv_prev
    }
}

/// Companion pair used for one integration step.
#[derive(Debug, Clone, Copy)]
struct Scheme {
    line: Companion,
    load: Companion,
}

struct Network {
    e_peak: f64,
    omega: f64,
    trap: Scheme,
    damped: Scheme,
    half_step: f64,
    inv_rg: Option<f64>,
    fault: FaultSpec,
    i_limit: Option<f64>,
}

/// How a source phase is driven during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Drive {
    Emf,
    Current(f64),
    Voltage(f64),
}

impl Drive {
    fn code(self) -> u8 {
        match self {
            Drive::Emf => 0,
            Drive::Current(_) => 1,
            Drive::Voltage(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct State {
    v: [f64; 3],
    i_line: [f64; 3],
    i_load: [f64; 3],
    dv_line: [f64; 3],
    dv_load: [f64; 3],
    vn: f64,
    modes: [u8; 3],
    damp: bool,
}

impl Network {
    fn source(&self, t: f64) -> [f64; 3] {
        let third = 2.0 * std::f64::consts::PI / 3.0;
        [0, 1, 2].map(|p| self.e_peak * (self.omega * t - third * p as f64).cos())
    }

    fn solve(
        &self,
        sch: &Scheme,
        e: &[f64; 3],
        prev: &State,
        faulted: bool,
        drive: &[Drive; 3],
    ) -> Result<State> {
        let hl: [f64; 3] = [0, 1, 2].map(|p| sch.line.history(prev.i_line[p], prev.dv_line[p]));
        let hd: [f64; 3] = [0, 1, 2].map(|p| sch.load.history(prev.i_load[p], prev.dv_load[p]));
        let yf = if faulted { self.fault.stamp() } else { [[0.0; 3]; 3] };
        let (gl, gd) = (sch.line.g, sch.load.g);

        let mut a = Matrix4::<f64>::zeros();
        let mut b = Vector4::<f64>::zeros();
        for p in 0..3 {
            for q in 0..3 {
                a[(p, q)] = yf[p][q];
            }
            a[(p, p)] += gd;
            a[(p, 3)] = -gd;
            match drive[p] {
                Drive::Current(ic) => b[p] = ic - hd[p],
                Drive::Voltage(u) => {
                    a[(p, p)] += gl;
                    b[p] = gl * u + hl[p] - hd[p];
                }
                Drive::Emf => {
                    a[(p, p)] += gl;
                    b[p] = gl * e[p] + hl[p] - hd[p];
                }
            }
        }
        match self.inv_rg {
            Some(inv_rg) => {
                for p in 0..3 {
                    a[(3, p)] = gd;
                }
                a[(3, 3)] = -(3.0 * gd + inv_rg);
                b[3] = -(hd[0] + hd[1] + hd[2]);
            }
            None => {
                a[(3, 3)] = 1.0;
            }
        }
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| DseError::InvalidConfig("singular network matrix".into()))?;
        let v = [x[0], x[1], x[2]];
        let vn = x[3];
        let mut next = State { v, vn, ..*prev };
        for p in 0..3 {
            next.dv_load[p] = v[p] - vn;
            next.i_load[p] = gd * next.dv_load[p] + hd[p];
            match drive[p] {
                Drive::Current(ic) => {
                    next.i_line[p] = ic;
                    next.dv_line[p] = (ic - hl[p]) / gl;
                }
                Drive::Voltage(u) => {
                    next.dv_line[p] = u - v[p];
                    next.i_line[p] = gl * next.dv_line[p] + hl[p];
                }
                Drive::Emf => {
                    next.dv_line[p] = e[p] - v[p];
                    next.i_line[p] = gl * next.dv_line[p] + hl[p];
                }
            }
        }
        Ok(next)
    }

    /// One step. With a current limit, phases whose free current exceeds the
    /// limit are held at the limit, provided the terminal voltage that takes
    /// stays within the source's peak EMF; otherwise the terminal saturates.
    /// The step after any phase enters or leaves the limit is taken as two
    /// backward Euler half steps so the trapezoidal rule does not ring.
    fn step(&self, t: f64, prev: &State, faulted: bool) -> Result<State> {
        let mut next = if prev.damp {
            let mid = self.limited_step(&self.damped, t - self.half_step, prev, faulted)?;
            self.limited_step(&self.damped, t, &mid, faulted)?
        } else {
            self.limited_step(&self.trap, t, prev, faulted)?
        };
        next.damp = next.modes != prev.modes;
        Ok(next)
    }

    fn limited_step(&self, sch: &Scheme, t: f64, prev: &State, faulted: bool) -> Result<State> {
        let e = self.source(t);
        let mut drive = [Drive::Emf; 3];
        let mut next = self.solve(sch, &e, prev, faulted, &drive)?;
        let Some(lim) = self.i_limit else {
            return Ok(next);
        };
        for _ in 0..8 {
            let mut changed = false;
            for p in 0..3 {
                match drive[p] {
                    Drive::Emf if next.i_line[p].abs() > lim => {
                        drive[p] = Drive::Current(lim.copysign(next.i_line[p]));
                        changed = true;
                    }
                    Drive::Current(_) => {
                        let u = next.v[p] + next.dv_line[p];
                        if u.abs() > self.e_peak {
                            drive[p] = Drive::Voltage(self.e_peak.copysign(u));
                            changed = true;
                        }
                    }
                    _ => {}
                }
            }
            if !changed {
                break;
            }
            next = self.solve(sch, &e, prev, faulted, &drive)?;
        }
        next.modes = drive.map(Drive::code);
        Ok(next)
    }

    fn kcl_residual(&self, s: &State, faulted: bool) -> f64 {
        let yf = if faulted { self.fault.stamp() } else { [[0.0; 3]; 3] };
        let mut worst: f64 = 0.0;
        let scale = s.i_line.iter().chain(&s.i_load).fold(1.0f64, |m, x| m.max(x.abs()));
        for p in 0..3 {
            let i_f: f64 = (0..3).map(|q| yf[p][q] * s.v[q]).sum();
            worst = worst.max((s.i_line[p] - s.i_load[p] - i_f).abs() / scale);
        }
        if let Some(inv_rg) = self.inv_rg {
            let sum: f64 = s.i_load.iter().sum();
            worst = worst.max((sum - s.vn * inv_rg).abs() / scale);
        }
        worst
    }

    /// Sinusoidal steady state of the unfaulted network at t = 0.
    fn steady_state(&self, params: &SystemParams, line_r: f64, line_l: f64) -> State {
        let w = self.omega;
        let z_line = Complex64::new(line_r, w * line_l);
        let z_load = Complex64::new(params.r_load, w * params.l_load);
        let third = 2.0 * std::f64::consts::PI / 3.0;
        let mut s = State { v: [0.0; 3], i_line: [0.0; 3], i_load: [0.0; 3], dv_line: [0.0; 3], dv_load: [0.0; 3], vn: 0.0, modes: [0; 3], damp: false };
        for p in 0..3 {
            let e = Complex64::from_polar(self.e_peak, -third * p as f64);
            let i = e / (z_line + z_load);
            let v = e - z_line * i;
            s.v[p] = v.re;
            s.i_line[p] = i.re;
            s.i_load[p] = i.re;
            s.dv_line[p] = e.re - v.re;
            s.dv_load[p] = v.re;
        }
        s
    }
}

/// Integrate the scenario and return decimated load-bus samples.
pub fn simulate(config: &ScenarioConfig) -> Result<SimOutput> {
    config.validate()?;
    let h = config.internal_step;
    let p = &config.params;
    let net = Network {
        e_peak: p.v_phase_peak(),
        omega: p.omega(),
        trap: Scheme {
            line: Companion::trapezoidal(config.line_r, config.line_l, h),
            load: Companion::trapezoidal(p.r_load, p.l_load, h),
        },
        damped: Scheme {
            line: Companion::backward_euler(config.line_r, config.line_l, 0.5 * h),
            load: Companion::backward_euler(p.r_load, p.l_load, 0.5 * h),
        },
        half_step: 0.5 * h,
        inv_rg: (p.r_ground > 0.0).then(|| 1.0 / p.r_ground),
        fault: config.fault,
        i_limit: (config.source_mode == SourceMode::CurrentLimited).then(|| config.effective_i_limit()),
    };
    let per_sample = config.steps_per_sample();
    let n_out = (config.t_end * config.fs_out + 1e-9).floor() as usize + 1;
    let fault_step = if config.fault.kind.is_fault() {
        (config.t_fault / h - 1e-9).ceil() as usize
    } else {
        usize::MAX
    };

    let mut state = net.steady_state(p, config.line_r, config.line_l);
    let mut out = SimOutput {
        samples: Vec::with_capacity(n_out),
        ground_current: Vec::with_capacity(n_out),
        line_current: Vec::with_capacity(n_out),
        max_kcl_residual: 0.0,
    };
    let record = |out: &mut SimOutput, s: &State, k_out: usize, faulted: bool| {
        let t = k_out as f64 / config.fs_out;
        out.samples.push(Sample::new(t, s.v, s.i_line));
        let neutral = net.inv_rg.map(|g| s.vn * g).unwrap_or_else(|| s.i_load.iter().sum());
        let fault = if faulted { config.fault.ground_current(&s.v) } else { 0.0 };
        out.ground_current.push(neutral + fault);
        out.line_current.push(s.i_line);
    };
    record(&mut out, &state, 0, fault_step == 0);

    let total_steps = (n_out - 1) * per_sample;
    for k in 1..=total_steps {
        let t = k as f64 * h;
        let faulted = k >= fault_step;
        state = net.step(t, &state, faulted)?;
        out.max_kcl_residual = out.max_kcl_residual.max(net.kcl_residual(&state, faulted));
        if k % per_sample == 0 {
            record(&mut out, &state, k / per_sample, faulted);
        }
    }

    if config.noise_sigma_v > 0.0 || config.noise_sigma_i > 0.0 {
        add_noise(&mut out.samples, config.noise_sigma_v, config.noise_sigma_i, config.seed);
    }
    Ok(out)
}

/// Measurement samples for a scenario.
pub fn simulate_case(config: &ScenarioConfig) -> Result<Vec<Sample>> {
    Ok(simulate(config)?.samples)
}

fn add_noise(samples: &mut [Sample], sigma_v: f64, sigma_i: f64, seed: u64) {
    let mut rng = StdRng::seed_from_u64(seed);
    let nv = Normal::new(0.0, sigma_v).expect("sigma validated");
    let ni = Normal::new(0.0, sigma_i).expect("sigma validated");
    for s in samples {
        s.va += nv.sample(&mut rng);
        s.vb += nv.sample(&mut rng);
        s.vc += nv.sample(&mut rng);
        s.ia += ni.sample(&mut rng);
        s.ib += ni.sample(&mut rng);
        s.ic += ni.sample(&mut rng);
    }
}
