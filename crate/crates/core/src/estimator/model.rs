use std::fmt;
use std::str::FromStr;

use crate::defaults;
use crate::error::{invalid, DseError, Result};

/// Circuit constants of the protected load bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub r_load: f64,
    pub l_load: f64,
    pub r_ground: f64,
    pub f_nom: f64,
    pub v_ll_rms: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            r_load: defaults::R_LOAD,
            l_load: defaults::L_LOAD,
            r_ground: defaults::R_GROUND,
            f_nom: defaults::F_NOM,
            v_ll_rms: defaults::V_LL_RMS,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("r_load", self.r_load, self.r_load > 0.0),
            ("l_load", self.l_load, self.l_load > 0.0),
            ("r_ground", self.r_ground, self.r_ground >= 0.0),
            ("f_nom", self.f_nom, self.f_nom > 0.0),
            ("v_ll_rms", self.v_ll_rms, self.v_ll_rms > 0.0),
        ];
        for (name, value, ok) in checks {
            if !(ok && value.is_finite()) {
                return Err(invalid(format!("{name} = {value} is out of range")));
            }
        }
        Ok(())
    }

    /// Peak phase-to-neutral source voltage.
    pub fn v_phase_peak(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.v_ll_rms / 3f64.sqrt()
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f_nom
    }

    /// Rated rms phase current of the load at nominal voltage.
    pub fn rated_current_rms(&self) -> f64 {
        let x = self.omega() * self.l_load;
        (self.v_ll_rms / 3f64.sqrt()) / self.r_load.hypot(x)
    }
}

/// The eight operating-mode hypotheses, in id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Unfaulted,
    FaultAG,
    FaultBG,
    FaultCG,
    FaultAB,
    FaultBC,
    FaultCA,
    Fault3P,
}

/// Where the fault conductance of a mode is connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultTopology {
    None,
    /// Phase index to ground.
    LineGround(usize),
    /// Between two phase indices.
    LineLine(usize, usize),
    ThreePhase,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Unfaulted,
        ModelKind::FaultAG,
        ModelKind::FaultBG,
        ModelKind::FaultCG,
        ModelKind::FaultAB,
        ModelKind::FaultBC,
        ModelKind::FaultCA,
        ModelKind::Fault3P,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<ModelKind> {
        Self::ALL.get(id).copied()
    }

    pub fn topology(self) -> FaultTopology {
        match self {
            ModelKind::Unfaulted => FaultTopology::None,
            ModelKind::FaultAG => FaultTopology::LineGround(0),
            ModelKind::FaultBG => FaultTopology::LineGround(1),
            ModelKind::FaultCG => FaultTopology::LineGround(2),
            ModelKind::FaultAB => FaultTopology::LineLine(0, 1),
            ModelKind::FaultBC => FaultTopology::LineLine(1, 2),
            ModelKind::FaultCA => FaultTopology::LineLine(2, 0),
            ModelKind::Fault3P => FaultTopology::ThreePhase,
        }
    }

    pub fn is_fault(self) -> bool {
        self != ModelKind::Unfaulted
    }

    /// Names of the parameters an estimate of this mode reports, in order.
    pub fn param_names(self) -> &'static [&'static str] {
        if self.is_fault() {
            &["G_f"]
        } else {
            &["R", "L"]
        }
    }

    /// Short label used in trace column names.
    pub fn short(self) -> &'static str {
        match self {
            ModelKind::Unfaulted => "U",
            ModelKind::FaultAG => "AG",
            ModelKind::FaultBG => "BG",
            ModelKind::FaultCG => "CG",
            ModelKind::FaultAB => "AB",
            ModelKind::FaultBC => "BC",
            ModelKind::FaultCA => "CA",
            ModelKind::Fault3P => "3P",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Unfaulted => "Unfaulted",
            ModelKind::FaultAG => "FaultAG",
            ModelKind::FaultBG => "FaultBG",
            ModelKind::FaultCG => "FaultCG",
            ModelKind::FaultAB => "FaultAB",
            ModelKind::FaultBC => "FaultBC",
            ModelKind::FaultCA => "FaultCA",
            ModelKind::Fault3P => "Fault3P",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = DseError;

    /// Accepts the full name, the short label, or the numeric id.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(id) = s.parse::<usize>() {
            return ModelKind::from_id(id).ok_or_else(|| invalid(format!("model id {id} out of range 0-7")));
        }
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || k.short().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown model '{s}'")))
    }
}

/// Index map into a model's flat state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n: usize,
    pub r: Option<usize>,
    pub l: Option<usize>,
    pub g_f: Option<usize>,
    /// First of three initial branch currents.
    pub il0: Option<usize>,
    /// First of the 3N fault-node voltages, phase-major.
    pub v_r: usize,
}

impl StateLayout {
    pub fn for_kind(kind: ModelKind, n: usize) -> Self {
        match kind {
            ModelKind::Unfaulted => StateLayout { n, r: Some(0), l: Some(1), g_f: None, il0: Some(2), v_r: 5 },
            ModelKind::Fault3P => StateLayout { n, r: None, l: None, g_f: Some(0), il0: None, v_r: 1 },
            _ => StateLayout { n, r: None, l: None, g_f: Some(0), il0: Some(1), v_r: 4 },
        }
    }

    pub fn len(&self) -> usize {
        self.v_r + 3 * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of v_r for phase `p` at window position `k` (0-based).
    pub fn v(&self, p: usize, k: usize) -> usize {
        self.v_r + p * self.n + k
    }
}

/// A fully parameterised estimator hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    pub n_states: usize,
    pub m_meas: usize,
    pub dof: usize,
    pub params: SystemParams,
    pub sigma_v: f64,
    pub sigma_i: f64,
    pub layout: StateLayout,
    /// Bounds applied to (R, L) of the unfaulted model, as a factor around nominal.
    pub load_range: f64,
}

pub fn build_model(kind: ModelKind, n: usize, params: SystemParams, sigma_v: f64, sigma_i: f64) -> Result<ModelSpec> {
    if n < 2 {
        return Err(invalid(format!("window length {n} < 2")));
    }
    params.validate()?;
    if !(sigma_v > 0.0 && sigma_i > 0.0) {
        return Err(invalid(format!("noise sigmas must be positive (sigma_v={sigma_v}, sigma_i={sigma_i})")));
    }
    let layout = StateLayout::for_kind(kind, n);
    let n_states = layout.len();
    let m_meas = 6 * n;
    Ok(ModelSpec {
        kind,
        n,
        n_states,
        m_meas,
        dof: m_meas - n_states,
        params,
        sigma_v,
        sigma_i,
        layout,
        load_range: defaults::LOAD_RANGE_FACTOR,
    })
}

impl ModelSpec {
    pub fn with_load_range(mut self, factor: f64) -> Self {
        self.load_range = factor;
        self
    }

    pub fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_states {
            return Err(invalid(format!(
                "{} state has length {}, expected {}",
                self.kind,
                x.len(),
                self.n_states
            )));
        }
        Ok(())
    }

    /// Clamp the state onto its feasible set.
    pub fn project(&self, x: &mut [f64]) {
        if let Some(g) = self.layout.g_f {
            x[g] = x[g].max(0.0);
        }
        let f = self.load_range;
        if let Some(r) = self.layout.r {
            x[r] = x[r].clamp(self.params.r_load / f, self.params.r_load * f);
        }
        if let Some(l) = self.layout.l {
            x[l] = x[l].clamp(self.params.l_load / f, self.params.l_load * f);
        }
    }

    /// Named physical parameters carried by a state vector.
    pub fn params_out(&self, x: &[f64]) -> Vec<(&'static str, f64)> {
        match (self.layout.g_f, self.layout.r, self.layout.l) {
            (Some(g), _, _) => vec![("G_f", x[g])],
            (None, Some(r), Some(l)) => vec![("R", x[r]), ("L", x[l])],
            _ => Vec::new(),
        }
    }

    /// Branch parameters used by the load recursion.
    pub(crate) fn branch_rl(&self, x: &[f64]) -> (f64, f64) {
        match (self.layout.r, self.layout.l) {
            (Some(r), Some(l)) => (x[r], x[l]),
            _ => (self.params.r_load, self.params.l_load),
        }
    }
}
