//! Built-in defaults. Every nominal system value lives here exactly once;
//! the CLI config layer and the library constructors read from this module.

/// Load resistance per phase, ohms.
pub const R_LOAD: f64 = 18.432;
/// Load inductance per phase, henries.
pub const L_LOAD: f64 = 24e-3;
/// Load neutral to ground resistance, ohms.
pub const R_GROUND: f64 = 10e-3;
/// Nominal frequency, hertz.
pub const F_NOM: f64 = 60.0;
/// Nominal line-line rms voltage, volts.
pub const V_LL_RMS: f64 = 480.0;

/// Service-drop series resistance per phase, ohms.
pub const LINE_R: f64 = 0.097;
/// Service-drop series inductance per phase, henries.
pub const LINE_L: f64 = 88e-6;

/// Line-ground fault path resistance, ohms.
pub const FAULT_R_LINE_GROUND: f64 = 15e-3;
/// Total line-line fault path resistance, ohms.
pub const FAULT_R_LINE_LINE: f64 = 10e-3;
/// Effective per-phase three-phase fault resistance, ohms.
pub const FAULT_R_THREE_PHASE: f64 = 15e-3;

/// Fault inception time, seconds.
pub const T_FAULT: f64 = 0.25;
/// Scenario length, seconds.
pub const T_END: f64 = 0.5;
/// Output sample rate, hertz.
pub const FS_OUT: f64 = 2000.0;
/// Simulator integration step, seconds.
pub const INTERNAL_STEP: f64 = 50e-6;
/// Current clamp of the limited source, in per-unit of rated load current.
pub const I_LIMIT_PU: f64 = 2.0;

/// Estimator window length, samples.
pub const WINDOW_N: usize = 5;
/// Sample period, seconds.
pub const SAMPLE_PERIOD: f64 = 500e-6;
/// Hysteresis run length, samples.
pub const HYSTERESIS_SAMPLES: usize = 5;

/// Voltage channel noise standard deviation, volts.
pub const SIGMA_V: f64 = 0.5;
/// Current channel noise standard deviation, amperes.
pub const SIGMA_I: f64 = 0.05;

pub const MAX_ITERATIONS: usize = 25;
pub const DELTA_J_THRESHOLD: f64 = 1e-6;
pub const J_FLOOR: f64 = 1e-12;
pub const DAMPING: f64 = 1e-9;

/// Initial fault conductance guess, siemens.
pub const G_F_INITIAL: f64 = 10.0;
/// Multiplicative box around nominal R and L that the unfaulted model may roam.
pub const LOAD_RANGE_FACTOR: f64 = 10.0;

/// Confidence below which a sample counts as part of a blackout span.
pub const BLACKOUT_THRESHOLD: f64 = 0.05;
