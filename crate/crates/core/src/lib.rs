//! Dynamic state estimation protection for an inverter-fed microgrid load bus.
//!
//! Three-phase voltage and current samples stream through eight concurrent
//! estimators, one per operating mode (unfaulted, three line-ground faults,
//! three line-line faults, three-phase fault). Each estimator fits its model
//! over a sliding window by weighted Gauss-Newton and scores the fit with a
//! chi-squared confidence. The orchestrator picks the best-fitting mode and
//! commits protection actions once the choice has been stable for a
//! configurable number of samples.

// `!(x > 0.0)` also rejects NaN; index loops follow the per-phase equations
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analyze;
pub mod csv;
pub mod defaults;
pub mod error;
pub mod estimator;
pub mod orchestrator;
pub mod replay;
pub mod sample;
pub mod sim;
pub mod wire;
pub mod worker;

pub use error::{DseError, Result};
pub use sample::{MeasurementWindow, Sample};
