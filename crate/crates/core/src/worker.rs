//! One estimator per operating mode over a sliding window of samples.
//!
//! Every inbound sample yields exactly one reply: warming-up until the buffer
//! holds N samples, then an estimate (or a failure) per sample.

use std::collections::VecDeque;

use crate::defaults;
use crate::error::{invalid, Result};
use crate::estimator::{build_model, estimate, ModelKind, ModelSpec, SolverOptions, SystemParams};
use crate::sample::{MeasurementWindow, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfig {
    pub kind: ModelKind,
    pub window_n: usize,
    pub dt: f64,
    pub params: SystemParams,
    pub sigma_v: f64,
    pub sigma_i: f64,
    pub solver: SolverOptions,
}

impl WorkerConfig {
    pub fn new(kind: ModelKind) -> Self {
        WorkerConfig {
            kind,
            window_n: defaults::WINDOW_N,
            dt: defaults::SAMPLE_PERIOD,
            params: SystemParams::default(),
            sigma_v: defaults::SIGMA_V,
            sigma_i: defaults::SIGMA_I,
            solver: SolverOptions::default(),
        }
    }

    /// Same settings for another mode.
    pub fn for_kind(&self, kind: ModelKind) -> Self {
        WorkerConfig { kind, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_n < 2 {
            return Err(invalid(format!("window length {} < 2", self.window_n)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("sample period {} must be positive", self.dt)));
        }
        self.solver.validate()?;
        self.spec().map(|_| ())
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        build_model(self.kind, self.window_n, self.params, self.sigma_v, self.sigma_i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplyStatus {
    WarmingUp,
    Estimated,
    SolverFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerReply {
    pub model: ModelKind,
    /// Timestamp of the newest sample in the window.
    pub t: f64,
    pub status: ReplyStatus,
    pub confidence: f64,
    pub j: f64,
    pub dof: usize,
    pub params_out: Vec<(&'static str, f64)>,
}

impl WorkerReply {
    pub fn warming_up(model: ModelKind, t: f64) -> Self {
        WorkerReply { model, t, status: ReplyStatus::WarmingUp, confidence: 0.0, j: f64::NAN, dof: 0, params_out: Vec::new() }
    }

    pub fn failed(model: ModelKind, t: f64) -> Self {
        WorkerReply { status: ReplyStatus::SolverFailed, ..Self::warming_up(model, t) }
    }

    pub fn is_estimate(&self) -> bool {
        self.status == ReplyStatus::Estimated
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params_out.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Appends `sample`, dropping the oldest entries beyond `n`.
pub fn slide_window(buffer: &mut VecDeque<Sample>, sample: Sample, n: usize) {
    buffer.push_back(sample);
    while buffer.len() > n {
        buffer.pop_front();
    }
}

/// Inbound traffic for a worker.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Sample(Sample),
    /// Unparseable message; carries the timestamp if one could be read.
    Malformed(Option<f64>),
}

/// Stateful estimator for one mode.
#[derive(Debug, Clone)]
pub struct Worker {
    config: WorkerConfig,
    spec: ModelSpec,
    buffer: VecDeque<Sample>,
}

impl Worker {
    pub fn new(config: WorkerConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.spec()?;
        let buffer = VecDeque::with_capacity(config.window_n + 1);
        Ok(Worker { config, spec, buffer })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn buffer(&self) -> &VecDeque<Sample> {
        &self.buffer
    }

    fn last_t(&self) -> Option<f64> {
        self.buffer.back().map(|s| s.t)
    }

    pub fn handle(&mut self, msg: Inbound) -> WorkerReply {
        match msg {
            Inbound::Sample(s) => self.push(s),
            Inbound::Malformed(t) => {
                let t = t.or_else(|| self.last_t()).unwrap_or(f64::NAN);
                log::warn!("{}: malformed inbound message near t={t}", self.kind());
                WorkerReply::failed(self.kind(), t)
            }
        }
    }

    /// Consumes one sample and produces its reply. Invalid or out-of-order
    /// samples are answered with a failure and leave the buffer untouched.
    pub fn push(&mut self, sample: Sample) -> WorkerReply {
        let kind = self.kind();
        if let Err(e) = sample.validate() {
            log::warn!("{kind}: rejected sample: {e}");
            return WorkerReply::failed(kind, sample.t);
        }
        if let Some(prev) = self.last_t() {
            if sample.t <= prev {
                log::warn!("{kind}: out-of-order sample t={} after t={prev}", sample.t);
                return WorkerReply::failed(kind, sample.t);
            }
        }
        slide_window(&mut self.buffer, sample, self.config.window_n);
        if self.buffer.len() < self.config.window_n {
            return WorkerReply::warming_up(kind, sample.t);
        }
        let window = match MeasurementWindow::new(self.buffer.iter().copied().collect(), self.config.dt) {
            Ok(w) => w,
            Err(e) => {
                log::warn!("{kind}: window ending at t={} unusable: {e}", sample.t);
                return WorkerReply::failed(kind, sample.t);
            }
        };
        match estimate(&self.spec, &window, &self.config.solver) {
            Ok(est) => WorkerReply {
                model: kind,
                t: sample.t,
                status: ReplyStatus::Estimated,
                confidence: est.confidence,
                j: est.j,
                dof: est.dof,
                params_out: est.params_out,
            },
            Err(e) => {
                log::warn!("{kind}: solve failed at t={}: {e}", sample.t);
                WorkerReply::failed(kind, sample.t)
            }
        }
    }
}

/// Runs a worker until `inbound` ends or `emit` reports the receiver gone.
pub fn run_worker<I, F>(config: WorkerConfig, inbound: I, mut emit: F) -> Result<()>
where
    I: IntoIterator<Item = Inbound>,
    F: FnMut(WorkerReply) -> bool,
{
    let mut worker = Worker::new(config)?;
    for msg in inbound {
        if !emit(worker.handle(msg)) {
            break;
        }
    }
    Ok(())
}
