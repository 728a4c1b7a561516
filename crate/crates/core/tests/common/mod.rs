#![allow(dead_code)]

use dse_core::estimator::{build_model, estimate, Estimate, ModelKind, ModelSpec, SolverOptions, SystemParams};
use dse_core::orchestrator::{run_orchestrator, Orchestrator, OrchestratorConfig, TraceRecord};
use dse_core::sim::{simulate_case, CaseId, ScenarioConfig};
use dse_core::worker::WorkerConfig;
use dse_core::{MeasurementWindow, Sample};

pub const N: usize = 5;
pub const DT: f64 = 5e-4;
/// Index of the first sample at or after the default fault time.
pub const FAULT_ROW: usize = 500;

pub fn spec(kind: ModelKind) -> ModelSpec {
    build_model(kind, N, SystemParams::default(), 0.5, 0.05).unwrap()
}

pub fn case_samples(case: CaseId) -> Vec<Sample> {
    simulate_case(&ScenarioConfig::for_case(case)).unwrap()
}

pub fn window_ending(samples: &[Sample], end: usize) -> MeasurementWindow {
    MeasurementWindow::new(samples[end + 1 - N..=end].to_vec(), DT).unwrap()
}

pub fn fit(kind: ModelKind, w: &MeasurementWindow) -> Estimate {
    estimate(&spec(kind), w, &SolverOptions::default()).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Full in-process pipeline over `samples`.
pub fn trace(samples: &[Sample], config: OrchestratorConfig) -> Vec<TraceRecord> {
    let orch = Orchestrator::with_threads(config, &WorkerConfig::new(ModelKind::Unfaulted)).unwrap();
    let mut out = Vec::new();
    run_orchestrator(orch, samples.iter().copied(), |s| {
        out.push(s.record.clone());
        Ok(())
    })
    .unwrap();
    out
}

/// Rows from the fault row to the first committed fault mode.
pub fn latency(records: &[TraceRecord]) -> Option<usize> {
    records[FAULT_ROW..].iter().position(|r| r.committed != ModelKind::Unfaulted)
}

pub fn commitment_changes(records: &[TraceRecord]) -> usize {
    records.windows(2).filter(|w| w[0].committed != w[1].committed).count()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}
