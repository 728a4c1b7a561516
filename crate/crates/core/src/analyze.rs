//! Summary statistics over an orchestrator trace.

use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{invalid, DseError, Result};
use crate::estimator::ModelKind;
use crate::orchestrator::TRACE_HEADER;

/// One parsed trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub chosen: ModelKind,
    pub committed: ModelKind,
    pub action: String,
    pub confidences: [f64; 8],
    pub p1: Option<f64>,
    pub p2: Option<f64>,
}

impl TraceRow {
    pub fn max_confidence(&self) -> f64 {
        self.confidences.iter().copied().fold(0.0, f64::max)
    }
}

fn parse_opt(f: &str) -> Result<Option<f64>> {
    if f.trim().is_empty() {
        return Ok(None);
    }
    f.trim().parse().map(Some).map_err(|_| DseError::Parse(format!("bad number '{f}'")))
}

pub fn parse_trace_row(line: &str) -> Result<TraceRow> {
    let f: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
    if f.len() != 14 {
        return Err(DseError::Parse(format!("trace row has {} fields, expected 14", f.len())));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| DseError::Parse(format!("bad number '{s}'")));
    let mut confidences = [0.0; 8];
    for (k, c) in confidences.iter_mut().enumerate() {
        *c = num(f[4 + k])?;
    }
    Ok(TraceRow {
        t: num(f[0])?,
        chosen: f[1].parse().map_err(|e: DseError| DseError::Parse(e.to_string()))?,
        committed: f[2].parse().map_err(|e: DseError| DseError::Parse(e.to_string()))?,
        action: f[3].trim().to_string(),
        confidences,
        p1: parse_opt(f[12])?,
        p2: parse_opt(f[13])?,
    })
}

/// Reads a trace written by the orchestrator. A missing file body (no
/// header at all) is treated as an empty trace.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if !seen_header {
            if line.trim() != TRACE_HEADER {
                return Err(DseError::Parse(format!("line {}: expected trace header", idx + 1)));
            }
            seen_header = true;
            continue;
        }
        rows.push(parse_trace_row(&line).map_err(|e| DseError::Parse(format!("line {}: {e}", idx + 1)))?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub fault_time: Option<f64>,
    /// Rows whose best confidence is below this count as blackout.
    pub threshold: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { fault_time: None, threshold: crate::defaults::BLACKOUT_THRESHOLD }
    }
}

/// Contiguous run of low-confidence rows, as row indices `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub t_start: f64,
    pub t_end: f64,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModelStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Rows in which this mode was the argmax.
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub rows: usize,
    pub fault_time: Option<f64>,
    /// First row at or after the fault time.
    pub fault_row: Option<usize>,
    /// Rows from the fault row to the first committed fault mode.
    pub latency_samples: Option<usize>,
    pub latency_seconds: Option<f64>,
    pub detected: Option<ModelKind>,
    pub commitment_changes: usize,
    pub final_committed: Option<ModelKind>,
    /// Low-confidence spans after the first confident row.
    pub blackout_spans: Vec<Span>,
    pub threshold: f64,
    pub stats: [ModelStats; 8],
}

impl AnalysisReport {
    pub fn longest_blackout(&self) -> Option<Span> {
        self.blackout_spans.iter().copied().max_by_key(|s| s.len())
    }
}

pub fn analyze(rows: &[TraceRow], config: &AnalysisConfig) -> Result<AnalysisReport> {
    if !(0.0..=1.0).contains(&config.threshold) {
        return Err(invalid(format!("threshold {} outside [0, 1]", config.threshold)));
    }
    let fault_row = config.fault_time.and_then(|tf| rows.iter().position(|r| r.t >= tf));
    let mut latency_samples = None;
    let mut detected = None;
    if let Some(f0) = fault_row {
        if let Some(k) = rows[f0..].iter().position(|r| r.committed != ModelKind::Unfaulted) {
            latency_samples = Some(k);
            detected = Some(rows[f0 + k].committed);
        }
    }
    let latency_seconds = latency_samples.zip(fault_row).map(|(k, f0)| rows[f0 + k].t - rows[f0].t);
    let commitment_changes = rows.windows(2).filter(|w| w[0].committed != w[1].committed).count();

    let mut blackout_spans = Vec::new();
    if let Some(first) = rows.iter().position(|r| r.max_confidence() >= config.threshold) {
        let mut open: Option<usize> = None;
        for k in first..=rows.len() {
            let low = k < rows.len() && rows[k].max_confidence() < config.threshold;
            match (low, open) {
                (true, None) => open = Some(k),
                (false, Some(s)) => {
                    blackout_spans.push(Span { start: s, end: k - 1, t_start: rows[s].t, t_end: rows[k - 1].t });
                    open = None;
                }
                _ => {}
            }
        }
    }

    let mut stats = [ModelStats { mean: 0.0, min: f64::INFINITY, max: f64::NEG_INFINITY, chosen: 0 }; 8];
    for r in rows {
        for (s, c) in stats.iter_mut().zip(&r.confidences) {
            s.mean += c;
            s.min = s.min.min(*c);
            s.max = s.max.max(*c);
        }
        stats[r.chosen.id()].chosen += 1;
    }
    for s in &mut stats {
        if rows.is_empty() {
            *s = ModelStats::default();
        } else {
            s.mean /= rows.len() as f64;
        }
    }

    Ok(AnalysisReport {
        rows: rows.len(),
        fault_time: config.fault_time,
        fault_row,
        latency_samples,
        latency_seconds,
        detected,
        commitment_changes,
        final_committed: rows.last().map(|r| r.committed),
        blackout_spans,
        threshold: config.threshold,
        stats,
    })
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".into())
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows: {}", self.rows)?;
        writeln!(f, "fault_time: {}", opt(self.fault_time))?;
        writeln!(f, "latency_samples: {}", opt(self.latency_samples))?;
        writeln!(f, "latency_seconds: {}", opt(self.latency_seconds))?;
        writeln!(f, "detected: {}", opt(self.detected))?;
        writeln!(f, "commitment_changes: {}", self.commitment_changes)?;
        writeln!(f, "final_committed: {}", opt(self.final_committed))?;
        writeln!(f, "blackout_threshold: {}", self.threshold)?;
        writeln!(f, "blackout_spans: {}", self.blackout_spans.len())?;
        match self.longest_blackout() {
            Some(s) => writeln!(f, "longest_blackout: {} samples, t={}..{}", s.len(), s.t_start, s.t_end)?,
            None => writeln!(f, "longest_blackout: none")?,
        }
        writeln!(f, "model mean min max chosen")?;
        for k in ModelKind::ALL {
            let s = &self.stats[k.id()];
            writeln!(f, "{} {:.6} {:.6} {:.6} {}", k.short(), s.mean, s.min, s.max, s.chosen)?;
        }
        Ok(())
    }
}

/// Per-model statistics as CSV.
pub fn write_stats_csv<W: Write>(mut out: W, report: &AnalysisReport) -> Result<()> {
    writeln!(out, "model,mean,min,max,chosen")?;
    for k in ModelKind::ALL {
        let s = &report.stats[k.id()];
        writeln!(out, "{},{},{},{},{}", k.short(), s.mean, s.min, s.max, s.chosen)?;
    }
    out.flush()?;
    Ok(())
}
