//! Line protocol between the orchestrator and worker processes.
//!
//! Inbound: `S t va vb vc ia ib ic` or `Q`.
//! Outbound: `W id t`, `C id t confidence J dof k p1 .. pk`, or `F id t`.

use std::io::{BufRead, Write};

use crate::error::{DseError, Result};
use crate::estimator::ModelKind;
use crate::sample::Sample;
use crate::worker::{Inbound, ReplyStatus, Worker, WorkerConfig, WorkerReply};

pub fn encode_sample(s: &Sample) -> String {
    format!("S {} {} {} {} {} {} {}", s.t, s.va, s.vb, s.vc, s.ia, s.ib, s.ic)
}

pub const SHUTDOWN: &str = "Q";

/// Decoded inbound line; `None` means shutdown.
pub fn decode_inbound(line: &str) -> Option<Inbound> {
    let mut it = line.split_whitespace();
    match it.next() {
        Some("Q") => None,
        Some("S") => {
            let vals: Vec<Option<f64>> = it.map(|f| f.parse().ok()).collect();
            let t = vals.first().copied().flatten();
            if vals.len() != 7 || vals.iter().any(Option::is_none) {
                return Some(Inbound::Malformed(t));
            }
            let v: Vec<f64> = vals.into_iter().flatten().collect();
            Some(Inbound::Sample(Sample::new(v[0], [v[1], v[2], v[3]], [v[4], v[5], v[6]])))
        }
        _ => Some(Inbound::Malformed(None)),
    }
}

pub fn encode_reply(r: &WorkerReply) -> String {
    let id = r.model.id();
    match r.status {
        ReplyStatus::WarmingUp => format!("W {id} {}", r.t),
        ReplyStatus::SolverFailed => format!("F {id} {}", r.t),
        ReplyStatus::Estimated => {
            let mut line = format!("C {id} {} {} {} {} {}", r.t, r.confidence, r.j, r.dof, r.params_out.len());
            for (_, v) in &r.params_out {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            line
        }
    }
}

pub fn decode_reply(line: &str) -> Result<WorkerReply> {
    let bad = || DseError::Parse(format!("malformed worker reply '{line}'"));
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() < 3 {
        return Err(bad());
    }
    let model = f[1].parse::<usize>().ok().and_then(ModelKind::from_id).ok_or_else(bad)?;
    let t: f64 = f[2].parse().map_err(|_| bad())?;
    match f[0] {
        "W" if f.len() == 3 => Ok(WorkerReply::warming_up(model, t)),
        "F" if f.len() == 3 => Ok(WorkerReply::failed(model, t)),
        "C" if f.len() >= 6 => {
            let confidence: f64 = f[3].parse().map_err(|_| bad())?;
            let j: f64 = f[4].parse().map_err(|_| bad())?;
            let dof: usize = f[5].parse().map_err(|_| bad())?;
            let k: usize = f.get(6).and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            let names = model.param_names();
            if k != names.len() || f.len() != 7 + k {
                return Err(bad());
            }
            let mut params_out = Vec::with_capacity(k);
            for (name, v) in names.iter().zip(&f[7..]) {
                params_out.push((*name, v.parse().map_err(|_| bad())?));
            }
            Ok(WorkerReply { model, t, status: ReplyStatus::Estimated, confidence, j, dof, params_out })
        }
        _ => Err(bad()),
    }
}

/// Worker process main loop over byte streams. Ends on `Q` or end of input.
pub fn serve_worker<R: BufRead, W: Write>(config: WorkerConfig, input: R, mut output: W) -> Result<()> {
    let mut worker = Worker::new(config)?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(msg) = decode_inbound(&line) else {
            break;
        };
        let reply = worker.handle(msg);
        writeln!(output, "{}", encode_reply(&reply))?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_round_trip() {
        let s = Sample::new(0.2505, [1.0 / 3.0, -391.9, 0.0], [1e-9, -27.0, 5.5]);
        assert_eq!(decode_inbound(&encode_sample(&s)), Some(Inbound::Sample(s)));
        assert_eq!(decode_inbound("Q"), None);
        assert_eq!(decode_inbound("S 0.5 1 2"), Some(Inbound::Malformed(Some(0.5))));
        assert_eq!(decode_inbound("hello"), Some(Inbound::Malformed(None)));
    }

    #[test]
    fn reply_round_trip() {
        let est = WorkerReply {
            model: ModelKind::Unfaulted,
            t: 0.1,
            status: ReplyStatus::Estimated,
            confidence: 0.987654321,
            j: 1.25e-3,
            dof: 14,
            params_out: vec![("R", 18.432), ("L", 0.024)],
        };
        for r in [est, WorkerReply::warming_up(ModelKind::FaultCA, 0.0), WorkerReply::failed(ModelKind::Fault3P, 0.3)] {
            let back = decode_reply(&encode_reply(&r)).unwrap();
            assert_eq!(back.model, r.model);
            assert_eq!(back.status, r.status);
            assert_eq!(back.t, r.t);
            assert_eq!(back.confidence, r.confidence);
            assert_eq!(back.params_out, r.params_out);
        }
    }

    #[test]
    fn rejects_bad_replies() {
        for line in ["", "C 1 0.1", "X 1 0.1", "W 9 0.1", "C 1 0.1 0.5 1 26 2 3 4", "C 0 0.1 0.5 1 26 1 18"] {
            assert!(decode_reply(line).is_err(), "{line}");
        }
    }

    #[test]
    fn serve_answers_every_message() {
        let mut input = String::new();
        for k in 0..6 {
            input.push_str(&encode_sample(&Sample::zero(k as f64 * 5e-4)));
            input.push('\n');
        }
        input.push_str("garbage\nQ\nS 9 0 0 0 0 0 0\n");
        let mut out = Vec::new();
        serve_worker(WorkerConfig::new(ModelKind::FaultAB), input.as_bytes(), &mut out).unwrap();
        let lines: Vec<_> = String::from_utf8(out).unwrap().lines().map(str::to_owned).collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[..4].iter().all(|l| l.starts_with("W 4 ")));
        assert!(lines[4].starts_with("C 4 ") || lines[4].starts_with("F 4 "));
        assert_eq!(lines[6], "F 4 0.0025");
    }
}
