//! Measurement CSV files: header `t,va,vb,vc,ia,ib,ic`, one sample per row.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the written samples bit for bit.

use std::io::{BufRead, Write};

use crate::error::{DseError, Result};
use crate::sample::Sample;

pub const MEASUREMENT_HEADER: &str = "t,va,vb,vc,ia,ib,ic";

pub fn format_sample(s: &Sample) -> String {
    format!("{},{},{},{},{},{},{}", s.t, s.va, s.vb, s.vc, s.ia, s.ib, s.ic)
}

/// Parses one data row. Surrounding whitespace per field is ignored.
pub fn parse_sample(line: &str) -> Result<Sample> {
    let mut vals = [0.0f64; 7];
    let mut fields = line.trim().split(',');
    for (k, v) in vals.iter_mut().enumerate() {
        let f = fields
            .next()
            .ok_or_else(|| DseError::Parse(format!("expected 7 fields, got {k}: '{line}'")))?;
        *v = f
            .trim()
            .parse()
            .map_err(|_| DseError::Parse(format!("field {} '{}' is not a number", k + 1, f.trim())))?;
    }
    if fields.next().is_some() {
        return Err(DseError::Parse(format!("more than 7 fields: '{line}'")));
    }
    let s = Sample::new(vals[0], [vals[1], vals[2], vals[3]], [vals[4], vals[5], vals[6]]);
    s.validate().map_err(|e| DseError::Parse(e.to_string()))?;
    Ok(s)
}

pub fn is_header(line: &str) -> bool {
    line.trim() == MEASUREMENT_HEADER
}

pub fn write_measurements<W: Write>(mut out: W, samples: &[Sample]) -> Result<()> {
    writeln!(out, "{MEASUREMENT_HEADER}")?;
    for s in samples {
        writeln!(out, "{}", format_sample(s))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a whole measurement file. The header is required; blank lines are
/// skipped; timestamps must strictly increase.
pub fn read_measurements<R: BufRead>(input: R) -> Result<Vec<Sample>> {
    let mut lines = input.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(DseError::Parse("empty measurement file".into())),
        }
    };
    if !is_header(&header) {
        return Err(DseError::Parse(format!("expected header '{MEASUREMENT_HEADER}', got '{}'", header.trim())));
    }
    let mut samples: Vec<Sample> = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = parse_sample(&line).map_err(|e| DseError::Parse(format!("line {}: {e}", idx + 1)))?;
        if let Some(prev) = samples.last() {
            if s.t <= prev.t {
                return Err(DseError::Parse(format!(
                    "line {}: timestamp {} does not increase (previous {})",
                    idx + 1,
                    s.t,
                    prev.t
                )));
            }
        }
        samples.push(s);
    }
    Ok(samples)
}
