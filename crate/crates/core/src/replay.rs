//! Replays a measurement file at its own sample rate, like an ADC would
//! deliver it.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::csv::{is_header, parse_sample};
use crate::error::{invalid, DseError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub input: PathBuf,
    /// 1.0 is real time; 0 emits without pausing.
    pub speed: f64,
    /// Fixed gap between rows instead of the timestamp differences.
    pub period_override: Option<f64>,
}

impl ReplayConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        ReplayConfig { input: input.into(), speed: 1.0, period_override: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(invalid(format!("speed {} must be finite and >= 0", self.speed)));
        }
        if let Some(p) = self.period_override {
            if !(p > 0.0 && p.is_finite()) {
                return Err(invalid(format!("period {p} must be positive")));
            }
        }
        Ok(())
    }
}

/// A validated file: the header line and each data row with its timestamp.
#[derive(Debug, Clone)]
pub struct ReplayFile {
    pub header: String,
    pub rows: Vec<(f64, String)>,
}

/// Reads and checks the whole file before anything is emitted. Row text is
/// kept verbatim, line terminator included.
pub fn load_replay_file(config: &ReplayConfig) -> Result<ReplayFile> {
    let text = std::fs::read_to_string(&config.input)
        .map_err(|e| DseError::Io(format!("{}: {e}", config.input.display())))?;
    let mut lines = text.split_inclusive('\n').enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| DseError::Parse(format!("{}: empty file", config.input.display())))?;
    if !is_header(header) {
        return Err(DseError::Parse(format!("{}: missing measurement header", config.input.display())));
    }
    let mut rows: Vec<(f64, String)> = Vec::new();
    for (idx, line) in lines {
        let s = parse_sample(line).map_err(|e| DseError::Parse(format!("{}:{}: {e}", config.input.display(), idx + 1)))?;
        if let Some((prev, _)) = rows.last() {
            if s.t <= *prev {
                return Err(DseError::Parse(format!(
                    "{}:{}: timestamp {} not after {prev}",
                    config.input.display(),
                    idx + 1,
                    s.t
                )));
            }
        }
        rows.push((s.t, line.to_string()));
    }
    Ok(ReplayFile { header: header.to_string(), rows })
}

fn write_line<W: Write>(out: &mut W, line: &str) -> Result<()> {
    out.write_all(line.as_bytes())?;
    if !line.ends_with('\n') {
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Sleeps most of the way, then spins, so the deadline is met to well under
/// the scheduler's sleep granularity.
fn wait_until(deadline: Instant) {
    const SPIN: Duration = Duration::from_micros(200);
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > SPIN {
            std::thread::sleep(left - SPIN);
        } else {
            std::hint::spin_loop();
        }
    }
}

/// Emits the header at once, then each row at `start + offset / speed`,
/// where offset is the row's time since the first row (or `n * period`).
/// Returns the number of data rows written.
pub fn replay<W: Write>(config: &ReplayConfig, out: &mut W) -> Result<usize> {
    config.validate()?;
    let file = load_replay_file(config)?;
    write_line(out, &file.header)?;
    let start = Instant::now();
    let t0 = file.rows.first().map(|(t, _)| *t).unwrap_or(0.0);
    for (n, (t, line)) in file.rows.iter().enumerate() {
        if config.speed > 0.0 {
            let offset = match config.period_override {
                Some(p) => n as f64 * p,
                None => t - t0,
            };
            wait_until(start + Duration::from_secs_f64(offset / config.speed));
        }
        write_line(out, line)?;
    }
    Ok(file.rows.len())
}
