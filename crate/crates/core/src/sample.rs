use crate::error::{invalid, Result};

/// One timestamped measurement at the load bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub va: f64,
    pub vb: f64,
    pub vc: f64,
    pub ia: f64,
    pub ib: f64,
    pub ic: f64,
}

impl Sample {
    pub fn new(t: f64, v: [f64; 3], i: [f64; 3]) -> Self {
        Sample { t, va: v[0], vb: v[1], vc: v[2], ia: i[0], ib: i[1], ic: i[2] }
    }

    pub fn zero(t: f64) -> Self {
        Sample::new(t, [0.0; 3], [0.0; 3])
    }

    pub fn voltages(&self) -> [f64; 3] {
        [self.va, self.vb, self.vc]
    }

    pub fn currents(&self) -> [f64; 3] {
        [self.ia, self.ib, self.ic]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(invalid(format!("sample time {} is not a finite non-negative value", self.t)));
        }
        let all_finite = self.voltages().iter().chain(self.currents().iter()).all(|x| x.is_finite());
        if !all_finite {
            return Err(invalid(format!("sample at t={} has a non-finite channel", self.t)));
        }
        Ok(())
    }
}

/// N consecutive samples at a uniform period.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementWindow {
    samples: Vec<Sample>,
    dt: f64,
}

impl MeasurementWindow {
    pub fn new(samples: Vec<Sample>, dt: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid(format!("window needs at least 2 samples, got {}", samples.len())));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("sample period {dt} must be positive")));
        }
        for s in &samples {
            s.validate()?;
        }
        for pair in samples.windows(2) {
            let step = pair[1].t - pair[0].t;
            if (step - dt).abs() > 1e-6 * dt {
                return Err(invalid(format!(
                    "non-uniform window: step {step} at t={} differs from dt={dt}",
                    pair[1].t
                )));
            }
        }
        Ok(MeasurementWindow { samples, dt })
    }

    /// Builds a window, inferring dt from the first two timestamps.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid(format!("window needs at least 2 samples, got {}", samples.len())));
        }
        let dt = samples[1].t - samples[0].t;
        Self::new(samples, dt)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn last_t(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Measurement vector in the order [va(1..N), vb(1..N), vc(1..N), ia(1..N), ib(1..N), ic(1..N)].
    pub fn stacked(&self) -> Vec<f64> {
        let n = self.samples.len();
        let mut z = vec![0.0; 6 * n];
        for (k, s) in self.samples.iter().enumerate() {
            let v = s.voltages();
            let i = s.currents();
            for p in 0..3 {
                z[p * n + k] = v[p];
                z[(3 + p) * n + k] = i[p];
            }
        }
        z
    }
}
