//! Right-continuous nondecreasing step functions starting at zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "StepRaw", into = "StepRaw")]
pub struct StepFunction {
    times: Vec<f64>,
    jumps: Vec<f64>,
    cum: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StepRaw {
    times: Vec<f64>,
    jumps: Vec<f64>,
}

impl TryFrom<StepRaw> for StepFunction {
    type Error = Error;
    fn try_from(raw: StepRaw) -> Result<Self> {
        StepFunction::new(raw.times, raw.jumps)
    }
}

impl From<StepFunction> for StepRaw {
    fn from(s: StepFunction) -> StepRaw {
        StepRaw { times: s.times, jumps: s.jumps }
    }
}

impl StepFunction {
    /// Times must be strictly increasing and jumps nonnegative.
    pub fn new(times: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if times.len() != jumps.len() {
            return Err(Error::validation("step function: times and jumps differ in length"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("step function: times must be finite and strictly increasing"));
        }
        if jumps.iter().any(|j| !(*j >= 0.0) || !j.is_finite()) {
            return Err(Error::validation("step function: jumps must be finite and nonnegative"));
        }
        let mut acc = 0.0;
        let cum = jumps
            .iter()
            .map(|j| {
                acc += j;
                acc
            })
            .collect();
        Ok(StepFunction { times, jumps, cum })
    }

    pub fn zero() -> Self {
        StepFunction::default()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    /// Cumulative values at the jump times.
    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Value at `t` (right-continuous).
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1]
        }
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1]
        }
    }

    /// Jump size exactly at `t` (zero if `t` is not a jump time).
    pub fn jump_at(&self, t: f64) -> f64 {
        match self.times.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(k) => self.jumps[k],
            Err(_) => 0.0,
        }
    }

    /// Scale every jump by `c >= 0`.
    pub fn scaled(&self, c: f64) -> StepFunction {
        StepFunction::new(self.times.clone(), self.jumps.iter().map(|j| j * c).collect()).expect("scaling preserves validity")
    }

    /// Step approximation of a continuous cumulative hazard `f` with `f(0) = 0`:
    /// the increment over `((k-1)h, kh]` is placed at `(k - 1 + offset) h`, where
    /// `h = horizon / steps` and `offset` is in `(0, 1]`.
    pub fn discretize(f: impl Fn(f64) -> f64, horizon: f64, steps: usize, offset: f64) -> Self {
        let h = horizon / steps as f64;
        let mut times = Vec::with_capacity(steps);
        let mut jumps = Vec::with_capacity(steps);
        let mut prev = f(0.0);
        for k in 1..=steps {
            let cur = f(k as f64 * h);
            let jump = (cur - prev).max(0.0);
            prev = cur;
            if jump > 0.0 {
                times.push((k as f64 - 1.0 + offset) * h);
                jumps.push(jump);
            }
        }
        StepFunction::new(times, jumps).expect("discretized grid is increasing")
    }
}
