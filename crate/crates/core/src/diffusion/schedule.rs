use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-beta noise schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(skip)]
    betas: Vec<f64>,
    #[serde(skip)]
    alphas: Vec<f64>,
    #[serde(skip)]
    alpha_bars: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 1e-4, 2e-2).expect("default schedule")
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::invalid(format!("schedule needs at least 2 steps, got {steps}")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule { steps, beta_start, beta_end, betas, alphas, alpha_bars })
}

impl NoiseSchedule {
    /// Rebuilds derived tables after deserialization.
    pub fn rebuilt(&self) -> Result<Self> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars
            .get(t)
            .copied()
            .ok_or_else(|| Error::invalid(format!("timestep {t} outside [0, {})", self.steps)))
    }

    /// Descending timesteps for an `n`-step deterministic sampler, ending near 0.
    pub fn sampling_timesteps(&self, n: usize) -> Result<Vec<usize>> {
        if n < 1 || n > self.steps {
            return Err(Error::invalid(format!("sampling steps {n} must be in [1, {}]", self.steps)));
        }
        Ok((0..n).rev().map(|k| (self.steps * (k + 1)) / n - 1).collect())
    }
}
