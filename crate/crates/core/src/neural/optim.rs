//! Adam with a linear warm-up / linear decay learning-rate schedule.

use super::params::{EncoderParams, Grads};
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: u64,
    pub total: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup: u64, total: u64) -> Result<Self> {
        let s = Self {
            peak,
            warmup,
            total,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup > self.total {
            bail!(
                Neural,
                "warmup of {} steps exceeds the {} total steps",
                self.warmup,
                self.total
            );
        }
        if !(self.peak >= 0.0) || !self.peak.is_finite() {
            bail!(Neural, "peak learning rate must be finite and non-negative");
        }
        Ok(())
    }

    /// `peak·step/warmup` up to the warm-up knot, then linear to zero at
    /// `total`.
    pub fn lr(&self, step: u64) -> f64 {
        if step <= self.warmup {
            if self.warmup == 0 {
                return self.peak;
            }
            return self.peak * step as f64 / self.warmup as f64;
        }
        if step >= self.total {
            return 0.0;
        }
        self.peak * (self.total - step) as f64 / (self.total - self.warmup) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients whose global norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// One Adam update of every non-frozen parameter. Returns the learning rate
/// used. Frozen parameters and their moments are not touched.
#[allow(clippy::needless_range_loop)]
pub fn optimizer_step(
    params: &mut EncoderParams,
    grads: &Grads,
    step: u64,
    schedule: &LrSchedule,
    adam: &AdamConfig,
) -> Result<f64> {
    schedule.validate()?;
    if step == 0 {
        bail!(Neural, "optimizer steps are counted from 1");
    }
    if grads.0.len() != params.params().len() {
        bail!(Neural, "gradient table does not match the parameter table");
    }
    let lr = schedule.lr(step);
    let scale = match adam.clip_norm {
        Some(max) => {
            let n = grads.norm();
            if n > max {
                max / n
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let bc1 = 1.0 - libm::pow(adam.beta1, step as f64);
    let bc2 = 1.0 - libm::pow(adam.beta2, step as f64);
    for (p, g) in params.params_mut().iter_mut().zip(&grads.0) {
        if p.frozen {
            continue;
        }
        if g.len() != p.data.len() {
            bail!(
                Neural,
                "gradient for {} has {} entries, expected {}",
                p.name,
                g.len(),
                p.data.len()
            );
        }
        for i in 0..p.data.len() {
            let gi = g[i] * scale;
            p.m[i] = adam.beta1 * p.m[i] + (1.0 - adam.beta1) * gi;
            p.v[i] = adam.beta2 * p.v[i] + (1.0 - adam.beta2) * gi * gi;
            let mhat = p.m[i] / bc1;
            let vhat = p.v[i] / bc2;
            p.data[i] -= lr * mhat / (libm::sqrt(vhat) + adam.eps);
        }
    }
    params.step = step;
    Ok(lr)
}
