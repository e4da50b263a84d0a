//! DDPM noise schedule, forward noising, ancestral reverse steps,
//! classifier-free guidance and score-distillation weighting.
//!
//! Timesteps are 1-based: `t ∈ [1, T]`, and `alpha_bar(t)` is the product of
//! `1 − β_i` for `i ≤ t`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Rng;
use crate::real::Real;

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
/// Fractions of `T` bounding sampled training timesteps.
pub const TIMESTEP_RANGE: (f64, f64) = (0.02, 0.98);

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep {t} outside [1, {total}]")]
    TimestepOutOfRange { t: usize, total: usize },
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("guidance scale must be finite and non-negative, got {0}")]
    InvalidScale(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_TIMESTEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid default schedule")
    }
}

impl DiffusionSchedule {
    /// `T` betas evenly spaced from `beta_start` to `beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps < 2 {
            return Err(DiffusionError::InvalidSchedule(format!("need at least 2 steps, got {steps}")));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "need 0 < beta_start < beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> Result<usize, DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::TimestepOutOfRange { t, total: self.steps() });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64, DiffusionError> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64, DiffusionError> {
        Ok(self.alpha[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, DiffusionError> {
        Ok(self.alpha_bar[self.index(t)?])
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), DiffusionError> {
    if expected != got {
        return Err(DiffusionError::ShapeMismatch { expected, got });
    }
    Ok(())
}

/// Standard normal samples.
pub fn gaussian_noise<R: Real>(rng: &mut Rng, len: usize) -> Vec<R> {
    (0..len).map(|_| R::of(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε`.
pub fn q_sample<R: Real>(x0: &[R], t: usize, eps: &[R], sched: &DiffusionSchedule) -> Result<Vec<R>, DiffusionError> {
    check_len(x0.len(), eps.len())?;
    let ab = sched.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| R::of(a * x.as_f64() + b * e.as_f64())).collect())
}

/// One ancestral step with fixed variance `β_t`: mean
/// `(x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t`, plus `√β_t·z` for `t > 1`.
pub fn reverse_step<R: Real>(
    x_t: &[R],
    eps_hat: &[R],
    t: usize,
    sched: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<Vec<R>, DiffusionError> {
    check_len(x_t.len(), eps_hat.len())?;
    let (alpha, beta, ab) = (sched.alpha(t)?, sched.beta(t)?, sched.alpha_bar(t)?);
    let coef = beta / (1.0 - ab).sqrt();
    let inv = 1.0 / alpha.sqrt();
    let sigma = beta.sqrt();
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| {
            let mean = (x.as_f64() - coef * e.as_f64()) * inv;
            let noise = if t > 1 { sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            R::of(mean + noise)
        })
        .collect())
}

/// `ε̂ = ε_c + s·(ε_c − ε_u)`.
pub fn cfg_combine<R: Real>(eps_cond: &[R], eps_uncond: &[R], scale: f64) -> Result<Vec<R>, DiffusionError> {
    check_len(eps_cond.len(), eps_uncond.len())?;
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(DiffusionError::InvalidScale(scale));
    }
    let s = R::of(scale);
    Ok(eps_cond.iter().zip(eps_uncond).map(|(&c, &u)| c + s * (c - u)).collect())
}

/// Loss weighting over timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    One,
    #[default]
    OneMinusAlphaBar,
}

pub fn sds_weight(t: usize, sched: &DiffusionSchedule, kind: WeightKind) -> Result<f64, DiffusionError> {
    let ab = sched.alpha_bar(t)?;
    Ok(match kind {
        WeightKind::One => 1.0,
        WeightKind::OneMinusAlphaBar => 1.0 - ab,
    })
}

/// Inclusive range of training timesteps for a schedule.
pub fn timestep_bounds(sched: &DiffusionSchedule) -> (usize, usize) {
    let total = sched.steps() as f64;
    let lo = ((TIMESTEP_RANGE.0 * total).ceil() as usize).max(1);
    let hi = ((TIMESTEP_RANGE.1 * total).floor() as usize).max(lo);
    (lo, hi)
}

/// Uniform integer timestep in [`timestep_bounds`].
pub fn sample_timestep(rng: &mut Rng, sched: &DiffusionSchedule) -> usize {
    let (lo, hi) = timestep_bounds(sched);
    rng.random_range(lo..=hi)
}
