//! Diffusion coefficients: the forward variance schedule and the closed-form
//! corruption / reverse-step formulas built on it.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Scale of the noise added back during reverse sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReverseNoise {
    /// `sqrt(posterior_var[t])` with the beta factor included.
    #[default]
    PosteriorBeta,
    /// `sqrt((1 - alpha_bar[t-1]) / (1 - alpha_bar[t]))`, the variant without
    /// the beta factor.
    AlphaBarRatio,
}

impl std::str::FromStr for ReverseNoise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "posterior-beta" => Ok(Self::PosteriorBeta),
            "alpha-bar-ratio" => Ok(Self::AlphaBarRatio),
            other => Err(Error::InvalidConfig(format!("unknown reverse noise mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ReverseNoise {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PosteriorBeta => "posterior-beta",
            Self::AlphaBarRatio => "alpha-bar-ratio",
        })
    }
}

/// Per-step diffusion coefficients for `t = 1..=T`, stored at index `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
}

impl NoiseSchedule {
    /// Derives all coefficient arrays from per-step variances.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidConfig("schedule needs at least one step".into()));
        }
        if betas.iter().any(|&b| !(0.0..1.0).contains(&b) || b == 0.0) {
            return Err(Error::InvalidConfig("every beta must lie in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut running = 1.0;
        for &a in &alphas {
            running *= a;
            alpha_bars.push(running);
        }
        let mut posterior_vars = Vec::with_capacity(betas.len());
        posterior_vars.push(betas[0]);
        for t in 1..betas.len() {
            posterior_vars.push((1.0 - alpha_bars[t - 1]) / (1.0 - alpha_bars[t]) * betas[t]);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            posterior_vars,
        })
    }

    /// Step count `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::InvalidConfig(format!(
                "step index {t} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product of alphas up to `t`; `alpha_bar(0)` is 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_vars[t - 1]
    }

    /// Reverse-noise std for step `t` under the configured variant.
    pub fn sigma(&self, t: usize, mode: ReverseNoise) -> f64 {
        match mode {
            ReverseNoise::PosteriorBeta => self.posterior_var(t).sqrt(),
            ReverseNoise::AlphaBarRatio => {
                ((1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))).sqrt()
            }
        }
    }
}

/// Linear beta schedule from `beta_start` to `beta_end` over `t_steps` steps.
pub fn build_schedule(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_steps == 0 {
        return Err(Error::InvalidConfig("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "beta bounds ({beta_start}, {beta_end}) must satisfy 0 < start <= end < 1"
        )));
    }
    let betas = if t_steps == 1 {
        vec![beta_start]
    } else {
        (0..t_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

/// Closed-form forward corruption:
/// `x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn noise_sample(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if x0.len() != eps.len() {
        return Err(Error::ShapeMismatch(format!(
            "x0 has {} entries, eps has {}",
            x0.len(),
            eps.len()
        )));
    }
    let ab = schedule.alpha_bar(t);
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(x, e)| signal * x + noise * e)
        .collect())
}

/// One reverse transition with the noise vector supplied by the caller.
/// `kappa` is ignored at `t = 1`, where the step is deterministic.
pub fn reverse_step_with_noise(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    kappa: Option<&[f64]>,
    schedule: &NoiseSchedule,
    mode: ReverseNoise,
) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if x_t.len() != eps_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "x_t has {} entries, eps_hat has {}",
            x_t.len(),
            eps_hat.len()
        )));
    }
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let coeff = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let mut out: Vec<f64> = x_t
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| inv_sqrt_alpha * (x - coeff * e))
        .collect();
    if t > 1 {
        if let Some(kappa) = kappa {
            if kappa.len() != x_t.len() {
                return Err(Error::ShapeMismatch("kappa length differs from x_t".into()));
            }
            let sigma = schedule.sigma(t, mode);
            for (o, k) in out.iter_mut().zip(kappa) {
                *o += sigma * k;
            }
        }
    }
    Ok(out)
}

/// One reverse transition drawing the noise from `rng` (none at `t = 1`).
pub fn reverse_step(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
    mode: ReverseNoise,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let kappa = if t > 1 {
        Some(
            (0..x_t.len())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    reverse_step_with_noise(x_t, t, eps_hat, kappa.as_deref(), schedule, mode)
}
