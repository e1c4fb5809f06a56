//! Seeded synthetic metric generator for desk-scale evaluation: seasonal
//! baselines with Gaussian noise and injected anomaly spans of known type
//! and position.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::series::MetricFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    Spike,
    LevelShift,
    DropoutToZero,
}

impl std::str::FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spike" => Ok(Self::Spike),
            "level_shift" => Ok(Self::LevelShift),
            "dropout_to_zero" => Ok(Self::DropoutToZero),
            other => Err(Error::InvalidConfig(format!("unknown anomaly type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub metrics: usize,
    pub len: usize,
    pub start_ts: i64,
    pub interval: i64,
    /// Seasonal period in points.
    pub period: usize,
    /// Noise std relative to the unit seasonal amplitude.
    pub noise_scale: f64,
    /// Target fraction of labeled points; realized fraction lands within
    /// ±50% relative of this.
    pub anomaly_ratio: f64,
    pub anomaly_types: Vec<AnomalyKind>,
    /// Inclusive bounds on anomaly span length in points.
    pub span_len: (usize, usize),
    /// Anomaly magnitude in amplitude units.
    pub magnitude: f64,
    /// Restricts anomaly span starts to `[a, b)`; `None` means anywhere.
    pub anomaly_region: Option<(usize, usize)>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            metrics: 2,
            len: 2000,
            start_ts: 1_700_000_000,
            interval: 60,
            period: 96,
            noise_scale: 0.1,
            anomaly_ratio: 0.02,
            anomaly_types: vec![
                AnomalyKind::Spike,
                AnomalyKind::LevelShift,
                AnomalyKind::DropoutToZero,
            ],
            span_len: (3, 12),
            magnitude: 5.0,
            anomaly_region: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.metrics == 0 || self.len == 0 {
            return Err(Error::InvalidConfig("metrics and len must be positive".into()));
        }
        if self.period < 2 {
            return Err(Error::InvalidConfig("period must be at least 2 points".into()));
        }
        if self.interval <= 0 {
            return Err(Error::InvalidConfig("interval must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.anomaly_ratio) {
            return Err(Error::InvalidConfig("anomaly ratio must be in [0, 1)".into()));
        }
        if self.anomaly_ratio > 0.0 && self.anomaly_types.is_empty() {
            return Err(Error::InvalidConfig("anomaly ratio set but no anomaly types".into()));
        }
        let (lo, hi) = self.span_len;
        if lo == 0 || lo > hi || hi >= self.len {
            return Err(Error::InvalidConfig(format!("bad span bounds ({lo}, {hi})")));
        }
        if let Some((a, b)) = self.anomaly_region {
            if a >= b || b > self.len {
                return Err(Error::InvalidConfig(format!("bad anomaly region ({a}, {b})")));
            }
        }
        Ok(())
    }
}

/// Deterministically generates a labeled frame for a given seed.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<MetricFrame> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, len) = (config.metrics, config.len);

    let mut values = Array2::zeros((m, len));
    for i in 0..m {
        let offset = rng.gen_range(2.0..4.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for j in 0..len {
            let angle = std::f64::consts::TAU * j as f64 / config.period as f64 + phase;
            let noise: f64 = StandardNormal.sample(&mut rng);
            values[[i, j]] = offset + angle.sin() + config.noise_scale * noise;
        }
    }

    let mut labels = vec![0u8; len];
    if config.anomaly_ratio > 0.0 {
        let target = (config.anomaly_ratio * len as f64).ceil() as usize;
        let (lo, hi) = config.span_len;
        let (region_start, region_end) = config.anomaly_region.unwrap_or((0, len));
        let mut labeled = 0usize;
        let mut span_index = 0usize;
        let mut attempts = 0usize;
        while labeled < target && attempts < 100_000 {
            attempts += 1;
            let span = rng.gen_range(lo..=hi);
            if region_end.saturating_sub(span) <= region_start {
                break;
            }
            let start = rng.gen_range(region_start..region_end - span);
            // Keep one clean point on either side so spans stay distinct runs.
            let guard_lo = start.saturating_sub(1);
            let guard_hi = (start + span + 1).min(len);
            if labels[guard_lo..guard_hi].iter().any(|&l| l == 1) {
                continue;
            }
            let kind = config.anomaly_types[span_index % config.anomaly_types.len()];
            let metric = rng.gen_range(0..m);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            for j in start..start + span {
                match kind {
                    AnomalyKind::Spike => values[[metric, j]] += sign * config.magnitude,
                    AnomalyKind::LevelShift => values[[metric, j]] += sign * config.magnitude * 0.75,
                    AnomalyKind::DropoutToZero => values[[metric, j]] = 0.0,
                }
                labels[j] = 1;
            }
            labeled += span;
            span_index += 1;
        }
    }

    let timestamps = (0..len as i64)
        .map(|j| config.start_ts + j * config.interval)
        .collect();
    let names = (0..m).map(|i| format!("m{i}")).collect();
    MetricFrame::new(timestamps, values, names, BTreeMap::new(), Some(labels))
}
