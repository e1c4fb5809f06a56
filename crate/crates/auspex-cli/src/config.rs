//! Run configuration: a flat key-value file with dotted section keys, plus
//! `--set key=value` overrides. Flags beat the environment, the environment
//! beats the file, the file beats the defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use auspex_core::diffusion::{Aggregation, ReverseNoise, TrainConfig};
use auspex_core::series::{AnomalyKind, ColumnSchema, SynthConfig};
use auspex_core::series::{SplitSpec, WindowSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionParams {
    pub hidden: usize,
    pub gru_layers: usize,
    pub res_layers: usize,
    pub res_channels: usize,
    pub kernel_size: usize,
    pub dilation_cycle: usize,
    pub step_embed_dim: usize,
    pub step_mlp_dim: usize,
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub reverse_noise: ReverseNoise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastParams {
    pub num_samples: usize,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectKind {
    None,
    Importance,
    Redundancy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureParams {
    pub acf_lags: Option<usize>,
    pub fourier_k: Option<usize>,
    pub c3_lags: Option<Vec<usize>>,
    pub tlcc_max_lag: Option<usize>,
    pub mi_bins: Option<usize>,
    pub rolling_sub_len: Option<usize>,
    pub z_threshold: Option<f64>,
    pub select: SelectKind,
    pub keep_fraction: f64,
    pub redundancy_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub psi: usize,
    pub gamma: usize,
    /// Cutoff the incremental phase uses to call a sample isolated.
    pub iso_threshold: f64,
    /// Final detection cutoff.
    pub detect_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub delimiter: u8,
    pub timestamp_column: String,
    pub label_column: String,
    pub metrics: Vec<String>,
    pub aspects: BTreeMap<String, String>,
    pub split: SplitSpec,
    pub window: WindowSpec,
    pub special_dates: Vec<String>,
    pub diffusion: DiffusionParams,
    pub train: TrainConfig,
    pub forecast: ForecastParams,
    pub features: FeatureParams,
    pub forest: ForestParams,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            delimiter: b',',
            timestamp_column: "ts".into(),
            label_column: "label".into(),
            metrics: Vec::new(),
            aspects: BTreeMap::new(),
            split: SplitSpec::default(),
            window: WindowSpec {
                context_len: 24,
                forecast_len: 4,
                stride: 4,
            },
            special_dates: Vec::new(),
            diffusion: DiffusionParams {
                hidden: 64,
                gru_layers: 2,
                res_layers: 8,
                res_channels: 64,
                kernel_size: 3,
                dilation_cycle: 4,
                step_embed_dim: 32,
                step_mlp_dim: 64,
                t_steps: 100,
                beta_start: 1e-4,
                beta_end: 0.1,
                reverse_noise: ReverseNoise::PosteriorBeta,
            },
            train: TrainConfig::default(),
            forecast: ForecastParams {
                num_samples: 16,
                aggregation: Aggregation::Mean,
            },
            features: FeatureParams {
                acf_lags: None,
                fourier_k: None,
                c3_lags: None,
                tlcc_max_lag: None,
                mi_bins: None,
                rolling_sub_len: None,
                z_threshold: None,
                select: SelectKind::Redundancy,
                keep_fraction: 0.95,
                redundancy_threshold: 0.95,
            },
            forest: ForestParams {
                psi: 256,
                gamma: 100,
                iso_threshold: 0.5,
                detect_threshold: 0.5,
            },
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads the file (when given), then `--set` overrides, then the seed
    /// from `AUSPEX_SEED`, then the seed flag.
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        seed_flag: Option<u64>,
    ) -> Result<Self> {
        let mut config = RunConfig::default();
        if let Some(path) = path {
            let body = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (lineno, raw) in body.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').with_context(|| {
                    format!("{}:{}: expected key = value", path.display(), lineno + 1)
                })?;
                config
                    .apply(key.trim(), value.trim())
                    .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
            }
        }
        for entry in overrides {
            let (key, value) = entry
                .split_once('=')
                .with_context(|| format!("--set {entry:?}: expected KEY=VALUE"))?;
            config
                .apply(key.trim(), value.trim())
                .with_context(|| format!("--set {entry:?}"))?;
        }
        if let Ok(env_seed) = std::env::var("AUSPEX_SEED") {
            config.seed = env_seed
                .parse()
                .with_context(|| format!("AUSPEX_SEED={env_seed:?} is not an integer"))?;
        }
        if let Some(seed) = seed_flag {
            config.seed = seed;
        }
        config.train.seed = config.seed;
        Ok(config)
    }

    pub fn schema(&self) -> ColumnSchema {
        ColumnSchema {
            timestamp: self.timestamp_column.clone(),
            metrics: self.metrics.clone(),
            label: Some(self.label_column.clone()),
            aspects: self.aspects.clone(),
            delimiter: self.delimiter,
        }
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow::anyhow!("bad value {value:?} for {key}: {e}"))
        }
        fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
        where
            T::Err: std::fmt::Display,
        {
            value
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|v| parse(key, v))
                .collect()
        }

        if let Some(metric) = key.strip_prefix("aspect.") {
            self.aspects.insert(metric.to_string(), value.to_string());
            return Ok(());
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data.delimiter" => {
                let bytes = value.as_bytes();
                if bytes.len() != 1 {
                    bail!("delimiter must be a single byte, got {value:?}");
                }
                self.delimiter = bytes[0];
            }
            "data.timestamp_column" => self.timestamp_column = value.into(),
            "data.label_column" => self.label_column = value.into(),
            "data.metrics" => self.metrics = parse_list(key, value)?,
            "split.train" => self.split.train = parse(key, value)?,
            "split.val" => self.split.val = parse(key, value)?,
            "split.test" => self.split.test = parse(key, value)?,
            "window.context_len" => self.window.context_len = parse(key, value)?,
            "window.forecast_len" => self.window.forecast_len = parse(key, value)?,
            "window.stride" => self.window.stride = parse(key, value)?,
            "covariates.special_dates" => {
                self.special_dates = parse_list(key, value)?;
            }
            "diffusion.hidden" => self.diffusion.hidden = parse(key, value)?,
            "diffusion.gru_layers" => self.diffusion.gru_layers = parse(key, value)?,
            "diffusion.res_layers" => self.diffusion.res_layers = parse(key, value)?,
            "diffusion.res_channels" => self.diffusion.res_channels = parse(key, value)?,
            "diffusion.kernel_size" => self.diffusion.kernel_size = parse(key, value)?,
            "diffusion.dilation_cycle" => self.diffusion.dilation_cycle = parse(key, value)?,
            "diffusion.step_embed_dim" => self.diffusion.step_embed_dim = parse(key, value)?,
            "diffusion.step_mlp_dim" => self.diffusion.step_mlp_dim = parse(key, value)?,
            "diffusion.t_steps" => self.diffusion.t_steps = parse(key, value)?,
            "diffusion.beta_start" => self.diffusion.beta_start = parse(key, value)?,
            "diffusion.beta_end" => self.diffusion.beta_end = parse(key, value)?,
            "diffusion.reverse_noise" => {
                self.diffusion.reverse_noise = ReverseNoise::from_str(value)?
            }
            "train.learning_rate" => self.train.learning_rate = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batches_per_epoch" => self.train.batches_per_epoch = parse(key, value)?,
            "train.patience" => self.train.patience = parse(key, value)?,
            "forecast.num_samples" => self.forecast.num_samples = parse(key, value)?,
            "forecast.aggregation" => self.forecast.aggregation = Aggregation::from_str(value)?,
            "features.acf_lags" => self.features.acf_lags = Some(parse(key, value)?),
            "features.fourier_k" => self.features.fourier_k = Some(parse(key, value)?),
            "features.c3_lags" => self.features.c3_lags = Some(parse_list(key, value)?),
            "features.tlcc_max_lag" => self.features.tlcc_max_lag = Some(parse(key, value)?),
            "features.mi_bins" => self.features.mi_bins = Some(parse(key, value)?),
            "features.rolling_sub_len" => self.features.rolling_sub_len = Some(parse(key, value)?),
            "features.z_threshold" => self.features.z_threshold = Some(parse(key, value)?),
            "features.select" => {
                self.features.select = match value {
                    "none" => SelectKind::None,
                    "importance" => SelectKind::Importance,
                    "redundancy" => SelectKind::Redundancy,
                    other => bail!("unknown selection method {other:?}"),
                }
            }
            "features.keep_fraction" => self.features.keep_fraction = parse(key, value)?,
            "features.redundancy_threshold" => {
                self.features.redundancy_threshold = parse(key, value)?
            }
            "forest.psi" => self.forest.psi = parse(key, value)?,
            "forest.gamma" => self.forest.gamma = parse(key, value)?,
            "forest.iso_threshold" => self.forest.iso_threshold = parse(key, value)?,
            "forest.detect_threshold" => self.forest.detect_threshold = parse(key, value)?,
            "synth.metrics" => self.synth.metrics = parse(key, value)?,
            "synth.len" => self.synth.len = parse(key, value)?,
            "synth.start_ts" => self.synth.start_ts = parse(key, value)?,
            "synth.interval" => self.synth.interval = parse(key, value)?,
            "synth.period" => self.synth.period = parse(key, value)?,
            "synth.noise_scale" => self.synth.noise_scale = parse(key, value)?,
            "synth.anomaly_ratio" => self.synth.anomaly_ratio = parse(key, value)?,
            "synth.anomaly_types" => {
                self.synth.anomaly_types = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(AnomalyKind::from_str)
                    .collect::<Result<_, _>>()?;
            }
            "synth.span_min" => self.synth.span_len.0 = parse(key, value)?,
            "synth.span_max" => self.synth.span_len.1 = parse(key, value)?,
            "synth.magnitude" => self.synth.magnitude = parse(key, value)?,
            "synth.region_start" => {
                let start: usize = parse(key, value)?;
                let end = self.synth.anomaly_region.map(|(_, b)| b).unwrap_or(usize::MAX);
                self.synth.anomaly_region = Some((start, end));
            }
            "synth.region_end" => {
                let end: usize = parse(key, value)?;
                let start = self.synth.anomaly_region.map(|(a, _)| a).unwrap_or(0);
                self.synth.anomaly_region = Some((start, end));
            }
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_then_override_then_flag() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nseed = 5\nwindow.context_len = 12\naspect.m0 = io").unwrap();
        let config = RunConfig::load(
            Some(f.path()),
            &["window.context_len=16".to_string()],
            Some(9),
        )
        .unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.window.context_len, 16);
        assert_eq!(config.aspects.get("m0").unwrap(), "io");
        assert_eq!(config.train.seed, 9);
    }

    #[test]
    fn unknown_keys_fail_fast() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "window.context_length = 12").unwrap();
        assert!(RunConfig::load(Some(f.path()), &[], None).is_err());
    }

    #[test]
    fn lists_parse_from_commas() {
        let config = RunConfig::load(
            None,
            &[
                "features.c3_lags=1,2,5".to_string(),
                "synth.anomaly_types=level_shift".to_string(),
            ],
            None,
        )
        .unwrap();
        assert_eq!(config.features.c3_lags, Some(vec![1, 2, 5]));
        assert_eq!(config.synth.anomaly_types, vec![AnomalyKind::LevelShift]);
    }
}
