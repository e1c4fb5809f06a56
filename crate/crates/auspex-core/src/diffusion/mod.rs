//! Conditional denoising diffusion forecaster: noise schedule, recurrent
//! condition encoder, dilated-convolution noise-prediction network,
//! smooth-L1 training and autoregressive multi-step sampling.

mod checkpoint;
mod forecast;
mod net;
mod schedule;
mod tape;
pub(crate) mod train;

pub use checkpoint::{load_model, save_model};
pub use forecast::{forecast, Aggregation, ForecastConfig};
pub use net::{
    condition_encode, eps_predict, gated_activation, step_embed, ConditionState, EpsilonNet,
    GruEncoder, ParamStore,
};
pub use schedule::{
    build_schedule, noise_sample, reverse_step, reverse_step_with_noise, NoiseSchedule,
    ReverseNoise,
};
pub use train::{diffusion_loss, smooth_l1, train, EpochLoss, LossTrace, TrainConfig};

use crate::error::{Error, Result};
use crate::series::{Scaler, WindowSpec, COVARIATE_DIM};

/// Architecture and schedule hyperparameters, fixed once training starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_metrics: usize,
    pub window: WindowSpec,
    pub cov_dim: usize,
    /// Condition embedding width `H`.
    pub hidden: usize,
    pub gru_layers: usize,
    /// Residual layers `k` in the noise-prediction network.
    pub res_layers: usize,
    pub res_channels: usize,
    pub kernel_size: usize,
    /// Dilation of layer `i` is `2^(i mod dilation_cycle)`.
    pub dilation_cycle: usize,
    pub step_embed_dim: usize,
    pub step_mlp_dim: usize,
    /// Diffusion step count `T`.
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub reverse_noise: ReverseNoise,
}

impl ModelConfig {
    /// Defaults: 2 recurrent layers with hidden size 64, 8 residual layers of
    /// 64 channels with kernel 3 and dilation cycle 4, T = 100 with betas
    /// linear from 1e-4 to 0.1.
    pub fn new(num_metrics: usize, window: WindowSpec) -> Self {
        Self {
            num_metrics,
            window,
            cov_dim: COVARIATE_DIM,
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
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.num_metrics == 0 {
            return Err(Error::InvalidConfig("need at least one metric".into()));
        }
        if self.hidden == 0 || self.gru_layers == 0 || self.res_layers == 0 || self.res_channels == 0
        {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::InvalidConfig("kernel size must be odd".into()));
        }
        if self.step_embed_dim < 2 || self.step_embed_dim % 2 != 0 {
            return Err(Error::InvalidConfig("step embedding dim must be even and >= 2".into()));
        }
        if self.dilation_cycle == 0 {
            return Err(Error::InvalidConfig("dilation cycle must be positive".into()));
        }
        if self.t_steps == 0 {
            return Err(Error::InvalidConfig("need at least one diffusion step".into()));
        }
        Ok(())
    }

    /// GRU input width: one metric vector plus next-step covariates.
    pub fn encoder_input_dim(&self) -> usize {
        self.num_metrics + self.cov_dim
    }
}

/// A (possibly trained) forecaster: schedule, encoder and noise-prediction
/// parameters, plus the scaler binding model space to original units.
#[derive(Debug, Clone)]
pub struct ForecasterModel {
    config: ModelConfig,
    schedule: NoiseSchedule,
    params: ParamStore,
    encoder: GruEncoder,
    eps_net: EpsilonNet,
    scaler: Scaler,
    trained: bool,
}

impl ForecasterModel {
    /// Builds an untrained model with seeded parameter initialization.
    /// Scaler statistics are rounded to f32 so checkpoints round-trip
    /// exactly.
    pub fn init(config: ModelConfig, scaler: Scaler, seed: u64) -> Result<Self> {
        config.validate()?;
        if scaler.means().len() != config.num_metrics {
            return Err(Error::ShapeMismatch(format!(
                "scaler covers {} metrics, model expects {}",
                scaler.means().len(),
                config.num_metrics
            )));
        }
        let schedule = build_schedule(config.t_steps, config.beta_start, config.beta_end)?;
        let mut params = ParamStore::new();
        let encoder = GruEncoder::register(&mut params, &config, seed);
        let eps_net = EpsilonNet::register(&mut params, &config, seed ^ 0x9E37_79B9_7F4A_7C15);
        // f32-exact statistics (clamped at an f32-exact floor) keep the
        // 32-bit checkpoint encoding lossless.
        let floor32 = crate::series::STD_FLOOR as f32 as f64;
        let scaler = Scaler::from_stats(
            scaler.means().iter().map(|&v| v as f32 as f64).collect(),
            scaler
                .stds()
                .iter()
                .map(|&v| (v as f32 as f64).max(floor32))
                .collect(),
        )?;
        Ok(Self {
            config,
            schedule,
            params,
            encoder,
            eps_net,
            scaler,
            trained: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn encoder(&self) -> &GruEncoder {
        &self.encoder
    }

    pub fn eps_net(&self) -> &EpsilonNet {
        &self.eps_net
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub(crate) fn set_trained(&mut self, trained: bool) {
        self.trained = trained;
    }
}
