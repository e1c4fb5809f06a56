//! Anticipates performance-metric anomalies faster than real time.
//!
//! The pipeline has two stages. A conditional denoising diffusion model
//! forecasts the next `s` points of an `m`-variate metric series from an
//! `l`-point observation window. Anomaly-indicating features are then
//! extracted from the concatenation of the observed tail and the forecast,
//! and an incrementally trained isolation forest scores the concatenation,
//! flagging anomalies before the underlying points are observed.
//!
//! Modules follow the pipeline order:
//!
//! * [`series`] — frames, ingestion, splits, scaling, windowing, synthetic data
//! * [`diffusion`] — noise schedule, condition encoder, noise-prediction
//!   network, training and autoregressive sampling
//! * [`features`] — the anomaly-indicating feature catalog and selection
//! * [`forest`] — isolation forest with incremental fitting
//! * [`eval`] — anticipation driver, point adjustment, metrics, reports

pub mod binfmt;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod series;

pub use error::{Error, Result};
pub use eval::{AnticipationResult, EvalReport};
pub use features::{FeatureConfig, FeatureMask, FeatureVector};
pub use forest::IsolationForest;
pub use series::{MetricFrame, Scaler, SplitSpec, Window, WindowSpec};
