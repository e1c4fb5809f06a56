//! Seeded, single-threaded training of the forecaster: for every batch
//! window and target position, corrupt the target with sampled noise,
//! predict that noise conditioned on the encoded history, and take one
//! Adam step on the mean smooth-L1 between the two.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::net::ParamStore;
use super::tape::{smooth_l1_mean, Tape};
use super::ForecasterModel;
use crate::error::{Error, Result};
use crate::series::Window;

/// Optimization hyperparameters. Defaults follow the reference setup:
/// learning rate 5e-4, batch size 256, up to 50 epochs of 100 batches,
/// early stop after 5 epochs without validation improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 256,
            epochs: 50,
            batches_per_epoch: 100,
            patience: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub epochs: Vec<EpochLoss>,
}

/// Mean smooth-L1 between two equal-length vectors, the training objective
/// for a single target.
pub fn smooth_l1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "smooth_l1 over {} vs {} entries",
            a.len(),
            b.len()
        )));
    }
    let pa = ArrayD::from_shape_vec(IxDyn(&[a.len()]), a.to_vec()).unwrap();
    let pb = ArrayD::from_shape_vec(IxDyn(&[b.len()]), b.to_vec()).unwrap();
    Ok(smooth_l1_mean(&pa, &pb))
}

/// Batch objective: mean smooth-L1 between true and predicted noise.
/// Zero exactly when the prediction matches the injected noise.
pub fn diffusion_loss(eps: &Array2<f64>, eps_hat: &Array2<f64>) -> Result<f64> {
    if eps.dim() != eps_hat.dim() {
        return Err(Error::ShapeMismatch(format!(
            "noise batches disagree: {:?} vs {:?}",
            eps.dim(),
            eps_hat.dim()
        )));
    }
    Ok(smooth_l1_mean(&eps_hat.clone().into_dyn(), &eps.clone().into_dyn()))
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    steps: usize,
}

impl Adam {
    fn new(lr: f64, store: &ParamStore) -> Self {
        let zeros: Vec<ArrayD<f64>> = (0..store.len())
            .map(|i| ArrayD::zeros(store.tensor(i).raw_dim()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    fn step(&mut self, store: &mut ParamStore, grads: &[ArrayD<f64>]) {
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (i, grad) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(grad, |m, g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(grad, |v, g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let lr = self.lr;
            let (b1, b2, eps) = (bc1, bc2, self.eps);
            let tensor = store.tensor_mut(i);
            ndarray::Zip::from(tensor)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    *p -= lr * (m / b1) / ((v / b2).sqrt() + eps);
                });
        }
    }
}

/// Per-window tensors precomputed in model (scaled) space.
struct Prepared {
    /// Encoder input per consumed position: row `j` is `[x_j, cov_{j+1}]`.
    gru_inputs: Array2<f64>,
    /// Scaled window values, `m x (l + s)`.
    targets: Array2<f64>,
}

fn prepare_windows(model: &ForecasterModel, windows: &[Window]) -> Result<Vec<Prepared>> {
    let config = model.config();
    let (l, s) = (config.window.context_len, config.window.forecast_len);
    let m = config.num_metrics;
    let total = l + s;
    let means = model.scaler().means();
    let stds = model.scaler().stds();
    windows
        .iter()
        .map(|w| {
            if w.num_metrics() != m || w.context_len() != l || w.forecast_len() != s {
                return Err(Error::ShapeMismatch(format!(
                    "window is {}x{}+{}, model expects {m}x{l}+{s}",
                    w.num_metrics(),
                    w.context_len(),
                    w.forecast_len()
                )));
            }
            if w.covariates.dim() != (config.cov_dim, total) {
                return Err(Error::ShapeMismatch(format!(
                    "covariates are {:?}, expected ({}, {total})",
                    w.covariates.dim(),
                    config.cov_dim
                )));
            }
            let mut targets = Array2::zeros((m, total));
            for i in 0..m {
                for j in 0..total {
                    let raw = if j < l {
                        w.context[[i, j]]
                    } else {
                        w.future[[i, j - l]]
                    };
                    targets[[i, j]] = (raw - means[i]) / stds[i];
                }
            }
            let d = config.encoder_input_dim();
            let mut gru_inputs = Array2::zeros((total - 1, d));
            for j in 0..total - 1 {
                for i in 0..m {
                    gru_inputs[[j, i]] = targets[[i, j]];
                }
                for c in 0..config.cov_dim {
                    gru_inputs[[j, m + c]] = w.covariates[[c, j + 1]];
                }
            }
            Ok(Prepared {
                gru_inputs,
                targets,
            })
        })
        .collect()
}

/// `(t, eps, x_t)` draws for one batch and one target position.
struct TargetDraw {
    ts: Vec<usize>,
    eps: Array2<f64>,
    x_t: Array2<f64>,
}

fn draw_target(
    model: &ForecasterModel,
    prepared: &[Prepared],
    batch: &[usize],
    position: usize,
    rng: &mut ChaCha8Rng,
) -> TargetDraw {
    let m = model.config().num_metrics;
    let schedule = model.schedule();
    let mut ts = Vec::with_capacity(batch.len());
    let mut eps = Array2::zeros((batch.len(), m));
    let mut x_t = Array2::zeros((batch.len(), m));
    for (row, &wi) in batch.iter().enumerate() {
        let t = rng.gen_range(1..=schedule.len());
        ts.push(t);
        let x0: Vec<f64> = (0..m).map(|i| prepared[wi].targets[[i, position]]).collect();
        let noise: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let corrupted = super::schedule::noise_sample(&x0, t, &noise, schedule).unwrap();
        for i in 0..m {
            eps[[row, i]] = noise[i];
            x_t[[row, i]] = corrupted[i];
        }
    }
    TargetDraw { ts, eps, x_t }
}

/// Target positions (0-based): the last context point and every forecast
/// point, `l-1 ..= l+s-1`.
fn target_positions(l: usize, s: usize) -> std::ops::RangeInclusive<usize> {
    (l - 1)..=(l + s - 1)
}

fn batch_loss_taped(
    model: &ForecasterModel,
    prepared: &[Prepared],
    batch: &[usize],
    rng: &mut ChaCha8Rng,
) -> (f64, Vec<ArrayD<f64>>) {
    let config = model.config();
    let (l, s) = (config.window.context_len, config.window.forecast_len);
    let params = model.params();
    let encoder = model.encoder();
    let net = model.eps_net();

    let mut tape = Tape::new();
    let pnodes: Vec<_> = (0..params.len())
        .map(|i| tape.param(i, params.tensor(i).clone()))
        .collect();

    // Encode the batch through every consumed position, teacher-forced.
    let mut states: Vec<Vec<usize>> = Vec::with_capacity(l + s - 1);
    let zero = encoder.zero_state(batch.len());
    let mut current: Vec<_> = (0..encoder.num_layers())
        .map(|li| tape.constant(zero.layer(li).clone().into_dyn()))
        .collect();
    for j in 0..l + s - 1 {
        let input = Array2::from_shape_fn(
            (batch.len(), encoder.input_dim),
            |(row, col)| prepared[batch[row]].gru_inputs[[j, col]],
        );
        let input = tape.constant(input.into_dyn());
        current = encoder.step_taped(&mut tape, &pnodes, input, &current);
        states.push(current.clone());
    }

    let mut losses = Vec::new();
    for position in target_positions(l, s) {
        let draw = draw_target(model, prepared, batch, position, rng);
        let h = *states[position - 1].last().unwrap();
        let emb = tape.constant(net.embed_steps(&draw.ts).into_dyn());
        let x_t = tape.constant(draw.x_t.into_dyn());
        let eps_hat = net.forward_taped(&mut tape, &pnodes, x_t, emb, h);
        losses.push(tape.smooth_l1(eps_hat, draw.eps.into_dyn()));
    }
    let loss = tape.mean_scalars(losses);
    let value = tape.scalar(loss);
    let grads = tape.backward(loss, params.len(), &params.shapes());
    (value, grads)
}

/// Forward-only loss over a window set with draws from `rng`; used for the
/// per-epoch validation estimate.
fn eval_loss_plain(model: &ForecasterModel, prepared: &[Prepared], rng: &mut ChaCha8Rng) -> f64 {
    let config = model.config();
    let (l, s) = (config.window.context_len, config.window.forecast_len);
    let params = model.params();
    let encoder = model.encoder();
    let net = model.eps_net();
    let batch: Vec<usize> = (0..prepared.len()).collect();

    let mut states = Vec::with_capacity(l + s - 1);
    let mut current = encoder.zero_state(batch.len());
    for j in 0..l + s - 1 {
        let input = Array2::from_shape_fn(
            (batch.len(), encoder.input_dim),
            |(row, col)| prepared[batch[row]].gru_inputs[[j, col]],
        );
        current = encoder.step_plain(params, input.view(), &current);
        states.push(current.clone());
    }

    let mut total = 0.0;
    let mut count = 0;
    for position in target_positions(l, s) {
        let draw = draw_target(model, prepared, &batch, position, rng);
        let emb = net.embed_steps(&draw.ts);
        let h = states[position - 1].h();
        let eps_hat = net.forward_plain(params, draw.x_t.view(), emb.view(), h.view());
        total += smooth_l1_mean(&eps_hat.into_dyn(), &draw.eps.into_dyn());
        count += 1;
    }
    total / count as f64
}

/// Trains the model in place, recording one train/validation loss pair per
/// epoch. Stops early once the validation loss has not improved for
/// `patience` epochs and restores the best parameters. Parameters are
/// rounded through f32 afterwards so checkpoints are lossless.
pub fn train(
    model: &mut ForecasterModel,
    train_windows: &[Window],
    val_windows: &[Window],
    config: &TrainConfig,
) -> Result<LossTrace> {
    if train_windows.is_empty() {
        return Err(Error::InvalidData("no training windows".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 || config.batches_per_epoch == 0 {
        return Err(Error::InvalidConfig("batch size, epochs and batches must be positive".into()));
    }
    let prepared_train = prepare_windows(model, train_windows)?;
    let prepared_val = prepare_windows(model, val_windows)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let mut adam = Adam::new(config.learning_rate, model.params());

    let mut trace = LossTrace::default();
    let mut best: Option<(f64, Vec<ArrayD<f64>>)> = None;
    let mut stale = 0usize;

    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..config.batches_per_epoch {
            let batch: Vec<usize> = (0..config.batch_size)
                .map(|_| rng.gen_range(0..prepared_train.len()))
                .collect();
            let (value, grads) = batch_loss_taped(model, &prepared_train, &batch, &mut rng);
            if !value.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite loss at epoch {epoch}"
                )));
            }
            adam.step(model.params_mut(), &grads);
            epoch_loss += value;
        }
        let train_loss = epoch_loss / config.batches_per_epoch as f64;
        if !model.params().all_finite() {
            return Err(Error::TrainingDiverged(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }

        let val_loss = if prepared_val.is_empty() {
            None
        } else {
            // Same noise draws every epoch so the comparison is stable.
            let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed);
            val_rng.set_stream(1);
            Some(eval_loss_plain(model, &prepared_val, &mut val_rng))
        };
        trace.epochs.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });

        if let Some(val) = val_loss {
            let improved = best.as_ref().map_or(true, |(b, _)| val < *b);
            if improved {
                let snapshot = (0..model.params().len())
                    .map(|i| model.params().tensor(i).clone())
                    .collect();
                best = Some((val, snapshot));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }

    if let Some((_, snapshot)) = best {
        for (i, tensor) in snapshot.into_iter().enumerate() {
            *model.params_mut().tensor_mut(i) = tensor;
        }
    }
    model.params_mut().snap_to_f32();
    model.set_trained(true);
    Ok(trace)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::diffusion::ModelConfig;
    use crate::series::{
        fit_scaler, make_windows, synth_generate, CovariateConfig, SynthConfig, WindowSpec,
    };

    pub(crate) fn toy_setup(seed: u64) -> (ForecasterModel, Vec<Window>, Vec<Window>) {
        let synth = SynthConfig {
            metrics: 1,
            len: 256,
            period: 24,
            noise_scale: 0.05,
            anomaly_ratio: 0.0,
            ..SynthConfig::default()
        };
        let frame = synth_generate(&synth, seed).unwrap();
        let spec = WindowSpec::new(12, 2, 1).unwrap();
        let cov = CovariateConfig::default();
        let windows = make_windows(&frame, &spec, &cov).unwrap();
        let (train_w, val_w) = windows.split_at(windows.len() - 20);

        let mut config = ModelConfig::new(1, spec);
        config.hidden = 16;
        config.gru_layers = 1;
        config.res_layers = 2;
        config.res_channels = 12;
        config.step_embed_dim = 8;
        config.step_mlp_dim = 12;
        config.t_steps = 20;
        let scaler = fit_scaler(&frame);
        let model = ForecasterModel::init(config, scaler, seed).unwrap();
        (model, train_w.to_vec(), val_w.to_vec())
    }

    #[test]
    fn smooth_l1_piecewise_cases() {
        assert_eq!(smooth_l1(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((smooth_l1(&[0.0], &[0.5]).unwrap() - 0.125).abs() < 1e-15);
        assert!((smooth_l1(&[0.0], &[2.0]).unwrap() - 1.5).abs() < 1e-15);
        assert!(smooth_l1(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn perfect_prediction_gives_zero_loss() {
        let eps = Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64 / 5.0 - 1.0);
        assert_eq!(diffusion_loss(&eps, &eps.clone()).unwrap(), 0.0);
        let off = &eps + 0.1;
        assert!(diffusion_loss(&eps, &off).unwrap() > 0.0);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 2,
            batches_per_epoch: 3,
            patience: 5,
            seed: 42,
        };
        let (mut model_a, train_w, val_w) = toy_setup(1);
        let trace_a = train(&mut model_a, &train_w, &val_w, &cfg).unwrap();
        let (mut model_b, train_w, val_w) = toy_setup(1);
        let trace_b = train(&mut model_b, &train_w, &val_w, &cfg).unwrap();
        assert_eq!(trace_a, trace_b);
        for i in 0..model_a.params().len() {
            assert_eq!(model_a.params().tensor(i), model_b.params().tensor(i));
        }
    }

    #[test]
    fn loss_decreases_on_toy_sinusoid() {
        let cfg = TrainConfig {
            learning_rate: 2e-3,
            batch_size: 16,
            epochs: 4,
            batches_per_epoch: 8,
            patience: 10,
            seed: 3,
        };
        let (mut model, train_w, val_w) = toy_setup(2);
        let trace = train(&mut model, &train_w, &val_w, &cfg).unwrap();
        let first = trace.epochs.first().unwrap().train_loss;
        let last = trace.epochs.last().unwrap().train_loss;
        assert!(last < first, "no improvement: {first} -> {last}");
        assert!(model.is_trained());
    }

    #[test]
    fn non_finite_parameters_abort_with_diagnostic() {
        let (mut model, train_w, val_w) = toy_setup(5);
        model.params_mut().tensor_mut(0).fill(f64::NAN);
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 1,
            batches_per_epoch: 1,
            ..TrainConfig::default()
        };
        let err = train(&mut model, &train_w, &val_w, &cfg).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged(_)));
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let (mut model, _, val_w) = toy_setup(6);
        let err = train(&mut model, &[], &val_w, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("no training windows"));
    }
}
