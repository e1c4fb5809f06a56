//! Condition encoder and noise-prediction network.
//!
//! Both networks exist twice: a taped build (training, gradients) and a
//! plain forward (sampling, which runs thousands of times per window and
//! does not need a graph). The two paths share the same primitive helpers
//! and operation grouping, so they produce identical values; a test pins
//! that equivalence.

use ndarray::{Array2, Array3, ArrayD, ArrayView2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{conv1d_forward, sigmoid, Tape, TensorId};
use super::ModelConfig;
use crate::error::{Error, Result};

/// Named, index-addressed parameter tensors in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: &[usize], mut init: impl FnMut() -> f64) -> usize {
        debug_assert!(!self.names.iter().any(|n| n == name), "duplicate param {name}");
        self.names.push(name.to_string());
        self.tensors
            .push(ArrayD::from_shape_fn(IxDyn(shape), |_| init()));
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensor(&self, idx: usize) -> &ArrayD<f64> {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut ArrayD<f64> {
        &mut self.tensors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.tensors.iter().map(|t| t.shape()).collect()
    }

    /// Rounds every entry through f32 so the 32-bit checkpoint encoding is
    /// lossless afterwards.
    pub fn snap_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v as f32 as f64);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn as_2d(&self, idx: usize) -> ArrayView2<'_, f64> {
        self.tensors[idx].view().into_dimensionality().unwrap()
    }

    fn as_1d(&self, idx: usize) -> ndarray::ArrayView1<'_, f64> {
        self.tensors[idx].view().into_dimensionality().unwrap()
    }

    fn as_3d(&self, idx: usize) -> ndarray::ArrayView3<'_, f64> {
        self.tensors[idx].view().into_dimensionality().unwrap()
    }
}

/// Sinusoidal embedding of the diffusion step index: entry `2i` is
/// `sin(t / 10000^(2i/dim))`, entry `2i + 1` the matching cosine.
pub fn step_embed(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::InvalidConfig(format!("step embedding dim {dim} must be even and >= 2")));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10_000f64.powf(2.0 * i as f64 / dim as f64);
        let angle = t as f64 / freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Ok(out)
}

/// Gated activation unit: `tanh(w1 * x) .* sigmoid(w2 * x)` where `*` is a
/// same-padded dilated convolution over the position axis.
pub fn gated_activation(
    x: &Array2<f64>,
    w1: &Array3<f64>,
    w2: &Array3<f64>,
    dilation: usize,
) -> Result<Array2<f64>> {
    if w1.dim() != w2.dim() {
        return Err(Error::ShapeMismatch(format!(
            "gate weights disagree: {:?} vs {:?}",
            w1.dim(),
            w2.dim()
        )));
    }
    let (c_in, len) = x.dim();
    if w1.dim().1 != c_in {
        return Err(Error::ShapeMismatch(format!(
            "input has {c_in} channels, weights expect {}",
            w1.dim().1
        )));
    }
    if w1.dim().2 % 2 == 0 {
        return Err(Error::ShapeMismatch("kernel must be odd".into()));
    }
    let x3 = x
        .clone()
        .into_shape_with_order((1, c_in, len))
        .unwrap();
    let a = conv1d_forward(&x3, w1, dilation);
    let b = conv1d_forward(&x3, w2, dilation);
    let c_out = w1.dim().0;
    let mut out = Array2::zeros((c_out, len));
    for c in 0..c_out {
        for i in 0..len {
            out[[c, i]] = a[[0, c, i]].tanh() * sigmoid(b[[0, c, i]]);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Condition encoder
// ---------------------------------------------------------------------------

/// Per-layer recurrent hidden states, batch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionState {
    layers: Vec<Array2<f64>>,
}

impl ConditionState {
    pub fn zeros(batch: usize, hidden: usize, num_layers: usize) -> Self {
        Self {
            layers: vec![Array2::zeros((batch, hidden)); num_layers],
        }
    }

    /// Top-layer state: the condition embedding.
    pub fn h(&self) -> &Array2<f64> {
        self.layers.last().expect("at least one layer")
    }

    pub fn layer(&self, i: usize) -> &Array2<f64> {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.layers[i]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn batch(&self) -> usize {
        self.layers[0].nrows()
    }
}

#[derive(Debug, Clone)]
struct GruLayer {
    w_ir: usize,
    w_iz: usize,
    w_in: usize,
    w_hr: usize,
    w_hz: usize,
    w_hn: usize,
    b_ir: usize,
    b_iz: usize,
    b_in: usize,
    b_hr: usize,
    b_hz: usize,
    b_hn: usize,
}

/// Multi-layer gated recurrent encoder over `[x_t, c_{t+1}]` inputs.
#[derive(Debug, Clone)]
pub struct GruEncoder {
    layers: Vec<GruLayer>,
    pub hidden: usize,
    pub input_dim: usize,
}

impl GruEncoder {
    pub fn register(params: &mut ParamStore, config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = config.hidden;
        let mut layers = Vec::with_capacity(config.gru_layers);
        for l in 0..config.gru_layers {
            let input_dim = if l == 0 { config.encoder_input_dim() } else { hidden };
            let bound = 1.0 / (hidden as f64).sqrt();
            let mut init = |name: &str, shape: &[usize]| {
                params.register(&format!("gru.l{l}.{name}"), shape, || {
                    rng.gen_range(-bound..bound)
                })
            };
            layers.push(GruLayer {
                w_ir: init("w_ir", &[input_dim, hidden]),
                w_iz: init("w_iz", &[input_dim, hidden]),
                w_in: init("w_in", &[input_dim, hidden]),
                w_hr: init("w_hr", &[hidden, hidden]),
                w_hz: init("w_hz", &[hidden, hidden]),
                w_hn: init("w_hn", &[hidden, hidden]),
                b_ir: init("b_ir", &[hidden]),
                b_iz: init("b_iz", &[hidden]),
                b_in: init("b_in", &[hidden]),
                b_hr: init("b_hr", &[hidden]),
                b_hz: init("b_hz", &[hidden]),
                b_hn: init("b_hn", &[hidden]),
            });
        }
        Self {
            layers,
            hidden,
            input_dim: config.encoder_input_dim(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_state(&self, batch: usize) -> ConditionState {
        ConditionState::zeros(batch, self.hidden, self.layers.len())
    }

    /// One recurrent step on a batch; returns the updated state.
    pub fn step_plain(
        &self,
        params: &ParamStore,
        input: ArrayView2<'_, f64>,
        state: &ConditionState,
    ) -> ConditionState {
        debug_assert_eq!(input.ncols(), self.input_dim);
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut x = input.to_owned();
        for (l, p) in self.layers.iter().enumerate() {
            let h = &state.layers[l];
            let next = gru_cell_plain(params, p, &x, h);
            x = next.clone();
            layers.push(next);
        }
        ConditionState { layers }
    }

    /// Taped counterpart of [`GruEncoder::step_plain`]. `pnodes` maps
    /// parameter index to its tape node. State layers are tape nodes.
    pub fn step_taped(
        &self,
        tape: &mut Tape,
        pnodes: &[TensorId],
        input: TensorId,
        state: &[TensorId],
    ) -> Vec<TensorId> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for (l, p) in self.layers.iter().enumerate() {
            let next = gru_cell_taped(tape, pnodes, p, x, state[l]);
            x = next;
            layers.push(next);
        }
        layers
    }
}

fn matvec_bias(params: &ParamStore, x: &Array2<f64>, w: usize, b: usize) -> Array2<f64> {
    let mut out = x.dot(&params.as_2d(w));
    let bias = params.as_1d(b);
    for mut row in out.rows_mut() {
        for (v, bv) in row.iter_mut().zip(bias.iter()) {
            *v += bv;
        }
    }
    out
}

fn gru_cell_plain(
    params: &ParamStore,
    p: &GruLayer,
    x: &Array2<f64>,
    h: &Array2<f64>,
) -> Array2<f64> {
    let r_pre = matvec_bias(params, x, p.w_ir, p.b_ir) + &matvec_bias(params, h, p.w_hr, p.b_hr);
    let r = r_pre.mapv(sigmoid);
    let z_pre = matvec_bias(params, x, p.w_iz, p.b_iz) + &matvec_bias(params, h, p.w_hz, p.b_hz);
    let z = z_pre.mapv(sigmoid);
    let hn = matvec_bias(params, h, p.w_hn, p.b_hn);
    let n_pre = matvec_bias(params, x, p.w_in, p.b_in) + &(&r * &hn);
    let n = n_pre.mapv(f64::tanh);
    // h' = n + z .* (h - n)
    &n + &(&z * &(h - &n))
}

fn gru_cell_taped(
    tape: &mut Tape,
    pnodes: &[TensorId],
    p: &GruLayer,
    x: TensorId,
    h: TensorId,
) -> TensorId {
    let gate_pre = |tape: &mut Tape, wi: usize, bi: usize, wh: usize, bh: usize| {
        let xi = tape.matmul(x, pnodes[wi]);
        let xi = tape.add_row_bias(xi, pnodes[bi]);
        let hh = tape.matmul(h, pnodes[wh]);
        let hh = tape.add_row_bias(hh, pnodes[bh]);
        tape.add(xi, hh)
    };
    let r_pre = gate_pre(tape, p.w_ir, p.b_ir, p.w_hr, p.b_hr);
    let r = tape.sigmoid_op(r_pre);
    let z_pre = gate_pre(tape, p.w_iz, p.b_iz, p.w_hz, p.b_hz);
    let z = tape.sigmoid_op(z_pre);

    let hn = tape.matmul(h, pnodes[p.w_hn]);
    let hn = tape.add_row_bias(hn, pnodes[p.b_hn]);
    let xn = tape.matmul(x, pnodes[p.w_in]);
    let xn = tape.add_row_bias(xn, pnodes[p.b_in]);
    let rn = tape.mul(r, hn);
    let n_pre = tape.add(xn, rn);
    let n = tape.tanh(n_pre);

    let neg_n = tape.affine(n, -1.0, 0.0);
    let h_minus_n = tape.add(h, neg_n);
    let z_gate = tape.mul(z, h_minus_n);
    tape.add(n, z_gate)
}

/// One application of the condition encoder to `[x_prev, cov_next]`,
/// the public single-vector form.
pub fn condition_encode(
    x_prev: &[f64],
    cov_next: &[f64],
    state: &ConditionState,
    encoder: &GruEncoder,
    params: &ParamStore,
) -> Result<ConditionState> {
    if x_prev.len() + cov_next.len() != encoder.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "encoder input is {} + {} values, expected {}",
            x_prev.len(),
            cov_next.len(),
            encoder.input_dim
        )));
    }
    if state.num_layers() != encoder.num_layers() || state.h().ncols() != encoder.hidden {
        return Err(Error::ShapeMismatch("condition state does not match encoder".into()));
    }
    let mut input = Array2::zeros((1, encoder.input_dim));
    for (j, v) in x_prev.iter().chain(cov_next.iter()).enumerate() {
        input[[0, j]] = *v;
    }
    let next = encoder.step_plain(params, input.view(), state);
    if next.layers.iter().any(|l| l.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidData("non-finite encoder state".into()));
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Noise-prediction network
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ResLayer {
    step_w: usize,
    step_b: usize,
    cond_w: usize,
    cond_b: usize,
    gate_w1: usize,
    gate_b1: usize,
    gate_w2: usize,
    gate_b2: usize,
    res_w: usize,
    res_b: usize,
    skip_w: usize,
    skip_b: usize,
    dilation: usize,
}

/// Dilated-convolution network predicting the injected noise from the
/// corrupted metric vector, the diffusion step index and the condition
/// embedding. Residual layers with gated activations and skip connections;
/// convolutions run along the metric axis.
#[derive(Debug, Clone)]
pub struct EpsilonNet {
    input_w: usize,
    input_b: usize,
    mlp_w1: usize,
    mlp_b1: usize,
    mlp_w2: usize,
    mlp_b2: usize,
    layers: Vec<ResLayer>,
    out_w1: usize,
    out_b1: usize,
    out_w2: usize,
    out_b2: usize,
    pub num_metrics: usize,
    pub channels: usize,
    pub hidden: usize,
    pub step_embed_dim: usize,
}

impl EpsilonNet {
    pub fn register(params: &mut ParamStore, config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.res_channels;
        let k = config.kernel_size;
        let s = config.step_mlp_dim;
        let mut uniform = |params: &mut ParamStore, name: String, shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.register(&name, shape, || rng.gen_range(-bound..bound))
        };

        let input_w = uniform(params, "eps.input.w".into(), &[c, 1, 1], 1);
        let input_b = uniform(params, "eps.input.b".into(), &[c], 1);
        let mlp_w1 = uniform(params, "eps.step.w1".into(), &[config.step_embed_dim, s], config.step_embed_dim);
        let mlp_b1 = uniform(params, "eps.step.b1".into(), &[s], config.step_embed_dim);
        let mlp_w2 = uniform(params, "eps.step.w2".into(), &[s, s], s);
        let mlp_b2 = uniform(params, "eps.step.b2".into(), &[s], s);

        let mut layers = Vec::with_capacity(config.res_layers);
        for l in 0..config.res_layers {
            let dilation = 1usize << (l % config.dilation_cycle);
            let name = |part: &str| format!("eps.res{l}.{part}");
            layers.push(ResLayer {
                step_w: uniform(params, name("step_w"), &[s, c], s),
                step_b: uniform(params, name("step_b"), &[c], s),
                cond_w: uniform(params, name("cond_w"), &[config.hidden, c], config.hidden),
                cond_b: uniform(params, name("cond_b"), &[c], config.hidden),
                gate_w1: uniform(params, name("gate_w1"), &[c, c, k], c * k),
                gate_b1: uniform(params, name("gate_b1"), &[c], c * k),
                gate_w2: uniform(params, name("gate_w2"), &[c, c, k], c * k),
                gate_b2: uniform(params, name("gate_b2"), &[c], c * k),
                res_w: uniform(params, name("res_w"), &[c, c, 1], c),
                res_b: uniform(params, name("res_b"), &[c], c),
                skip_w: uniform(params, name("skip_w"), &[c, c, 1], c),
                skip_b: uniform(params, name("skip_b"), &[c], c),
                dilation,
            });
        }

        let out_w1 = uniform(params, "eps.out.w1".into(), &[c, c, 1], c);
        let out_b1 = uniform(params, "eps.out.b1".into(), &[c], c);
        // Zero-initialized output projection: the untrained net predicts zero noise.
        let out_w2 = params.register("eps.out.w2", &[1, c, 1], || 0.0);
        let out_b2 = params.register("eps.out.b2", &[1], || 0.0);

        Self {
            input_w,
            input_b,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            layers,
            out_w1,
            out_b1,
            out_w2,
            out_b2,
            num_metrics: config.num_metrics,
            channels: c,
            hidden: config.hidden,
            step_embed_dim: config.step_embed_dim,
        }
    }

    /// Step-index embedding rows for a batch.
    pub fn embed_steps(&self, ts: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((ts.len(), self.step_embed_dim));
        for (b, &t) in ts.iter().enumerate() {
            for (j, v) in step_embed(t, self.step_embed_dim).unwrap().into_iter().enumerate() {
                out[[b, j]] = v;
            }
        }
        out
    }

    /// Plain forward: x `(B, m)`, per-row step embeddings `(B, d_t)`,
    /// condition `(B, H)`.
    pub fn forward_plain(
        &self,
        params: &ParamStore,
        x: ArrayView2<'_, f64>,
        emb: ArrayView2<'_, f64>,
        h: ArrayView2<'_, f64>,
    ) -> Array2<f64> {
        let (batch, m) = x.dim();
        debug_assert_eq!(m, self.num_metrics);

        let e = matvec_bias(params, &emb.to_owned(), self.mlp_w1, self.mlp_b1).mapv(|v| v * sigmoid(v));
        let e = matvec_bias(params, &e, self.mlp_w2, self.mlp_b2).mapv(|v| v * sigmoid(v));

        let x3 = x.to_owned().into_shape_with_order((batch, 1, m)).unwrap();
        let v = conv1d_forward(&x3, &params.as_3d(self.input_w).to_owned(), 1);
        let v = add_chan_bias_plain(v, params.as_1d(self.input_b));
        let mut v = v.mapv(|v| v * sigmoid(v));

        let mut skip_sum = Array3::<f64>::zeros((batch, self.channels, m));
        for layer in &self.layers {
            let sv = matvec_bias(params, &e, layer.step_w, layer.step_b);
            let cv = matvec_bias(params, &h.to_owned(), layer.cond_w, layer.cond_b);
            let u = add_chan_vec_plain(add_chan_vec_plain(v.clone(), &sv), &cv);
            let a = add_chan_bias_plain(
                conv1d_forward(&u, &params.as_3d(layer.gate_w1).to_owned(), layer.dilation),
                params.as_1d(layer.gate_b1),
            );
            let b = add_chan_bias_plain(
                conv1d_forward(&u, &params.as_3d(layer.gate_w2).to_owned(), layer.dilation),
                params.as_1d(layer.gate_b2),
            );
            let g = azip_gate(&a, &b);
            let skip = add_chan_bias_plain(
                conv1d_forward(&g, &params.as_3d(layer.skip_w).to_owned(), 1),
                params.as_1d(layer.skip_b),
            );
            skip_sum = skip_sum + skip;
            let res = add_chan_bias_plain(
                conv1d_forward(&g, &params.as_3d(layer.res_w).to_owned(), 1),
                params.as_1d(layer.res_b),
            );
            v = v + res;
        }

        let o = add_chan_bias_plain(
            conv1d_forward(&skip_sum, &params.as_3d(self.out_w1).to_owned(), 1),
            params.as_1d(self.out_b1),
        );
        let o = o.mapv(|v| v * sigmoid(v));
        let o = add_chan_bias_plain(
            conv1d_forward(&o, &params.as_3d(self.out_w2).to_owned(), 1),
            params.as_1d(self.out_b2),
        );
        o.into_shape_with_order((batch, m)).unwrap()
    }

    /// Taped forward mirroring [`EpsilonNet::forward_plain`].
    pub fn forward_taped(
        &self,
        tape: &mut Tape,
        pnodes: &[TensorId],
        x: TensorId,
        emb: TensorId,
        h: TensorId,
    ) -> TensorId {
        let shape = tape.value(x).shape().to_vec();
        let (batch, m) = (shape[0], shape[1]);

        let linear = |tape: &mut Tape, x: TensorId, w: usize, b: usize| {
            let y = tape.matmul(x, pnodes[w]);
            tape.add_row_bias(y, pnodes[b])
        };
        let e = linear(tape, emb, self.mlp_w1, self.mlp_b1);
        let e = tape.silu(e);
        let e = linear(tape, e, self.mlp_w2, self.mlp_b2);
        let e = tape.silu(e);

        let x3 = tape.reshape(x, &[batch, 1, m]);
        let v = tape.conv1d(x3, pnodes[self.input_w], 1);
        let v = tape.add_chan_bias(v, pnodes[self.input_b]);
        let mut v = tape.silu(v);

        let mut skip_sum: Option<TensorId> = None;
        for layer in &self.layers {
            let sv = linear(tape, e, layer.step_w, layer.step_b);
            let cv = linear(tape, h, layer.cond_w, layer.cond_b);
            let u = tape.add_chan_vec(v, sv);
            let u = tape.add_chan_vec(u, cv);
            let a = tape.conv1d(u, pnodes[layer.gate_w1], layer.dilation);
            let a = tape.add_chan_bias(a, pnodes[layer.gate_b1]);
            let a = tape.tanh(a);
            let b = tape.conv1d(u, pnodes[layer.gate_w2], layer.dilation);
            let b = tape.add_chan_bias(b, pnodes[layer.gate_b2]);
            let b = tape.sigmoid_op(b);
            let g = tape.mul(a, b);
            let skip = tape.conv1d(g, pnodes[layer.skip_w], 1);
            let skip = tape.add_chan_bias(skip, pnodes[layer.skip_b]);
            skip_sum = Some(match skip_sum {
                Some(acc) => tape.add(acc, skip),
                None => skip,
            });
            let res = tape.conv1d(g, pnodes[layer.res_w], 1);
            let res = tape.add_chan_bias(res, pnodes[layer.res_b]);
            v = tape.add(v, res);
        }

        let o = tape.conv1d(skip_sum.expect("at least one residual layer"), pnodes[self.out_w1], 1);
        let o = tape.add_chan_bias(o, pnodes[self.out_b1]);
        let o = tape.silu(o);
        let o = tape.conv1d(o, pnodes[self.out_w2], 1);
        let o = tape.add_chan_bias(o, pnodes[self.out_b2]);
        tape.reshape(o, &[batch, m])
    }
}

fn add_chan_bias_plain(mut x: Array3<f64>, bias: ndarray::ArrayView1<'_, f64>) -> Array3<f64> {
    let (batch, chans, len) = x.dim();
    for b in 0..batch {
        for c in 0..chans {
            let add = bias[c];
            for i in 0..len {
                x[[b, c, i]] += add;
            }
        }
    }
    x
}

fn add_chan_vec_plain(mut x: Array3<f64>, v: &Array2<f64>) -> Array3<f64> {
    let (batch, chans, len) = x.dim();
    for b in 0..batch {
        for c in 0..chans {
            let add = v[[b, c]];
            for i in 0..len {
                x[[b, c, i]] += add;
            }
        }
    }
    x
}

fn azip_gate(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    let mut out = a.mapv(f64::tanh);
    out.zip_mut_with(b, |t, s| *t *= sigmoid(*s));
    out
}

/// Predicts the injected noise for one corrupted metric vector. Validates
/// dimensions and finiteness; `t` range checking is the schedule's job.
pub fn eps_predict(
    x_t: &[f64],
    t: usize,
    state: &ConditionState,
    net: &EpsilonNet,
    params: &ParamStore,
) -> Result<Vec<f64>> {
    if x_t.len() != net.num_metrics {
        return Err(Error::ShapeMismatch(format!(
            "x_t has {} entries, network expects {}",
            x_t.len(),
            net.num_metrics
        )));
    }
    if state.h().dim() != (1, net.hidden) {
        return Err(Error::ShapeMismatch(format!(
            "condition state is {:?}, expected (1, {})",
            state.h().dim(),
            net.hidden
        )));
    }
    let x = Array2::from_shape_vec((1, x_t.len()), x_t.to_vec()).unwrap();
    let emb = net.embed_steps(&[t]);
    let out = net.forward_plain(params, x.view(), emb.view(), state.h().view());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite activations in noise prediction".into()));
    }
    Ok(out.row(0).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::WindowSpec;

    fn toy_config() -> ModelConfig {
        let mut config = ModelConfig::new(2, WindowSpec::new(6, 2, 1).unwrap());
        config.hidden = 8;
        config.gru_layers = 2;
        config.res_layers = 2;
        config.res_channels = 6;
        config.step_embed_dim = 4;
        config.step_mlp_dim = 6;
        config.t_steps = 10;
        config
    }

    fn toy_parts() -> (ParamStore, GruEncoder, EpsilonNet) {
        let config = toy_config();
        let mut params = ParamStore::new();
        let enc = GruEncoder::register(&mut params, &config, 3);
        let net = EpsilonNet::register(&mut params, &config, 4);
        (params, enc, net)
    }

    #[test]
    fn step_embed_at_zero_alternates_zero_one() {
        let e = step_embed(0, 8).unwrap();
        assert_eq!(e, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn step_embed_entries_bounded() {
        for t in [1usize, 17, 999, 100_000] {
            for v in step_embed(t, 32).unwrap() {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
        assert!(step_embed(3, 5).is_err());
        assert!(step_embed(3, 0).is_err());
    }

    #[test]
    fn step_embed_matches_scalar_evaluation() {
        let e = step_embed(1, 4).unwrap();
        // freq for pair 0 is 10000^0 = 1, for pair 1 is 10000^(2/4) = 100.
        let expected = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in e.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gated_activation_zero_first_branch_kills_output() {
        let x = Array2::from_shape_vec((1, 5), vec![0.3, -0.7, 1.1, 0.0, 2.0]).unwrap();
        let w1 = Array3::zeros((2, 1, 3));
        let w2 = Array3::from_elem((2, 1, 3), 0.5);
        let out = gated_activation(&x, &w1, &w2, 1).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gated_activation_saturated_sigmoid_is_tanh_branch() {
        let x = Array2::from_elem((1, 4), 1.0);
        let w1 = Array3::from_elem((1, 1, 1), 0.8);
        let w2 = Array3::from_elem((1, 1, 1), 100.0);
        let out = gated_activation(&x, &w1, &w2, 1).unwrap();
        for v in out.iter() {
            assert!((v - 0.8f64.tanh()).abs() < 1e-9);
        }
    }

    #[test]
    fn gated_activation_matches_scalar_product() {
        let x = Array2::from_shape_vec((1, 1), vec![0.5]).unwrap();
        let w = Array3::from_elem((1, 1, 1), 1.0);
        let out = gated_activation(&x, &w, &w, 1).unwrap();
        let expected = 0.5f64.tanh() * (1.0 / (1.0 + (-0.5f64).exp()));
        assert!((out[[0, 0]] - expected).abs() < 1e-15);
        assert!(out[[0, 0]] > -1.0 && out[[0, 0]] < 1.0);
    }

    #[test]
    fn zeroed_gru_keeps_state_at_zero() {
        let config = toy_config();
        let mut params = ParamStore::new();
        let enc = GruEncoder::register(&mut params, &config, 1);
        for i in 0..params.len() {
            params.tensor_mut(i).fill(0.0);
        }
        let state = enc.zero_state(1);
        let next = condition_encode(&[1.0, -2.0], &[0.5, 0.1, 0.2, 0.3, 0.4], &state, &enc, &params)
            .unwrap();
        assert!(next.h().iter().all(|&v| v == 0.0));
        assert!(next.layer(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn condition_encode_is_deterministic() {
        let (params, enc, _) = toy_parts();
        let state = enc.zero_state(1);
        let x = [0.4, -1.0];
        let cov = [0.1, 0.9, -0.3, 0.0, 1.0];
        let a = condition_encode(&x, &cov, &state, &enc, &params).unwrap();
        let b = condition_encode(&x, &cov, &state, &enc, &params).unwrap();
        assert_eq!(a, b);
        assert!(condition_encode(&[0.4], &cov, &state, &enc, &params).is_err());
    }

    #[test]
    fn gru_cell_matches_hand_evaluation() {
        // One 2-unit cell with fixed small weights, evaluated against the
        // cell equations written out scalar by scalar.
        let mut config = toy_config();
        config.num_metrics = 1;
        config.cov_dim = 1;
        config.hidden = 2;
        config.gru_layers = 1;
        let mut params = ParamStore::new();
        let enc = GruEncoder::register(&mut params, &config, 0);
        let fill = |params: &mut ParamStore, name: &str, vals: &[f64]| {
            let idx = params.index_of(name).unwrap();
            for (slot, v) in params.tensor_mut(idx).iter_mut().zip(vals) {
                *slot = *v;
            }
        };
        // Input weights (2x2), hidden weights (2x2), biases (2).
        fill(&mut params, "gru.l0.w_ir", &[0.1, -0.2, 0.3, 0.05]);
        fill(&mut params, "gru.l0.w_iz", &[-0.1, 0.2, 0.15, -0.05]);
        fill(&mut params, "gru.l0.w_in", &[0.2, 0.1, -0.3, 0.25]);
        fill(&mut params, "gru.l0.w_hr", &[0.05, 0.1, -0.15, 0.2]);
        fill(&mut params, "gru.l0.w_hz", &[0.12, -0.08, 0.04, 0.3]);
        fill(&mut params, "gru.l0.w_hn", &[-0.2, 0.18, 0.07, -0.11]);
        fill(&mut params, "gru.l0.b_ir", &[0.01, -0.02]);
        fill(&mut params, "gru.l0.b_iz", &[0.03, 0.04]);
        fill(&mut params, "gru.l0.b_in", &[-0.01, 0.02]);
        fill(&mut params, "gru.l0.b_hr", &[0.02, 0.01]);
        fill(&mut params, "gru.l0.b_hz", &[-0.03, 0.0]);
        fill(&mut params, "gru.l0.b_hn", &[0.0, 0.05]);

        let x = [0.5, -0.4]; // one metric value + one covariate
        let h0 = [0.3, -0.6];

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut expected = [0.0f64; 2];
        let w_ir = [[0.1, -0.2], [0.3, 0.05]];
        let w_iz = [[-0.1, 0.2], [0.15, -0.05]];
        let w_in = [[0.2, 0.1], [-0.3, 0.25]];
        let w_hr = [[0.05, 0.1], [-0.15, 0.2]];
        let w_hz = [[0.12, -0.08], [0.04, 0.3]];
        let w_hn = [[-0.2, 0.18], [0.07, -0.11]];
        let b_ir = [0.01, -0.02];
        let b_iz = [0.03, 0.04];
        let b_in = [-0.01, 0.02];
        let b_hr = [0.02, 0.01];
        let b_hz = [-0.03, 0.0];
        let b_hn = [0.0, 0.05];
        for u in 0..2 {
            let xr = x[0] * w_ir[0][u] + x[1] * w_ir[1][u] + b_ir[u];
            let hr = h0[0] * w_hr[0][u] + h0[1] * w_hr[1][u] + b_hr[u];
            let r = sig(xr + hr);
            let xz = x[0] * w_iz[0][u] + x[1] * w_iz[1][u] + b_iz[u];
            let hz = h0[0] * w_hz[0][u] + h0[1] * w_hz[1][u] + b_hz[u];
            let z = sig(xz + hz);
            let xn = x[0] * w_in[0][u] + x[1] * w_in[1][u] + b_in[u];
            let hn = h0[0] * w_hn[0][u] + h0[1] * w_hn[1][u] + b_hn[u];
            let n = (xn + r * hn).tanh();
            expected[u] = n + z * (h0[u] - n);
        }

        let mut state = enc.zero_state(1);
        state.layers[0][[0, 0]] = h0[0];
        state.layers[0][[0, 1]] = h0[1];
        let next = condition_encode(&x[..1], &x[1..], &state, &enc, &params).unwrap();
        for u in 0..2 {
            assert!(
                (next.h()[[0, u]] - expected[u]).abs() < 1e-12,
                "unit {u}: {} vs {}",
                next.h()[[0, u]],
                expected[u]
            );
        }
    }

    #[test]
    fn zeroed_eps_net_predicts_zero() {
        let config = toy_config();
        let mut params = ParamStore::new();
        let enc = GruEncoder::register(&mut params, &config, 1);
        let net = EpsilonNet::register(&mut params, &config, 2);
        for i in 0..params.len() {
            params.tensor_mut(i).fill(0.0);
        }
        let state = enc.zero_state(1);
        let out = eps_predict(&[0.7, -1.3], 3, &state, &net, &params).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn untrained_net_with_zero_output_projection_predicts_zero() {
        // Only the output projection starts at zero; that alone pins the output.
        let (params, enc, net) = toy_parts();
        let state = enc.zero_state(1);
        let out = eps_predict(&[0.7, -1.3], 3, &state, &net, &params).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn eps_predict_is_deterministic_and_checks_shapes() {
        let (mut params, enc, net) = toy_parts();
        // Randomize the zero-initialized output projection too.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for name in ["eps.out.w2", "eps.out.b2"] {
            let idx = params.index_of(name).unwrap();
            params
                .tensor_mut(idx)
                .mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let mut state = enc.zero_state(1);
        state.layers[1][[0, 3]] = 0.25;
        let a = eps_predict(&[0.7, -1.3], 3, &state, &net, &params).unwrap();
        let b = eps_predict(&[0.7, -1.3], 3, &state, &net, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|&v| v != 0.0));
        assert!(eps_predict(&[0.7], 3, &state, &net, &params).is_err());
    }

    #[test]
    fn taped_and_plain_forwards_agree() {
        let (mut params, enc, net) = toy_parts();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for name in ["eps.out.w2", "eps.out.b2"] {
            let idx = params.index_of(name).unwrap();
            params
                .tensor_mut(idx)
                .mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let batch = 3;
        let x = Array2::from_shape_fn((batch, 2), |_| rng.gen_range(-1.5..1.5));
        let input = Array2::from_shape_fn((batch, enc.input_dim), |_| rng.gen_range(-1.0..1.0));
        let ts = [1usize, 5, 9];
        let emb = net.embed_steps(&ts);

        // Plain route.
        let state = enc.zero_state(batch);
        let state = enc.step_plain(&params, input.view(), &state);
        let plain = net.forward_plain(&params, x.view(), emb.view(), state.h().view());

        // Taped route.
        let mut tape = Tape::new();
        let pnodes: Vec<_> = (0..params.len())
            .map(|i| tape.param(i, params.tensor(i).clone()))
            .collect();
        let input_node = tape.constant(input.into_dyn());
        let zeros: Vec<_> = (0..enc.num_layers())
            .map(|_| tape.constant(ndarray::ArrayD::zeros(IxDyn(&[batch, enc.hidden]))))
            .collect();
        let hs = enc.step_taped(&mut tape, &pnodes, input_node, &zeros);
        let x_node = tape.constant(x.into_dyn());
        let emb_node = tape.constant(emb.into_dyn());
        let out = net.forward_taped(&mut tape, &pnodes, x_node, emb_node, *hs.last().unwrap());

        let taped = tape.value(out);
        for (a, b) in plain.iter().zip(taped.iter()) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }
}
