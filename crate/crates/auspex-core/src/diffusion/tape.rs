//! Minimal reverse-mode automatic differentiation over f64 tensors.
//!
//! The op set is exactly what the condition encoder and the noise-prediction
//! network need: matrix products, broadcast additions, elementwise
//! nonlinearities, dilated 1-D convolution and the smooth-L1 objective.
//! A tape is built per training step; [`Tape::backward`] walks it once and
//! accumulates gradients for parameter leaves.

use ndarray::{Array3, ArrayD, Ix2, Ix3, IxDyn};

pub type TensorId = usize;

enum Op {
    /// Constant input or parameter; `param` indexes the parameter store.
    Leaf { param: Option<usize> },
    /// `(B, D) x (D, H)`.
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    /// `(B, H) + (H,)` broadcast over rows.
    AddRowBias(TensorId, TensorId),
    /// `(B, C, L) + (C,)` broadcast over batch and positions.
    AddChanBias(TensorId, TensorId),
    /// `(B, C, L) + (B, C)` broadcast over positions.
    AddChanVec(TensorId, TensorId),
    Mul(TensorId, TensorId),
    /// `a * x + b` elementwise; only the multiplier matters on the way back.
    Affine(TensorId, f64),
    Tanh(TensorId),
    Sigmoid(TensorId),
    Silu(TensorId),
    /// Same-padded 1-D convolution: x `(B, Cin, L)`, w `(Cout, Cin, K)`.
    Conv1d {
        x: TensorId,
        w: TensorId,
        dilation: usize,
    },
    Reshape(TensorId),
    /// Mean smooth-L1 against a constant target; scalar output.
    SmoothL1 { pred: TensorId, target: ArrayD<f64> },
    /// Mean of scalar nodes; scalar output.
    MeanScalars(Vec<TensorId>),
}

struct Node {
    op: Op,
    value: ArrayD<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Same-padded dilated 1-D convolution shared by the tape and the plain
/// inference path, so both routes produce identical values.
pub(crate) fn conv1d_forward(x: &Array3<f64>, w: &Array3<f64>, dilation: usize) -> Array3<f64> {
    let (batch, c_in, len) = x.dim();
    let (c_out, wc_in, kernel) = w.dim();
    assert_eq!(c_in, wc_in, "conv input channels");
    assert!(kernel % 2 == 1, "conv kernel must be odd");
    let half = (kernel / 2) as isize;
    let mut out = Array3::zeros((batch, c_out, len));
    for b in 0..batch {
        for co in 0..c_out {
            for i in 0..len {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    for k in 0..kernel {
                        let j = i as isize + (k as isize - half) * dilation as isize;
                        if j >= 0 && (j as usize) < len {
                            acc += w[[co, ci, k]] * x[[b, ci, j as usize]];
                        }
                    }
                }
                out[[b, co, i]] = acc;
            }
        }
    }
    out
}

/// Piecewise smooth-L1 over all entries, averaged.
pub(crate) fn smooth_l1_mean(pred: &ArrayD<f64>, target: &ArrayD<f64>) -> f64 {
    assert_eq!(pred.shape(), target.shape());
    let n = pred.len() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(p, t)| {
            let e = p - t;
            if e.abs() < 1.0 {
                0.5 * e * e
            } else {
                e.abs() - 0.5
            }
        })
        .sum::<f64>()
        / n
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>) -> TensorId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: TensorId) -> &ArrayD<f64> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v.iter().next().copied().unwrap()
    }

    pub fn constant(&mut self, value: ArrayD<f64>) -> TensorId {
        self.push(Op::Leaf { param: None }, value)
    }

    pub fn param(&mut self, index: usize, value: ArrayD<f64>) -> TensorId {
        self.push(Op::Leaf { param: Some(index) }, value)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let av = self.nodes[a].value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.nodes[b].value.view().into_dimensionality::<Ix2>().unwrap();
        let value = av.dot(&bv).into_dyn();
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(Op::Add(a, b), value)
    }

    pub fn add_row_bias(&mut self, x: TensorId, bias: TensorId) -> TensorId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix2>().unwrap();
        let bv = &self.nodes[bias].value;
        assert_eq!(bv.ndim(), 1);
        assert_eq!(xv.ncols(), bv.len());
        let mut value = xv.to_owned();
        for mut row in value.rows_mut() {
            for (v, b) in row.iter_mut().zip(bv.iter()) {
                *v += b;
            }
        }
        self.push(Op::AddRowBias(x, bias), value.into_dyn())
    }

    pub fn add_chan_bias(&mut self, x: TensorId, bias: TensorId) -> TensorId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix3>().unwrap();
        let bv = &self.nodes[bias].value;
        assert_eq!(bv.ndim(), 1);
        assert_eq!(xv.dim().1, bv.len());
        let mut value = xv.to_owned();
        let (batch, chans, len) = value.dim();
        for b in 0..batch {
            for c in 0..chans {
                let add = bv[[c]];
                for i in 0..len {
                    value[[b, c, i]] += add;
                }
            }
        }
        self.push(Op::AddChanBias(x, bias), value.into_dyn())
    }

    pub fn add_chan_vec(&mut self, x: TensorId, vec: TensorId) -> TensorId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix3>().unwrap();
        let vv = self.nodes[vec].value.view().into_dimensionality::<Ix2>().unwrap();
        let (batch, chans, len) = xv.dim();
        assert_eq!((batch, chans), vv.dim());
        let mut value = xv.to_owned();
        for b in 0..batch {
            for c in 0..chans {
                let add = vv[[b, c]];
                for i in 0..len {
                    value[[b, c, i]] += add;
                }
            }
        }
        self.push(Op::AddChanVec(x, vec), value.into_dyn())
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let value = &self.nodes[a].value * &self.nodes[b].value;
        self.push(Op::Mul(a, b), value)
    }

    pub fn affine(&mut self, x: TensorId, mul: f64, add: f64) -> TensorId {
        let value = self.nodes[x].value.mapv(|v| mul * v + add);
        self.push(Op::Affine(x, mul), value)
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x].value.mapv(f64::tanh);
        self.push(Op::Tanh(x), value)
    }

    pub fn sigmoid_op(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x].value.mapv(sigmoid);
        self.push(Op::Sigmoid(x), value)
    }

    pub fn silu(&mut self, x: TensorId) -> TensorId {
        let value = self.nodes[x].value.mapv(|v| v * sigmoid(v));
        self.push(Op::Silu(x), value)
    }

    pub fn conv1d(&mut self, x: TensorId, w: TensorId, dilation: usize) -> TensorId {
        let xv = self.nodes[x].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
        let wv = self.nodes[w].value.view().into_dimensionality::<Ix3>().unwrap().to_owned();
        let value = conv1d_forward(&xv, &wv, dilation).into_dyn();
        self.push(Op::Conv1d { x, w, dilation }, value)
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> TensorId {
        let value = self.nodes[x]
            .value
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape must preserve element count");
        self.push(Op::Reshape(x), value)
    }

    pub fn smooth_l1(&mut self, pred: TensorId, target: ArrayD<f64>) -> TensorId {
        let loss = smooth_l1_mean(&self.nodes[pred].value, &target);
        self.push(
            Op::SmoothL1 { pred, target },
            ArrayD::from_elem(IxDyn(&[]), loss),
        )
    }

    pub fn mean_scalars(&mut self, terms: Vec<TensorId>) -> TensorId {
        assert!(!terms.is_empty());
        let mean = terms.iter().map(|&id| self.scalar(id)).sum::<f64>() / terms.len() as f64;
        self.push(Op::MeanScalars(terms), ArrayD::from_elem(IxDyn(&[]), mean))
    }

    /// Backpropagates from a scalar `loss` node and returns gradients for
    /// the first `num_params` parameter slots (zeros where unused).
    pub fn backward(&self, loss: TensorId, num_params: usize, shapes: &[&[usize]]) -> Vec<ArrayD<f64>> {
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(ArrayD::from_elem(IxDyn(&[]), 1.0));

        let add_grad = |slot: &mut Option<ArrayD<f64>>, g: ArrayD<f64>| match slot {
            Some(acc) => *acc += &g,
            None => *slot = Some(g),
        };

        for id in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Leaf { .. } => {
                    grads[id] = Some(grad); // keep for parameter extraction
                    continue;
                }
                Op::MatMul(a, b) => {
                    let g = grad.view().into_dimensionality::<Ix2>().unwrap();
                    let av = self.nodes[*a].value.view().into_dimensionality::<Ix2>().unwrap();
                    let bv = self.nodes[*b].value.view().into_dimensionality::<Ix2>().unwrap();
                    add_grad(&mut grads[*a], g.dot(&bv.t()).into_dyn());
                    add_grad(&mut grads[*b], av.t().dot(&g).into_dyn());
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads[*a], grad.clone());
                    add_grad(&mut grads[*b], grad);
                }
                Op::AddRowBias(x, bias) => {
                    let g = grad.view().into_dimensionality::<Ix2>().unwrap();
                    let gb = g.sum_axis(ndarray::Axis(0));
                    add_grad(&mut grads[*bias], gb.into_dyn());
                    add_grad(&mut grads[*x], grad);
                }
                Op::AddChanBias(x, bias) => {
                    let g = grad.view().into_dimensionality::<Ix3>().unwrap();
                    let gb = g.sum_axis(ndarray::Axis(0)).sum_axis(ndarray::Axis(1));
                    add_grad(&mut grads[*bias], gb.into_dyn());
                    add_grad(&mut grads[*x], grad);
                }
                Op::AddChanVec(x, vec) => {
                    let g = grad.view().into_dimensionality::<Ix3>().unwrap();
                    let gv = g.sum_axis(ndarray::Axis(2));
                    add_grad(&mut grads[*vec], gv.into_dyn());
                    add_grad(&mut grads[*x], grad);
                }
                Op::Mul(a, b) => {
                    add_grad(&mut grads[*a], &grad * &self.nodes[*b].value);
                    add_grad(&mut grads[*b], &grad * &self.nodes[*a].value);
                }
                Op::Affine(x, mul) => {
                    add_grad(&mut grads[*x], grad.mapv(|g| g * mul));
                }
                Op::Tanh(x) => {
                    let y = &self.nodes[id].value;
                    add_grad(&mut grads[*x], &grad * &y.mapv(|y| 1.0 - y * y));
                }
                Op::Sigmoid(x) => {
                    let y = &self.nodes[id].value;
                    add_grad(&mut grads[*x], &grad * &y.mapv(|y| y * (1.0 - y)));
                }
                Op::Silu(x) => {
                    let xin = &self.nodes[*x].value;
                    let d = xin.mapv(|v| {
                        let s = sigmoid(v);
                        s + v * s * (1.0 - s)
                    });
                    add_grad(&mut grads[*x], &grad * &d);
                }
                Op::Conv1d { x, w, dilation } => {
                    let g = grad.view().into_dimensionality::<Ix3>().unwrap();
                    let xv = self.nodes[*x].value.view().into_dimensionality::<Ix3>().unwrap();
                    let wv = self.nodes[*w].value.view().into_dimensionality::<Ix3>().unwrap();
                    let (batch, c_in, len) = xv.dim();
                    let (c_out, _, kernel) = wv.dim();
                    let half = (kernel / 2) as isize;
                    let mut gx = Array3::<f64>::zeros((batch, c_in, len));
                    let mut gw = Array3::<f64>::zeros((c_out, c_in, kernel));
                    for b in 0..batch {
                        for co in 0..c_out {
                            for i in 0..len {
                                let go = g[[b, co, i]];
                                if go == 0.0 {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    for k in 0..kernel {
                                        let j = i as isize + (k as isize - half) * *dilation as isize;
                                        if j >= 0 && (j as usize) < len {
                                            gx[[b, ci, j as usize]] += wv[[co, ci, k]] * go;
                                            gw[[co, ci, k]] += xv[[b, ci, j as usize]] * go;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    add_grad(&mut grads[*x], gx.into_dyn());
                    add_grad(&mut grads[*w], gw.into_dyn());
                }
                Op::Reshape(x) => {
                    let shaped = grad
                        .into_shape_with_order(IxDyn(self.nodes[*x].value.shape()))
                        .unwrap();
                    add_grad(&mut grads[*x], shaped);
                }
                Op::SmoothL1 { pred, target } => {
                    let scale = grad.iter().next().copied().unwrap()
                        / self.nodes[*pred].value.len() as f64;
                    let mut gp = self.nodes[*pred].value.clone();
                    gp.zip_mut_with(target, |p, t| {
                        let e = *p - t;
                        *p = scale * if e.abs() < 1.0 { e } else { e.signum() };
                    });
                    add_grad(&mut grads[*pred], gp);
                }
                Op::MeanScalars(terms) => {
                    let scale = grad.iter().next().copied().unwrap() / terms.len() as f64;
                    for &term in terms {
                        add_grad(&mut grads[term], ArrayD::from_elem(IxDyn(&[]), scale));
                    }
                }
            }
        }

        let mut out: Vec<ArrayD<f64>> = shapes
            .iter()
            .map(|s| ArrayD::zeros(IxDyn(s)))
            .collect();
        debug_assert_eq!(out.len(), num_params);
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(p) } = node.op {
                if let Some(g) = grads[id].take() {
                    out[p] += &g;
                }
            }
        }
        out
    }
}
