use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::{gemm, kernels, mismatch, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Exp(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f32),
    Softmax(Var),
    LogSoftmax(Var),
    Nll { logp: Var, targets: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Embedding { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    SwapLast(Var),
    SelectStep { x: Var, t: usize },
    StackSteps(Vec<Var>),
    Conv1d { x: Var, w: Var, b: Var, stride: usize, pad: usize, cols: Vec<f32> },
    ConvTranspose1d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f32>, inv_std: Vec<f32> },
    BatchNormEval { x: Var, gamma: Var, beta: Var, mean: Vec<f32>, inv_std: Vec<f32> },
    Dropout { x: Var, mask: Vec<f32> },
    LstmPointwise { gates: Var, c: Var, saved: Vec<f32> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A tape of operations recorded during one forward pass.
///
/// Nodes are appended in evaluation order, so walking the tape backwards
/// visits every node after all of its consumers.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    rng: ChaCha8Rng,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
    updates: Vec<(ParamId, Tensor)>,
}

fn channels_of(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [b, c] => Some((b, c, 1)),
        [b, c, l] => Some((b, c, l)),
        _ => None,
    }
}

fn sigmoid(x: f32) -> f32 {
    kernels::sigmoid64(f64::from(x)) as f32
}

fn tanh(x: f32) -> f32 {
    kernels::tanh64(f64::from(x)) as f32
}

fn exp(x: f32) -> f32 {
    kernels::exp64(f64::from(x)) as f32
}

impl Graph {
    /// `rng` drives dropout masks; it is only consumed in training mode.
    pub fn new(mode: Mode, rng: ChaCha8Rng) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            rng,
            params: HashMap::new(),
            grads: Vec::new(),
            backward_done: false,
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Queues a new value for a non-trainable buffer (running statistics).
    pub fn record_update(&mut self, id: ParamId, value: Tensor) {
        self.updates.push((id, value));
    }

    /// Writes queued buffer values into `store`.
    pub fn apply_updates(&mut self, store: &mut ParamStore) {
        for (id, value) in self.updates.drain(..) {
            *store.get_mut(id) = value;
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the loss with respect to `v`, available after [`backward`](Self::backward).
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient (used for checks on plain inputs).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Brings a stored parameter onto the tape; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.param(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(id),
            needs_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f32) -> f32) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same length");
        self.push(value, op, &[x])
    }

    fn zip(&mut self, op_name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f32, f32) -> f32) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        self.map(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Var {
        self.map(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, Op::Exp(x), exp)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), tanh)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        self.map(x, Op::LeakyRelu(x, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    fn row_softmax(data: &[f32], c: usize, log: bool) -> Vec<f32> {
        let mut out = Vec::with_capacity(data.len());
        for row in data.chunks(c) {
            let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let z: f64 = row.iter().map(|&v| kernels::exp64(f64::from(v - m))).sum();
            if log {
                let lz = z.ln() as f32;
                out.extend(row.iter().map(|&v| v - m - lz));
            } else {
                out.extend(row.iter().map(|&v| (kernels::exp64(f64::from(v - m)) / z) as f32));
            }
        }
        out
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = Self::row_softmax(xv.data(), xv.last_dim(), false);
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same length");
        self.push(value, Op::Softmax(x), &[x])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = Self::row_softmax(xv.data(), xv.last_dim(), true);
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same length");
        self.push(value, Op::LogSoftmax(x), &[x])
    }

    /// Mean negative log-likelihood of `targets` under row-wise log-probabilities.
    pub fn nll(&mut self, logp: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logp);
        let (rows, c) = (lv.rows(), lv.last_dim());
        if rows != targets.len() {
            return Err(mismatch("nll", lv.shape(), &[targets.len()]));
        }
        let mut acc = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(TensorError::Index { op: "nll", index: t, bound: c });
            }
            acc -= f64::from(lv.data()[r * c + t]);
        }
        let value = Tensor::scalar((acc / rows.max(1) as f64) as f32);
        Ok(self.push(value, Op::Nll { logp, targets: targets.to_vec() }, &[logp]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum() as f32;
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = (xv.sum() / xv.numel().max(1) as f64) as f32;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// `x [.., in] · wᵀ + b` with `w [out, in]`, `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws.len() != 2 || xs.last() != Some(&ws[1]) {
            return Err(mismatch("linear", &xs, &ws));
        }
        let (out_f, in_f) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [out_f] {
                return Err(mismatch("linear bias", self.shape(b), &[out_f]));
            }
        }
        let rows = self.value(x).rows();
        let mut y = vec![0.0; rows * out_f];
        gemm(rows, in_f, out_f, self.value(x).data(), false, self.value(w).data(), true, &mut y, 0.0);
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in y.chunks_mut(out_f) {
                for (v, bb) in row.iter_mut().zip(bv) {
                    *v += bb;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().expect("non-empty") = out_f;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(shape, y)?, Op::Linear { x, w, b }, &inputs))
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut y = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut y, 0.0);
        Ok(self.push(Tensor::new(vec![m, n], y)?, Op::MatMul(a, b), &[a, b]))
    }

    /// Looks up rows of `table [V, D]`, giving `[ids.len(), D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(mismatch("embedding", tv.shape(), &[0, 0]));
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= v {
                return Err(TensorError::Index { op: "embedding", index: i, bound: v });
            }
            out.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(value, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Concatenates along the last axis; all inputs must share leading shape.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut width = 0;
        for &x in xs {
            let s = self.shape(x);
            if &s[..s.len() - 1] != lead {
                return Err(mismatch("concat_cols", &first, s));
            }
            width += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * width];
        let mut off = 0;
        for &x in xs {
            let xv = self.value(x);
            let c = xv.last_dim();
            for r in 0..rows {
                out[r * width + off..r * width + off + c].copy_from_slice(&xv.data()[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let mut shape = first.clone();
        *shape.last_mut().expect("non-empty") = width;
        Ok(self.push(Tensor::new(shape, out)?, Op::ConcatCols(xs.to_vec()), xs))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if start + len > c {
            return Err(TensorError::Index { op: "slice_cols", index: start + len, bound: c });
        }
        let mut out = Vec::with_capacity(xv.rows() * len);
        for row in xv.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("non-empty") = len;
        Ok(self.push(Tensor::new(shape, out)?, Op::SliceCols { x, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    fn swap_data(data: &[f32], a: usize, b: usize, c: usize) -> Vec<f32> {
        let mut out = vec![0.0; data.len()];
        for i in 0..a {
            let base = i * b * c;
            for j in 0..b {
                for k in 0..c {
                    out[base + k * b + j] = data[base + j * c + k];
                }
            }
        }
        out
    }

    /// `[a, b, c] → [a, c, b]`.
    pub fn swap_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [a, b, c] = s[..] else {
            return Err(mismatch("swap_last", &s, &[0, 0, 0]));
        };
        let out = Self::swap_data(self.value(x).data(), a, b, c);
        Ok(self.push(Tensor::new(vec![a, c, b], out)?, Op::SwapLast(x), &[x]))
    }

    /// `[B, T, D] → [B, D]` at step `t`.
    pub fn select_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [b, steps, d] = s[..] else {
            return Err(mismatch("select_step", &s, &[0, 0, 0]));
        };
        if t >= steps {
            return Err(TensorError::Index { op: "select_step", index: t, bound: steps });
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(b * d);
        for i in 0..b {
            out.extend_from_slice(&xv[(i * steps + t) * d..(i * steps + t + 1) * d]);
        }
        Ok(self.push(Tensor::new(vec![b, d], out)?, Op::SelectStep { x, t }, &[x]))
    }

    /// `T × [B, D] → [B, T, D]`.
    pub fn stack_steps(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        let [b, d] = first[..] else {
            return Err(mismatch("stack_steps", &first, &[0, 0]));
        };
        let steps = xs.len();
        let mut out = vec![0.0; b * steps * d];
        for (t, &x) in xs.iter().enumerate() {
            if self.shape(x) != first.as_slice() {
                return Err(mismatch("stack_steps", &first, self.shape(x)));
            }
            let xv = self.value(x).data();
            for i in 0..b {
                out[(i * steps + t) * d..(i * steps + t + 1) * d].copy_from_slice(&xv[i * d..(i + 1) * d]);
            }
        }
        Ok(self.push(Tensor::new(vec![b, steps, d], out)?, Op::StackSteps(xs.to_vec()), xs))
    }

    /// 1-D convolution: `x [B, Ci, L]`, `w [Co, Ci, K]`, `b [Co]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (&[batch, ci, len], &[co, wci, k]) = (&xs[..], &ws[..]) else {
            return Err(mismatch("conv1d", &xs, &ws));
        };
        if wci != ci || self.shape(b) != [co] || len + 2 * pad < k {
            return Err(mismatch("conv1d", &xs, &ws));
        }
        let lo = (len + 2 * pad - k) / stride + 1;
        let xv = self.value(x).data();
        let ck = ci * k;
        let mut cols = vec![0.0; batch * lo * ck];
        for bi in 0..batch {
            for o in 0..lo {
                let row = &mut cols[(bi * lo + o) * ck..(bi * lo + o + 1) * ck];
                for c in 0..ci {
                    for kk in 0..k {
                        let pos = (o * stride + kk) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < len {
                            row[c * k + kk] = xv[(bi * ci + c) * len + pos as usize];
                        }
                    }
                }
            }
        }
        let mut rows = vec![0.0; batch * lo * co];
        gemm(batch * lo, ck, co, &cols, false, self.value(w).data(), true, &mut rows, 0.0);
        let bias = self.value(b).data();
        let mut out = vec![0.0; batch * co * lo];
        for bi in 0..batch {
            for o in 0..lo {
                for c in 0..co {
                    out[(bi * co + c) * lo + o] = rows[(bi * lo + o) * co + c] + bias[c];
                }
            }
        }
        let value = Tensor::new(vec![batch, co, lo], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, stride, pad, cols }, &[x, w, b]))
    }

    /// Transposed 1-D convolution: `x [B, Ci, L]`, `w [Ci, Co, K]`, `b [Co]`,
    /// output length `(L - 1)·stride - 2·pad + K + out_pad`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (&[batch, ci, len], &[wci, co, k]) = (&xs[..], &ws[..]) else {
            return Err(mismatch("conv_transpose1d", &xs, &ws));
        };
        if wci != ci || self.shape(b) != [co] || len == 0 || (len - 1) * stride + k + out_pad < 2 * pad {
            return Err(mismatch("conv_transpose1d", &xs, &ws));
        }
        let lo = (len - 1) * stride + k + out_pad - 2 * pad;
        let x_rows = Self::swap_data(self.value(x).data(), batch, ci, len);
        let ck = co * k;
        let mut cols = vec![0.0; batch * len * ck];
        gemm(batch * len, ci, ck, &x_rows, false, self.value(w).data(), false, &mut cols, 0.0);
        let bias = self.value(b).data();
        let mut out = vec![0.0; batch * co * lo];
        for bi in 0..batch {
            for c in 0..co {
                out[(bi * co + c) * lo..(bi * co + c + 1) * lo].fill(bias[c]);
            }
            for i in 0..len {
                let row = &cols[(bi * len + i) * ck..(bi * len + i + 1) * ck];
                for c in 0..co {
                    for kk in 0..k {
                        let pos = (i * stride + kk) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < lo {
                            out[(bi * co + c) * lo + pos as usize] += row[c * k + kk];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, co, lo], out)?;
        Ok(self.push(value, Op::ConvTranspose1d { x, w, b, stride, pad }, &[x, w, b]))
    }

    fn check_norm_shapes(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x).to_vec();
        let (b, c, l) = channels_of(&xs).ok_or_else(|| mismatch("batch_norm", &xs, &[0, 0]))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(mismatch("batch_norm", &xs, self.shape(gamma)));
        }
        Ok((b, c, l))
    }

    /// Batch normalisation with batch statistics over all axes except 1.
    /// Returns the output plus the batch mean and unbiased variance per
    /// channel for the caller's running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<(Var, Vec<f32>, Vec<f32>)> {
        let (b, c, l) = self.check_norm_shapes(x, gamma, beta)?;
        let n = b * l;
        let xv = self.value(x).data();
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f32; c];
        let mut inv = vec![0.0f64; c];
        for ch in 0..c {
            let vals = (0..b).flat_map(|bi| xv[(bi * c + ch) * l..(bi * c + ch + 1) * l].iter());
            let m: f64 = vals.clone().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
            let v: f64 = vals.map(|&v| (f64::from(v) - m).powi(2)).sum::<f64>() / n as f64;
            mean[ch] = m;
            var[ch] = if n > 1 { (v * n as f64 / (n - 1) as f64) as f32 } else { 0.0 };
            inv[ch] = 1.0 / (v + f64::from(eps)).sqrt();
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for bi in 0..b {
            for ch in 0..c {
                for i in 0..l {
                    let idx = (bi * c + ch) * l + i;
                    let h = (f64::from(xv[idx]) - mean[ch]) * inv[ch];
                    xhat[idx] = h as f32;
                    out[idx] = (f64::from(gv[ch]) * h + f64::from(bv[ch])) as f32;
                }
            }
        }
        let inv_std: Vec<f32> = inv.iter().map(|&v| v as f32).collect();
        let mean: Vec<f32> = mean.iter().map(|&v| v as f32).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let v = self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta]);
        Ok((v, mean, var))
    }

    /// Batch normalisation with fixed statistics (an affine map).
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f32],
        running_var: &[f32],
        eps: f32,
    ) -> Result<Var> {
        let (b, c, l) = self.check_norm_shapes(x, gamma, beta)?;
        let inv_std: Vec<f32> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; xv.len()];
        for bi in 0..b {
            for ch in 0..c {
                for i in 0..l {
                    let idx = (bi * c + ch) * l + i;
                    out[idx] = gv[ch] * (xv[idx] - running_mean[ch]) * inv_std[ch] + bv[ch];
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let op = Op::BatchNormEval { x, gamma, beta, mean: running_mean.to_vec(), inv_std };
        Ok(self.push(value, op, &[x, gamma, beta]))
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, x: Var, p: f32) -> Var {
        if self.mode != Mode::Train || p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).numel();
        let mask: Vec<f32> = (0..n)
            .map(|_| if self.rng.random::<f32>() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same length");
        self.push(value, Op::Dropout { x, mask }, &[x])
    }

    /// LSTM cell nonlinearity. `gates [B, 4H]` in (input, forget, cell,
    /// output) order and `c [B, H]`; returns `[B, 2H]` holding `h | c'`.
    pub fn lstm_pointwise(&mut self, gates: Var, c: Var) -> Result<Var> {
        let (gs, cs) = (self.shape(gates).to_vec(), self.shape(c).to_vec());
        if gs.len() != 2 || cs.len() != 2 || gs[0] != cs[0] || gs[1] != 4 * cs[1] {
            return Err(mismatch("lstm_pointwise", &gs, &cs));
        }
        let (b, h) = (cs[0], cs[1]);
        let (gv, cv) = (self.value(gates).data(), self.value(c).data());
        let mut saved = vec![0.0; b * 5 * h];
        let mut out = vec![0.0; b * 2 * h];
        kernels::lstm_forward(gv, cv, h, &mut saved, &mut out);
        let value = Tensor::new(vec![b, 2 * h], out)?;
        Ok(self.push(value, Op::LstmPointwise { gates, c, saved }, &[gates, c]))
    }

    /// Reverse pass from a scalar `loss`. Gradients of trainable parameters
    /// are returned; gradients of every node stay queryable via [`grad`](Self::grad).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut params = Gradients::with_len(0);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            if let Op::Param(id) = self.nodes[i].op {
                params.set(id, gy.clone());
            } else {
                self.backprop(i, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(params)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<f32>) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape")
    }

    fn backprop(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let dy = gy.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, self.like(*b, dy.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da = dy.iter().zip(bv).map(|(g, x)| g * x).collect();
                let db = dy.iter().zip(av).map(|(g, x)| g * x).collect();
                self.accumulate(grads, *a, self.like(*a, da));
                self.accumulate(grads, *b, self.like(*b, db));
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, self.like(*x, dy.iter().map(|g| g * c).collect()));
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                self.accumulate(grads, *x, self.like(*x, dy.to_vec()));
            }
            Op::Exp(x) => {
                let d = dy.iter().zip(y).map(|(g, v)| g * v).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Sigmoid(x) => {
                let d = dy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Tanh(x) => {
                let d = dy.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                let d = dy.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { g * slope }).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Softmax(x) => {
                let c = node.value.last_dim();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(y.chunks(c)).zip(dy.chunks(c)) {
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| f64::from(a * b)).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - s as f32);
                    }
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::LogSoftmax(x) => {
                let c = node.value.last_dim();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(y.chunks(c)).zip(dy.chunks(c)) {
                    let s: f64 = gr.iter().map(|&v| f64::from(v)).sum();
                    for j in 0..c {
                        dr[j] = gr[j] - yr[j].exp() * s as f32;
                    }
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Nll { logp, targets } => {
                let c = self.value(*logp).last_dim();
                let mut d = vec![0.0; self.value(*logp).numel()];
                let scale = -dy[0] / targets.len().max(1) as f32;
                for (r, &t) in targets.iter().enumerate() {
                    d[r * c + t] = scale;
                }
                self.accumulate(grads, *logp, self.like(*logp, d));
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, self.like(*x, vec![dy[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, self.like(*x, vec![dy[0] / n as f32; n]));
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (out_f, in_f) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![0.0; rows * in_f];
                    gemm(rows, out_f, in_f, dy, false, wv.data(), false, &mut dx, 0.0);
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![0.0; out_f * in_f];
                    gemm(out_f, rows, in_f, dy, true, xv.data(), false, &mut dw, 0.0);
                    self.accumulate(grads, *w, self.like(*w, dw));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0f64; out_f];
                    for row in dy.chunks(out_f) {
                        for (acc, g) in db.iter_mut().zip(row) {
                            *acc += f64::from(*g);
                        }
                    }
                    self.accumulate(grads, *b, self.like(*b, db.into_iter().map(|v| v as f32).collect()));
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, dy, false, bv.data(), true, &mut da, 0.0);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, dy, false, &mut db, 0.0);
                self.accumulate(grads, *a, self.like(*a, da));
                self.accumulate(grads, *b, self.like(*b, db));
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).last_dim();
                let mut dt = vec![0.0; self.value(*table).numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += dy[r * d + j];
                    }
                }
                self.accumulate(grads, *table, self.like(*table, dt));
            }
            Op::ConcatCols(xs) => {
                let width = node.value.last_dim();
                let rows = node.value.rows();
                let mut off = 0;
                for &x in xs {
                    let c = self.value(x).last_dim();
                    let mut d = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        d.extend_from_slice(&dy[r * width + off..r * width + off + c]);
                    }
                    self.accumulate(grads, x, self.like(x, d));
                    off += c;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).last_dim();
                let len = node.value.last_dim();
                let mut d = vec![0.0; self.value(*x).numel()];
                for (dr, gr) in d.chunks_mut(c).zip(dy.chunks(len)) {
                    dr[*start..start + len].copy_from_slice(gr);
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::SwapLast(x) => {
                let s = node.value.shape();
                let d = Self::swap_data(dy, s[0], s[1], s[2]);
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::SelectStep { x, t } => {
                let s = self.shape(*x);
                let (b, steps, d) = (s[0], s[1], s[2]);
                if self.nodes[x.0].needs_grad {
                    let acc = grads[x.0].get_or_insert_with(|| Tensor::zeros(s)).data_mut();
                    for i in 0..b {
                        let dst = &mut acc[(i * steps + t) * d..(i * steps + t + 1) * d];
                        for (a, g) in dst.iter_mut().zip(&dy[i * d..(i + 1) * d]) {
                            *a += g;
                        }
                    }
                }
            }
            Op::StackSteps(xs) => {
                let s = node.value.shape();
                let (b, steps, d) = (s[0], s[1], s[2]);
                for (t, &x) in xs.iter().enumerate() {
                    let mut dx = Vec::with_capacity(b * d);
                    for i in 0..b {
                        dx.extend_from_slice(&dy[(i * steps + t) * d..(i * steps + t + 1) * d]);
                    }
                    self.accumulate(grads, x, self.like(x, dx));
                }
            }
            Op::Conv1d { x, w, b, stride, pad, cols } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (batch, ci, len) = (xs[0], xs[1], xs[2]);
                let (co, k) = (ws[0], ws[2]);
                let lo = node.value.shape()[2];
                let ck = ci * k;
                let dy_rows = Self::swap_data(dy, batch, co, lo);
                let mut db = vec![0.0f64; co];
                for row in dy_rows.chunks(co) {
                    for (acc, g) in db.iter_mut().zip(row) {
                        *acc += f64::from(*g);
                    }
                }
                self.accumulate(grads, *b, self.like(*b, db.into_iter().map(|v| v as f32).collect()));
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![0.0; co * ck];
                    gemm(co, batch * lo, ck, &dy_rows, true, cols, false, &mut dw, 0.0);
                    self.accumulate(grads, *w, self.like(*w, dw));
                }
                if self.nodes[x.0].needs_grad {
                    let mut dcols = vec![0.0; batch * lo * ck];
                    gemm(batch * lo, co, ck, &dy_rows, false, self.value(*w).data(), false, &mut dcols, 0.0);
                    let mut dx = vec![0.0; batch * ci * len];
                    for bi in 0..batch {
                        for o in 0..lo {
                            let row = &dcols[(bi * lo + o) * ck..(bi * lo + o + 1) * ck];
                            for c in 0..ci {
                                for kk in 0..k {
                                    let pos = (o * stride + kk) as isize - *pad as isize;
                                    if pos >= 0 && (pos as usize) < len {
                                        dx[(bi * ci + c) * len + pos as usize] += row[c * k + kk];
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
            }
            Op::ConvTranspose1d { x, w, b, stride, pad } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (batch, ci, len) = (xs[0], xs[1], xs[2]);
                let (co, k) = (ws[1], ws[2]);
                let lo = node.value.shape()[2];
                let ck = co * k;
                let mut db = vec![0.0f64; co];
                for bi in 0..batch {
                    for c in 0..co {
                        db[c] += dy[(bi * co + c) * lo..(bi * co + c + 1) * lo]
                            .iter()
                            .map(|&v| f64::from(v))
                            .sum::<f64>();
                    }
                }
                self.accumulate(grads, *b, self.like(*b, db.into_iter().map(|v| v as f32).collect()));
                let mut dcols = vec![0.0; batch * len * ck];
                for bi in 0..batch {
                    for i in 0..len {
                        let row = &mut dcols[(bi * len + i) * ck..(bi * len + i + 1) * ck];
                        for c in 0..co {
                            for kk in 0..k {
                                let pos = (i * stride + kk) as isize - *pad as isize;
                                if pos >= 0 && (pos as usize) < lo {
                                    row[c * k + kk] = dy[(bi * co + c) * lo + pos as usize];
                                }
                            }
                        }
                    }
                }
                if self.nodes[x.0].needs_grad {
                    let mut dx_rows = vec![0.0; batch * len * ci];
                    gemm(batch * len, ck, ci, &dcols, false, self.value(*w).data(), true, &mut dx_rows, 0.0);
                    let dx = Self::swap_data(&dx_rows, batch, len, ci);
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if self.nodes[w.0].needs_grad {
                    let x_rows = Self::swap_data(self.value(*x).data(), batch, ci, len);
                    let mut dw = vec![0.0; ci * ck];
                    gemm(ci, batch * len, ck, &x_rows, true, &dcols, false, &mut dw, 0.0);
                    self.accumulate(grads, *w, self.like(*w, dw));
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let (b, c, l) = channels_of(self.shape(*x)).expect("checked in forward");
                let n = (b * l) as f64;
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for bi in 0..b {
                    for ch in 0..c {
                        for i in 0..l {
                            let idx = (bi * c + ch) * l + i;
                            dgamma[ch] += f64::from(dy[idx] * xhat[idx]);
                            dbeta[ch] += f64::from(dy[idx]);
                        }
                    }
                }
                let mut dx = vec![0.0; dy.len()];
                for bi in 0..b {
                    for ch in 0..c {
                        // Σ dxhat = γ·Σdy, Σ dxhat·xhat = γ·dγ
                        let s1 = f64::from(gv[ch]) * dbeta[ch];
                        let s2 = f64::from(gv[ch]) * dgamma[ch];
                        for i in 0..l {
                            let idx = (bi * c + ch) * l + i;
                            let dxh = f64::from(dy[idx] * gv[ch]);
                            let v = (n * dxh - s1 - f64::from(xhat[idx]) * s2) * f64::from(inv_std[ch]) / n;
                            dx[idx] = v as f32;
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
                self.accumulate(grads, *gamma, self.like(*gamma, dgamma.into_iter().map(|v| v as f32).collect()));
                self.accumulate(grads, *beta, self.like(*beta, dbeta.into_iter().map(|v| v as f32).collect()));
            }
            Op::BatchNormEval { x, gamma, beta, mean, inv_std } => {
                let (b, c, l) = channels_of(self.shape(*x)).expect("checked in forward");
                let (xv, gv) = (self.value(*x).data(), self.value(*gamma).data());
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                let mut dx = vec![0.0; dy.len()];
                for bi in 0..b {
                    for ch in 0..c {
                        for i in 0..l {
                            let idx = (bi * c + ch) * l + i;
                            dx[idx] = dy[idx] * gv[ch] * inv_std[ch];
                            dgamma[ch] += f64::from(dy[idx] * (xv[idx] - mean[ch]) * inv_std[ch]);
                            dbeta[ch] += f64::from(dy[idx]);
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, dx));
                self.accumulate(grads, *gamma, self.like(*gamma, dgamma.into_iter().map(|v| v as f32).collect()));
                self.accumulate(grads, *beta, self.like(*beta, dbeta.into_iter().map(|v| v as f32).collect()));
            }
            Op::Dropout { x, mask } => {
                let d = dy.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::LstmPointwise { gates, c, saved } => {
                let cs = self.shape(*c);
                let (b, h) = (cs[0], cs[1]);
                let cv = self.value(*c).data();
                let mut dg = vec![0.0; b * 4 * h];
                let mut dc = vec![0.0; b * h];
                for r in 0..b {
                    let s = &saved[r * 5 * h..(r + 1) * 5 * h];
                    let gr = &dy[r * 2 * h..(r + 1) * 2 * h];
                    for j in 0..h {
                        let (i, f, g, o, tc) = (s[j], s[h + j], s[2 * h + j], s[3 * h + j], s[4 * h + j]);
                        let dh = gr[j];
                        let dct = gr[h + j] + dh * o * (1.0 - tc * tc);
                        let row = &mut dg[r * 4 * h..(r + 1) * 4 * h];
                        row[j] = dct * g * i * (1.0 - i);
                        row[h + j] = dct * cv[r * h + j] * f * (1.0 - f);
                        row[2 * h + j] = dct * i * (1.0 - g * g);
                        row[3 * h + j] = dh * tc * o * (1.0 - o);
                        dc[r * h + j] = dct * f;
                    }
                }
                self.accumulate(grads, *gates, self.like(*gates, dg));
                self.accumulate(grads, *c, self.like(*c, dc));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn graph() -> Graph {
        Graph::new(Mode::Train, rng::stream(0, "test", 0))
    }

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_identity() {
        let mut g = graph();
        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = graph();
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let y = g.softmax(x);
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn conv_output_length() {
        let mut g = graph();
        let x = g.constant(Tensor::zeros(&[1, 2, 144]));
        let w = g.constant(Tensor::zeros(&[3, 2, 4]));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.conv1d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 72]);
    }

    #[test]
    fn sum_of_product_gradient() {
        // loss = sum(W·x), x = [1, 1] → dloss/dW = ones
        let mut store = ParamStore::new();
        let wid = store.add("w", t(&[2, 2], &[0.3, -0.2, 0.5, 0.9]));
        let mut g = graph();
        let w = g.param(&store, wid);
        let x = g.constant(t(&[2, 1], &[1.0, 1.0]));
        let y = g.matmul(w, x).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(wid).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = graph();
        let x = g.input(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        g.backward(y).unwrap();
        assert!((g.grad(x).unwrap().item() - 0.25).abs() < 1e-7);
    }

    #[test]
    fn backward_errors() {
        let mut g = graph();
        let x = g.input(Tensor::zeros(&[2]));
        let y = g.exp(x);
        assert!(matches!(g.backward(y), Err(TensorError::NonScalarLoss(_))));
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.backward(s).unwrap_err(), TensorError::BackwardTwice);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut g = graph();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        let err = g.add(a, b).unwrap_err();
        assert_eq!(err.to_string(), "shape mismatch in add: [2, 3] vs [3, 2]");
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut g = Graph::new(Mode::Eval, rng::stream(0, "test", 0));
        let x = g.constant(Tensor::full(&[4, 4], 2.0));
        let y = g.dropout(x, 0.5);
        assert_eq!(x, y);
    }

    #[test]
    fn batch_norm_eval_is_affine() {
        let mut g = Graph::new(Mode::Eval, rng::stream(0, "test", 0));
        let x = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let gamma = g.constant(t(&[2], &[2.0, 1.0]));
        let beta = g.constant(t(&[2], &[0.5, 0.0]));
        let y = g.batch_norm_eval(x, gamma, beta, &[1.0, 0.0], &[4.0, 1.0], 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 2.0, 2.5, 4.0]);
    }
}
