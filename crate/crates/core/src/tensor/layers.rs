//! Parameterised layers. Each layer owns [`ParamId`]s into a shared
//! [`ParamStore`] and records its forward pass on a [`Graph`].

use rand::Rng;

use super::params::{he_uniform, standard_normal, uniform};
use super::{Graph, Mode, ParamId, ParamStore, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            he_uniform(&[out_features, in_features], in_features, rng),
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]));
        Self {
            w,
            b,
            in_features,
            out_features,
        }
    }

    /// Applies to the last axis of `x`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = store.add(format!("{name}.weight"), standard_normal(&[vocab, dim], rng));
        Self { table, vocab, dim }
    }

    /// `[ids.len(), dim]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let t = g.param(store, self.table);
        g.embedding(t, ids)
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            he_uniform(&[out_channels, in_channels, kernel], in_channels * kernel, rng),
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv1d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            he_uniform(&[in_channels, out_channels, kernel], out_channels * kernel, rng),
        );
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, out_pad: usize) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv_transpose1d(x, w, b, self.stride, self.pad, out_pad)
    }
}

/// Batch normalisation over axis 1 of `[B, C]` or `[B, C, L]` inputs.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.weight"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.bias"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], 1.0)),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Training mode normalises with batch statistics and queues the new
    /// running estimates on the graph; evaluation mode uses the stored ones.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match g.mode() {
            Mode::Train => {
                let (y, mean, var) = g.batch_norm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                let blend = |old: &Tensor, new: &[f32]| {
                    let data = old.data().iter().zip(new).map(|(o, n)| (1.0 - m) * o + m * n).collect();
                    Tensor::new(old.shape().to_vec(), data).expect("same length")
                };
                let rm = blend(store.get(self.running_mean), &mean);
                let rv = blend(store.get(self.running_var), &var);
                g.record_update(self.running_mean, rm);
                g.record_update(self.running_var, rv);
                Ok(y)
            }
            Mode::Eval => g.batch_norm_eval(
                x,
                gamma,
                beta,
                store.get(self.running_mean).data(),
                store.get(self.running_var).data(),
                self.eps,
            ),
        }
    }
}

/// One LSTM layer with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f32).sqrt();
        Self {
            w_ih: store.add(format!("{name}.w_ih"), uniform(&[4 * hidden, input], bound, rng)),
            w_hh: store.add(format!("{name}.w_hh"), uniform(&[4 * hidden, hidden], bound, rng)),
            b: store.add(format!("{name}.bias"), uniform(&[4 * hidden], bound, rng)),
            input,
            hidden,
        }
    }

    /// Input projection `x · W_ihᵀ + b`; works on `[B, in]` or `[B, T, in]`.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w_ih);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }

    /// One step from a precomputed input projection.
    pub fn step_projected(&self, g: &mut Graph, store: &ParamStore, xp: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w = g.param(store, self.w_hh);
        let hh = g.linear(h, w, None)?;
        let gates = g.add(xp, hh)?;
        let out = g.lstm_pointwise(gates, c)?;
        let h = g.slice_cols(out, 0, self.hidden)?;
        let c = g.slice_cols(out, self.hidden, self.hidden)?;
        Ok((h, c))
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let xp = self.project(g, store, x)?;
        self.step_projected(g, store, xp, h, c)
    }
}

/// Stacked LSTM.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub cells: Vec<LstmCell>,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let cells = (0..layers)
            .map(|l| LstmCell::new(store, &format!("{name}.{l}"), if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        Self { cells }
    }

    pub fn hidden(&self) -> usize {
        self.cells[0].hidden
    }

    /// Runs a whole sequence `x [B, T, in]` layer by layer from the given
    /// `(h, c)` per layer. Returns the top layer outputs `[B, T, H]` and the
    /// final state of every layer.
    pub fn run(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        state: &[(Var, Var)],
    ) -> Result<(Var, Vec<(Var, Var)>)> {
        let steps = g.shape(x)[1];
        let mut input = x;
        let mut finals = Vec::with_capacity(self.cells.len());
        for (cell, &(h0, c0)) in self.cells.iter().zip(state) {
            let proj = cell.project(g, store, input)?;
            let (mut h, mut c) = (h0, c0);
            let mut outs = Vec::with_capacity(steps);
            for t in 0..steps {
                let xp = g.select_step(proj, t)?;
                (h, c) = cell.step_projected(g, store, xp, h, c)?;
                outs.push(h);
            }
            finals.push((h, c));
            input = g.stack_steps(&outs)?;
        }
        Ok((input, finals))
    }

    /// One step through every layer; updates `state` in place and returns
    /// the top hidden state.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, state: &mut [(Var, Var)]) -> Result<Var> {
        let mut input = x;
        for (cell, s) in self.cells.iter().zip(state.iter_mut()) {
            let (h, c) = cell.step(g, store, input, s.0, s.1)?;
            *s = (h, c);
            input = h;
        }
        Ok(input)
    }

    /// Zero `(h, c)` for every layer.
    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> Vec<(Var, Var)> {
        (0..self.cells.len())
            .map(|_| {
                let h = g.constant(Tensor::zeros(&[batch, self.hidden()]));
                let c = g.constant(Tensor::zeros(&[batch, self.hidden()]));
                (h, c)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn batch_norm_updates_running_stats() {
        let mut store = ParamStore::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 2);
        let mut g = Graph::new(Mode::Train, rng::stream(0, "t", 0));
        let x = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap());
        bn.forward(&mut g, &store, x).unwrap();
        g.apply_updates(&mut store);
        let rm = store.get(bn.running_mean).data();
        assert!((rm[0] - 0.2).abs() < 1e-6 && (rm[1] - 0.4).abs() < 1e-6);
        // unbiased batch variances are 2 and 8
        let rv = store.get(bn.running_var).data();
        assert!((rv[0] - 1.1).abs() < 1e-6 && (rv[1] - 1.7).abs() < 1e-6);
    }

    #[test]
    fn lstm_run_matches_stepping() {
        let mut r = rng::stream(3, "t", 0);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "lstm", 3, 4, 2, &mut r);
        let x = Tensor::from_fn(&[2, 5, 3], |i| ((i * 7) % 11) as f32 / 11.0 - 0.5);

        let mut g = Graph::new(Mode::Eval, rng::stream(0, "t", 0));
        let xv = g.constant(x.clone());
        let s0 = lstm.zero_state(&mut g, 2);
        let (out, _) = lstm.run(&mut g, &store, xv, &s0).unwrap();
        let full = g.value(out).clone();

        let mut g = Graph::new(Mode::Eval, rng::stream(0, "t", 0));
        let xv = g.constant(x);
        let mut state = lstm.zero_state(&mut g, 2);
        for t in 0..5 {
            let xt = g.select_step(xv, t).unwrap();
            let h = lstm.step(&mut g, &store, xt, &mut state).unwrap();
            for b in 0..2 {
                for j in 0..4 {
                    let a = full.data()[(b * 5 + t) * 4 + j];
                    assert!((a - g.value(h).data()[b * 4 + j]).abs() < 1e-6);
                }
            }
        }
    }
}
