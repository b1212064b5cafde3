//! Central finite-difference gradient checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Graph, Mode, Tensor, TensorError, Var};
use crate::rng;

/// Compares reverse-mode gradients against central differences.
///
/// `build` maps the input variables to an output of any shape; the checked
/// scalar is `Σ out ⊙ R` for a fixed random `R`. Every input gets a
/// gradient. Returns the norm-wise relative error of the full gradient
/// (all inputs concatenated), `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
///
/// The graph is rebuilt with the same `seed` for every evaluation, so
/// dropout masks stay fixed.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, seed: u64, build: F) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let run = |values: &[Tensor]| -> Result<(Graph, Vec<Var>, Var), TensorError> {
        let mut g = Graph::new(Mode::Train, rng::stream(seed, "gradcheck", 0));
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g, vars, out))
    };

    let (mut g, vars, out) = run(inputs)?;
    let mut r = rng::stream(seed, "gradcheck-projection", 0);
    let proj = Tensor::from_fn(g.shape(out), |_| r.sample(StandardNormal));
    let pv = g.constant(proj.clone());
    let weighted = g.mul(out, pv)?;
    let loss = g.sum(weighted);
    g.backward(loss)?;

    let objective = |values: &[Tensor]| -> Result<f64, TensorError> {
        let (g, _, out) = run(values)?;
        Ok(g.value(out)
            .data()
            .iter()
            .zip(proj.data())
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum())
    };

    let mut diff2 = 0.0;
    let mut a2 = 0.0;
    let mut n2 = 0.0;
    let mut values = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match g.grad(v) {
            Some(t) => t.data().iter().map(|&x| f64::from(x)).collect(),
            None => vec![0.0; inputs[k].numel()],
        };
        for i in 0..inputs[k].numel() {
            let x0 = inputs[k].data()[i];
            let hi = (f64::from(x0) + h) as f32;
            let lo = (f64::from(x0) - h) as f32;
            values[k].data_mut()[i] = hi;
            let up = objective(&values)?;
            values[k].data_mut()[i] = lo;
            let down = objective(&values)?;
            values[k].data_mut()[i] = x0;
            // divide by the step that survived rounding to f32
            let numeric = (up - down) / (f64::from(hi) - f64::from(lo));
            diff2 += (analytic[i] - numeric).powi(2);
            a2 += analytic[i].powi(2);
            n2 += numeric.powi(2);
        }
    }
    let scale = f64::max(a2, n2).sqrt();
    Ok(if scale > 0.0 { diff2.sqrt() / scale } else { 0.0 })
}


/// One differentiable operation exercised on random small shapes.
pub struct LayerCase {
    pub name: &'static str,
    /// Runs one randomized trial and returns its relative error.
    pub trial: fn(u64) -> Result<f64, TensorError>,
}

pub const STEP: f64 = 1e-3;

fn dims(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

fn dense(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Uniform on `±1/√fan`, the scale recurrent weights are initialised at.
fn scaled(r: &mut ChaCha8Rng, shape: &[usize], fan: usize) -> Tensor {
    let bound = 1.0 / (fan as f32).sqrt();
    Tensor::from_fn(shape, |_| r.random_range(-bound..bound))
}

/// Magnitudes in `[0.1, 1]` with random sign, away from kinks at zero.
fn off_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m: f32 = r.random_range(0.1..1.0);
        if r.random::<bool>() { m } else { -m }
    })
}

fn trial_rng(seed: u64) -> ChaCha8Rng {
    rng::stream(seed, "gradcheck-shapes", 0)
}

fn unary(seed: u64, f: fn(&mut Graph, Var) -> Var) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let shape = [dims(&mut r, 1, 4), dims(&mut r, 1, 5)];
    check_gradients(&[off_zero(&mut r, &shape)], STEP, seed, |g, v| Ok(f(g, v[0])))
}

fn linear(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (b, i, o) = (dims(&mut r, 1, 4), dims(&mut r, 1, 5), dims(&mut r, 1, 5));
    let inputs = [dense(&mut r, &[b, i]), dense(&mut r, &[o, i]), dense(&mut r, &[o])];
    check_gradients(&inputs, STEP, seed, |g, v| g.linear(v[0], v[1], Some(v[2])))
}

fn linear_seq(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (b, t, i, o) = (dims(&mut r, 1, 3), dims(&mut r, 1, 4), dims(&mut r, 1, 4), dims(&mut r, 1, 4));
    let inputs = [dense(&mut r, &[b, t, i]), dense(&mut r, &[o, i])];
    check_gradients(&inputs, STEP, seed, |g, v| g.linear(v[0], v[1], None))
}

fn matmul(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (m, k, n) = (dims(&mut r, 1, 4), dims(&mut r, 1, 5), dims(&mut r, 1, 4));
    let inputs = [dense(&mut r, &[m, k]), dense(&mut r, &[k, n])];
    check_gradients(&inputs, STEP, seed, |g, v| g.matmul(v[0], v[1]))
}

fn elementwise(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let shape = [dims(&mut r, 1, 4), dims(&mut r, 1, 4)];
    let inputs = [dense(&mut r, &shape), dense(&mut r, &shape), dense(&mut r, &shape)];
    check_gradients(&inputs, STEP, seed, |g, v| {
        let a = g.mul(v[0], v[1])?;
        let b = g.sub(a, v[2])?;
        let c = g.add(b, v[0])?;
        let c = g.scale(c, 1.7);
        Ok(g.add_scalar(c, -0.3))
    })
}

fn reductions(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let shape = [dims(&mut r, 1, 4), dims(&mut r, 1, 4)];
    check_gradients(&[dense(&mut r, &shape)], STEP, seed, |g, v| {
        let s = g.sum(v[0]);
        let m = g.mean(v[0]);
        let sq = g.mul(s, m)?;
        g.concat_cols(&[s, sq])
    })
}

fn nll(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (b, c) = (dims(&mut r, 1, 5), dims(&mut r, 2, 10));
    let targets: Vec<usize> = (0..b).map(|_| r.random_range(0..c)).collect();
    check_gradients(&[dense(&mut r, &[b, c])], STEP, seed, move |g, v| {
        let lp = g.log_softmax(v[0]);
        g.nll(lp, &targets)
    })
}

fn embedding(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (vocab, d, n) = (dims(&mut r, 2, 10), dims(&mut r, 1, 5), dims(&mut r, 1, 8));
    let ids: Vec<usize> = (0..n).map(|_| r.random_range(0..vocab)).collect();
    check_gradients(&[dense(&mut r, &[vocab, d])], STEP, seed, move |g, v| g.embedding(v[0], &ids))
}

fn reshape_ops(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (b, t, d) = (dims(&mut r, 1, 3), dims(&mut r, 2, 4), dims(&mut r, 2, 4));
    let inputs = [dense(&mut r, &[b, t, d]), dense(&mut r, &[b, d])];
    check_gradients(&inputs, STEP, seed, move |g, v| {
        let sw = g.swap_last(v[0])?;
        let sw = g.swap_last(sw)?;
        let s0 = g.select_step(sw, 0)?;
        let s1 = g.select_step(sw, t - 1)?;
        let cat = g.concat_cols(&[s0, v[1], s1])?;
        let part = g.slice_cols(cat, 1, d)?;
        let st = g.stack_steps(&[part, v[1], part])?;
        g.reshape(st, &[b, 3 * d])
    })
}

fn conv1d(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (b, ci, co, len, pad) = (
        dims(&mut r, 1, 3),
        dims(&mut r, 1, 3),
        dims(&mut r, 1, 3),
        dims(&mut r, 4, 10),
        dims(&mut r, 0, 2),
    );
    let inputs = [dense(&mut r, &[b, ci, len]), dense(&mut r, &[co, ci, 4]), dense(&mut r, &[co])];
    check_gradients(&inputs, STEP, seed, move |g, v| g.conv1d(v[0], v[1], v[2], 2, pad))
}

fn conv_transpose1d(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (b, ci, co, len, pad, op) = (
        dims(&mut r, 1, 3),
        dims(&mut r, 1, 3),
        dims(&mut r, 1, 3),
        dims(&mut r, 1, 6),
        dims(&mut r, 0, 1),
        dims(&mut r, 0, 1),
    );
    let inputs = [dense(&mut r, &[b, ci, len]), dense(&mut r, &[ci, co, 4]), dense(&mut r, &[co])];
    check_gradients(&inputs, STEP, seed, move |g, v| g.conv_transpose1d(v[0], v[1], v[2], 2, pad, op))
}

fn batch_norm_train(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (b, c, l) = (dims(&mut r, 4, 8), dims(&mut r, 1, 3), dims(&mut r, 1, 3));
    let inputs = [dense(&mut r, &[b, c, l]), dense(&mut r, &[c]), dense(&mut r, &[c])];
    check_gradients(&inputs, STEP, seed, |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0))
}

fn batch_norm_eval(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (b, c) = (dims(&mut r, 1, 5), dims(&mut r, 1, 4));
    let mean: Vec<f32> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
    let var: Vec<f32> = (0..c).map(|_| r.random_range(0.2..2.0)).collect();
    let inputs = [dense(&mut r, &[b, c]), dense(&mut r, &[c]), dense(&mut r, &[c])];
    check_gradients(&inputs, STEP, seed, move |g, v| g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5))
}

fn dropout(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let shape = [dims(&mut r, 2, 5), dims(&mut r, 2, 5)];
    check_gradients(&[dense(&mut r, &shape)], STEP, seed, |g, v| Ok(g.dropout(v[0], 0.3)))
}

fn lstm_cell(seed: u64) -> Result<f64, TensorError> {
    let mut r = trial_rng(seed);
    let (b, i, h) = (dims(&mut r, 1, 3), dims(&mut r, 1, 4), dims(&mut r, 1, 4));
    let inputs = [
        dense(&mut r, &[b, i]),
        dense(&mut r, &[b, h]),
        dense(&mut r, &[b, h]),
        scaled(&mut r, &[4 * h, i], h),
        scaled(&mut r, &[4 * h, h], h),
        scaled(&mut r, &[4 * h], h),
    ];
    check_gradients(&inputs, STEP, seed, move |g, v| {
        let xp = g.linear(v[0], v[3], Some(v[5]))?;
        let hh = g.linear(v[1], v[4], None)?;
        let gates = g.add(xp, hh)?;
        let out = g.lstm_pointwise(gates, v[2])?;
        // a second step so the carried state feeds back
        let h1 = g.slice_cols(out, 0, h)?;
        let c1 = g.slice_cols(out, h, h)?;
        let xp = g.linear(v[0], v[3], Some(v[5]))?;
        let hh = g.linear(h1, v[4], None)?;
        let gates = g.add(xp, hh)?;
        g.lstm_pointwise(gates, c1)
    })
}

/// Every differentiable operation of the engine.
pub fn layer_cases() -> Vec<LayerCase> {
    vec![
        LayerCase { name: "linear", trial: linear },
        LayerCase { name: "linear-sequence", trial: linear_seq },
        LayerCase { name: "matmul", trial: matmul },
        LayerCase { name: "elementwise", trial: elementwise },
        LayerCase { name: "reductions", trial: reductions },
        LayerCase { name: "exp", trial: |s| unary(s, |g, x| g.exp(x)) },
        LayerCase { name: "sigmoid", trial: |s| unary(s, |g, x| g.sigmoid(x)) },
        LayerCase { name: "tanh", trial: |s| unary(s, |g, x| g.tanh(x)) },
        LayerCase { name: "leaky-relu", trial: |s| unary(s, |g, x| g.leaky_relu(x, 0.01)) },
        LayerCase { name: "softmax", trial: |s| unary(s, |g, x| g.softmax(x)) },
        LayerCase { name: "log-softmax", trial: |s| unary(s, |g, x| g.log_softmax(x)) },
        LayerCase { name: "cross-entropy", trial: nll },
        LayerCase { name: "embedding", trial: embedding },
        LayerCase { name: "reshape-concat-slice", trial: reshape_ops },
        LayerCase { name: "conv1d", trial: conv1d },
        LayerCase { name: "conv-transpose1d", trial: conv_transpose1d },
        LayerCase { name: "batchnorm-train", trial: batch_norm_train },
        LayerCase { name: "batchnorm-eval", trial: batch_norm_eval },
        LayerCase { name: "dropout", trial: dropout },
        LayerCase { name: "lstm-cell", trial: lstm_cell },
    ]
}
