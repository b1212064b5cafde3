//! The autodiff engine on its own: fit a tiny network to XOR with Adam and
//! check its gradients by finite differences.

use schedgen::rng;
use schedgen::tensor::gradcheck::check_gradients;
use schedgen::tensor::layers::Linear;
use schedgen::tensor::{Adam, Graph, Mode, ParamStore, Tensor};

fn main() -> schedgen::Result<()> {
    let mut store = ParamStore::new();
    let mut init = rng::stream(0, "init", 0);
    let hidden = Linear::new(&mut store, "hidden", 2, 8, &mut init);
    let out = Linear::new(&mut store, "out", 8, 2, &mut init);
    let x = Tensor::new(vec![4, 2], vec![0., 0., 0., 1., 1., 0., 1., 1.])?;
    let y = [0, 1, 1, 0];

    let mut adam = Adam::new(0.05);
    for step in 0..300 {
        let mut g = Graph::new(Mode::Train, rng::stream(0, "dropout", step));
        let input = g.constant(x.clone());
        let h = hidden.forward(&mut g, &store, input)?;
        let h = g.tanh(h);
        let logits = out.forward(&mut g, &store, h)?;
        let logp = g.log_softmax(logits);
        let loss = g.nll(logp, &y)?;
        if step % 50 == 0 {
            println!("step {step:>3}  loss {:.5}", g.value(loss).item());
        }
        let grads = g.backward(loss)?;
        adam.step(&mut store, &grads)?;
    }

    let a = Tensor::from_fn(&[3, 4], |i| (i as f32 * 0.37).sin());
    let b = Tensor::from_fn(&[4, 2], |i| (i as f32 * 0.91).cos());
    let err = check_gradients(&[a, b], 1e-3, 1, |g, v| {
        let m = g.matmul(v[0], v[1])?;
        Ok(g.sigmoid(m))
    })?;
    println!("matmul + sigmoid gradient relative error {err:.2e}");
    Ok(())
}
