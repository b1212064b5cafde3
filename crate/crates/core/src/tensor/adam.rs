use super::params::{Gradients, ParamStore};
use super::{mismatch, Tensor, TensorError};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), TensorError> {
        for (id, g) in grads.iter() {
            if store.get(id).shape() != g.shape() {
                return Err(mismatch("adam", store.get(id).shape(), g.shape()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for (id, g) in grads.iter() {
            if !store.param(id).trainable {
                continue;
            }
            let i = id.index();
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let p = store.get_mut(id).data_mut();
            for (((pv, mv), vv), &gv) in p.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = f64::from(*mv) / bc1;
                let vhat = f64::from(*vv) / bc2;
                *pv -= (self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}
