//! Adam optimizer over a [`ParamSet`].

use super::{Array, ParamSet, Precision};
use indexmap::IndexMap;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: IndexMap<String, Array>,
    v: IndexMap<String, Array>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &IndexMap<String, Array>, precision: Precision) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(p.shape().to_vec()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(p.shape().to_vec()));
            for ((pi, &gi), (mi, vi)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            if precision == Precision::Single {
                p.round_to_f32();
            }
        }
    }
}
