//! Adam with bias correction. Moment slots are keyed by parameter name so a
//! single optimizer instance can drive several weight structs; the time step
//! advances once per `step` call.

use std::collections::HashMap;

use ndarray::Array2;

use super::ParamSet;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    slots: HashMap<String, (Array2<f64>, Array2<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            slots: HashMap::new(),
        }
    }

    /// Applies one update. `grads` must have the same parameter names and
    /// shapes as `model` (gradients reuse the weight struct type).
    pub fn step<M: ParamSet>(&mut self, model: &mut M, grads: &M) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let gs = grads.params();
        let ps = model.params_mut();
        assert_eq!(ps.len(), gs.len(), "parameter/gradient set mismatch");
        for ((name, p), (gname, g)) in ps.into_iter().zip(gs) {
            assert_eq!(name, gname, "parameter order mismatch");
            assert_eq!(p.raw_dim(), g.raw_dim(), "shape mismatch for {name}");
            let (m, v) = self
                .slots
                .entry(name)
                .or_insert_with(|| (Array2::zeros(p.raw_dim()), Array2::zeros(p.raw_dim())));
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
