//! Adam with bias correction.

use crate::model::{Grads, Network, ParamKind, Scalar};
use std::collections::BTreeMap;

pub struct Adam<F: Scalar> {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m: BTreeMap<String, ndarray::ArrayD<F>>,
    v: BTreeMap<String, ndarray::ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update over every trainable tensor that has a gradient:
    ///
    /// ```text
    /// m <- b1 m + (1-b1) g        m_hat = m / (1 - b1^t)
    /// v <- b2 v + (1-b2) g^2      v_hat = v / (1 - b2^t)
    /// theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    /// ```
    pub fn step(&mut self, net: &mut Network<F>, grads: &Grads<F>, lr: f64) {
        self.step += 1;
        let b1 = F::cast_from_f64(self.beta1);
        let b2 = F::cast_from_f64(self.beta2);
        let one = F::one();
        let bc1 = F::cast_from_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = F::cast_from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = F::cast_from_f64(lr);
        let eps = F::cast_from_f64(self.epsilon);

        let m_state = &mut self.m;
        let v_state = &mut self.v;
        net.visit_params_mut(&mut |name, kind, mut view| {
            if kind != ParamKind::Trainable {
                return;
            }
            let Some(grad) = grads.get(&name) else {
                return;
            };
            let m = m_state
                .entry(name.clone())
                .or_insert_with(|| ndarray::ArrayD::zeros(view.raw_dim()));
            let v = v_state
                .entry(name)
                .or_insert_with(|| ndarray::ArrayD::zeros(view.raw_dim()));
            ndarray::Zip::from(&mut view)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|theta, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
                });
        });
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}
