//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use crate::tensor::store::ParamStore;
use crate::tensor::tensor::Tensor;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from named gradients. Parameters without a
    /// gradient entry are left untouched; moments update in f64 and the
    /// result is stored back in f32.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor<f32>>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, grad) in grads {
            let p = params.get_mut(name).unwrap_or_else(|| panic!("unknown param {name}"));
            assert_eq!(p.shape(), grad.shape(), "gradient shape mismatch for {name}");
            let n = p.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let pd = p.data_mut();
            for i in 0..n {
                let g = grad.data()[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                pd[i] = (pd[i] as f64 - self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::store::ParamStore;

    fn store_with(name: &str, vals: Vec<f32>) -> ParamStore {
        let mut s = ParamStore::new();
        let n = vals.len();
        s.insert(name.to_string(), Tensor::from_vec(vec![n], vals));
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = store_with("w", vec![1.25, -3.5]);
        let mut opt = Adam::new(1e-3);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(vec![2], vec![0.0, 0.0]));
        opt.step(&mut s, &grads);
        assert_eq!(s.get("w").unwrap().data(), &[1.25, -3.5]);
    }

    #[test]
    fn first_step_moves_by_lr_in_gradient_sign() {
        // With fresh moments, mhat/sqrt(vhat) = g/|g| up to eps.
        let mut s = store_with("w", vec![0.0, 0.0]);
        let mut opt = Adam::new(1e-3);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::from_vec(vec![2], vec![0.7, -0.2]));
        opt.step(&mut s, &grads);
        let w = s.get("w").unwrap().data();
        assert!((w[0] as f64 + 1e-3).abs() < 1e-6, "got {}", w[0]);
        assert!((w[1] as f64 - 1e-3).abs() < 1e-6, "got {}", w[1]);
    }

    #[test]
    fn hundred_steps_approach_quadratic_minimum() {
        // Oracle: the same textbook recurrence run on the analytic gradient
        // of (x-2)^2 must land within 0.05 of 2, and our optimizer must
        // track that recurrence.
        let (mut x_oracle, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let (b1, b2, lr, eps) = (0.9, 0.999, 0.1, 1e-8);
        for t in 1..=100 {
            let g = 2.0 * (x_oracle - 2.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            x_oracle -= lr * mhat / (vhat.sqrt() + eps);
        }
        assert!((x_oracle - 2.0).abs() < 0.05, "oracle ended at {x_oracle}");

        let mut s = store_with("x", vec![0.0]);
        let mut opt = Adam::new(0.1);
        for _ in 0..100 {
            let x = s.get("x").unwrap().data()[0];
            let mut grads = BTreeMap::new();
            grads.insert("x".to_string(), Tensor::from_vec(vec![1], vec![2.0 * (x - 2.0)]));
            opt.step(&mut s, &grads);
        }
        let got = s.get("x").unwrap().data()[0] as f64;
        assert!((got - 2.0).abs() < 0.05, "optimizer ended at {got}");
        assert!((got - x_oracle).abs() < 1e-4, "diverged from oracle recurrence");
    }
}
