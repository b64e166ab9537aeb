// SPDX-License-Identifier: Apache-2.0

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = |i| Tensor::zeros(store.get(i).shape());
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: (0..store.len()).map(zeros).collect(),
            v: (0..store.len()).map(zeros).collect(),
        }
    }

    /// One update. Parameters with `None` gradients or `false` in
    /// `trainable` are left untouched and their moments do not advance.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Option<Vec<T>>],
        trainable: Option<&[bool]>,
    ) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Argument(format!(
                "{} gradients / {} moments for {} parameters",
                grads.len(),
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        let (c1, c2) = (T::of(c1), T::of(c2));
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            if trainable.is_some_and(|t| !t[i]) {
                continue;
            }
            let p = store.get_mut(i).data_mut();
            if g.len() != p.len() {
                return Err(Error::Argument(format!("gradient {i} has wrong length")));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::from_f64(&[1, 2], &[0.3, -0.7]).unwrap()).unwrap();
        let before = s.clone();
        let mut adam = Adam::new(&s, 0.1);
        adam.step(&mut s, &[Some(vec![0.0, 0.0])], None).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn scalar_quadratic_converges() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(&s, 0.1);
        for _ in 0..200 {
            let w = s.get(0).item();
            adam.step(&mut s, &[Some(vec![2.0 * w])], None).unwrap();
        }
        assert!(s.get(0).item().abs() < 0.05);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut a = ParamStore::<f32>::new();
        a.add("w", Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap()).unwrap();
        let mut b = a.clone();
        let g = vec![Some(vec![0.5f32, -0.25, 1e-3])];
        let (mut oa, mut ob) = (Adam::new(&a, 1e-3), Adam::new(&b, 1e-3));
        for _ in 0..5 {
            oa.step(&mut a, &g, None).unwrap();
            ob.step(&mut b, &g, None).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut s = ParamStore::<f64>::new();
        s.add("a", Tensor::scalar(1.0)).unwrap();
        s.add("b", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(&s, 0.1);
        adam.step(&mut s, &[Some(vec![1.0]), Some(vec![1.0])], Some(&[false, true]))
            .unwrap();
        assert_eq!(s.get(0).item(), 1.0);
        assert!(s.get(1).item() < 1.0);
    }
}
