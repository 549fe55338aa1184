//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::{Element, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

impl<T: Element> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPS,
            t: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    /// One update. Parameters without a gradient are treated as having a
    /// zero gradient. Non-finite gradients abort before anything changes.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::usage(format!("gradient for unknown parameter {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::dim(format!(
                    "gradient {name}: {:?} vs parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {name} at index {i}: {:?}",
                    g.data()[i]
                )));
            }
        }
        self.t += 1;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let one = T::one();
        let c1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::from_f64(self.lr), T::from_f64(self.eps));
        for (name, p) in params.iter_mut() {
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let g = grads.get(name);
            for i in 0..p.numel() {
                let gi = g.map_or(T::zero(), |g| g.data()[i]);
                let mi = b1 * m.data()[i] + (one - b1) * gi;
                let vi = b2 * v.data()[i] + (one - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                p.data_mut()[i] = p.data()[i] - update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore<f64> {
        [("w".to_string(), Tensor::from_f64(&[1], &[v]).unwrap())].into()
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut adam = Adam::<f64>::new(0.1);
        let mut p = store(1.5);
        adam.step(&mut p, &store(0.0)).unwrap();
        assert_eq!(p["w"].data(), &[1.5]);
        adam.m.insert("w".into(), Tensor::from_f64(&[1], &[1.0]).unwrap());
        adam.step(&mut p, &store(0.0)).unwrap();
        assert!((adam.m["w"].data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut adam = Adam::<f64>::new(0.01);
        let mut p = store(0.0);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p["w"].data()[0];
            adam.step(&mut p, &store(-3.0)).unwrap();
            last = p["w"].data()[0] - before;
        }
        assert!((last - 0.01).abs() < 1e-6, "{last}");
    }

    #[test]
    fn scalar_trajectory_matches_reference() {
        // Reference written from the update equations for f(w) = (w - 2)².
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let (mut w, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
        let mut adam = Adam::<f64>::new(lr);
        let mut p = store(0.3);
        for t in 1..=10 {
            let g = 2.0 * (w - 2.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);

            let grad = store(2.0 * (p["w"].data()[0] - 2.0));
            adam.step(&mut p, &grad).unwrap();
            assert!((p["w"].data()[0] - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_update() {
        let mut adam = Adam::<f64>::new(0.1);
        let mut p = store(1.0);
        let err = adam.step(&mut p, &store(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!((adam.t, p["w"].data()[0]), (0, 1.0));
    }
}
