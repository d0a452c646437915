//! RMSProp and the warmup / linear-decay schedule.

use crate::autodiff::{ParamId, ParamStore};
use crate::{Error, Result};

/// Learning rate at 1-indexed `step`: linear warmup to `base_lr` over the
/// first `round(warmup_ratio · total)` steps, then linear decay to 0 at `total`.
pub fn lr_schedule(step: usize, total: usize, base_lr: f64, warmup_ratio: f64) -> f64 {
    if total == 0 || step > total {
        return 0.0;
    }
    let warmup = (warmup_ratio * total as f64).round() as usize;
    if step <= warmup {
        base_lr * step as f64 / warmup as f64
    } else {
        base_lr * (total - step) as f64 / (total - warmup) as f64
    }
}

/// `s ← ρs + (1−ρ)g²; θ ← θ − lr · g/√(s+ε)`, no momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub eps: f64,
    state: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(rho: f64, eps: f64) -> Self {
        Self {
            rho,
            eps,
            state: Vec::new(),
        }
    }

    /// Updates every trainable parameter from its accumulated gradient.
    /// A parameter without a gradient is treated as having a zero gradient.
    /// `lr_for` gives the step size per parameter.
    pub fn step(&mut self, store: &mut ParamStore, mut lr_for: impl FnMut(ParamId, &str) -> f64) -> Result<()> {
        if self.state.len() < store.len() {
            self.state.resize(store.len(), Vec::new());
        }
        for (_, name, t) in store.iter() {
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient { path: name.to_string() });
                }
            }
        }
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            if !store.get(id).requires_grad() {
                continue;
            }
            let lr = lr_for(id, store.name(id));
            let t = store.get_mut(id);
            let n = t.numel();
            let s = &mut self.state[id.index()];
            if s.is_empty() {
                s.resize(n, 0.0);
            }
            let grad = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            for ((theta, s), g) in t.data_mut().iter_mut().zip(s.iter_mut()).zip(grad) {
                *s = self.rho * *s + (1.0 - self.rho) * g * g;
                *theta -= lr * g / (*s + self.eps).sqrt();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn schedule_shape() {
        let (total, base) = (100, 5e-4);
        assert_eq!(lr_schedule(10, total, base, 0.1), base);
        assert_eq!(lr_schedule(100, total, base, 0.1), 0.0);
        assert!((lr_schedule(1, total, base, 0.1) - base / 10.0).abs() < 1e-18);
        assert!((lr_schedule(55, total, base, 0.1) - base * 0.5).abs() < 1e-18);
        assert!(lr_schedule(1, total, base, 0.1) > 0.0);
        for s in 1..total {
            let (a, b) = (lr_schedule(s, total, base, 0.1), lr_schedule(s + 1, total, base, 0.1));
            if s < 10 {
                assert!(b > a);
            } else {
                assert!(b < a);
            }
        }
        assert_eq!(lr_schedule(3, 4, 1.0, 0.0), 0.25);
    }

    fn scalar_store(value: f64, grad: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store
            .insert("x", Tensor::scalar(value).with_requires_grad(true))
            .unwrap();
        store.get_mut(id).accumulate_grad(&[grad]).unwrap();
        (store, id)
    }

    #[test]
    fn single_step_closed_form() {
        let (lr, g) = (0.01, 0.3);
        let (mut store, id) = scalar_store(1.0, g);
        let mut opt = RmsProp::new(0.9, 1e-8);
        opt.step(&mut store, |_, _| lr).unwrap();
        let expect = 1.0 - lr * g / (0.1 * g * g + 1e-8f64).sqrt();
        assert!((store.get(id).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut store, id) = scalar_store(2.5, 0.0);
        let mut opt = RmsProp::new(0.9, 1e-8);
        opt.step(&mut store, |_, _| 0.1).unwrap();
        assert_eq!(store.get(id).data()[0], 2.5);
    }

    #[test]
    fn updates_are_elementwise() {
        let mut store = ParamStore::new();
        let id = store
            .insert("v", Tensor::row(vec![1.0, 1.0]).unwrap().with_requires_grad(true))
            .unwrap();
        store.get_mut(id).accumulate_grad(&[0.5, 0.0]).unwrap();
        RmsProp::new(0.9, 1e-8).step(&mut store, |_, _| 0.1).unwrap();
        let v = store.get(id).data();
        assert!(v[0] < 1.0);
        assert_eq!(v[1], 1.0);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let (mut store, _) = scalar_store(1.0, f64::NAN);
        match RmsProp::new(0.9, 1e-8).step(&mut store, |_, _| 0.1) {
            Err(Error::NonFiniteGradient { path }) => assert_eq!(path, "x"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut store = ParamStore::new();
        let id = store.insert("f", Tensor::scalar(3.0)).unwrap();
        store.get_mut(id).accumulate_grad(&[1.0]).unwrap();
        RmsProp::new(0.9, 1e-8).step(&mut store, |_, _| 0.1).unwrap();
        assert_eq!(store.get(id).data()[0], 3.0);
    }
}
