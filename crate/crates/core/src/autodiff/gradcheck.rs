use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, TensorError, Var};
use crate::Result;

/// Central finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error. Central differences at
/// [`FD_STEP`] carry roughly `1e-16 · |loss| / FD_STEP` of rounding noise, so
/// gradients below this floor are compared in absolute terms instead: a
/// passing check at tolerance `tol` bounds their error by `tol · GRAD_FLOOR`.
pub const GRAD_FLOOR: f64 = 1e-6;

/// One probed coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub path: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn rel_error(&self, floor: f64) -> f64 {
        self.abs_error() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`.
    pub max_rel_error: f64,
    /// Parameter path and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    pub samples: Vec<GradSample>,
}

impl GradCheckReport {
    /// Largest relative error under a different denominator floor.
    pub fn max_rel_error_with_floor(&self, floor: f64) -> f64 {
        self.samples.iter().map(|s| s.rel_error(floor)).fold(0.0, f64::max)
    }

    pub fn max_abs_error(&self) -> f64 {
        self.samples.iter().map(GradSample::abs_error).fold(0.0, f64::max)
    }
}

/// Compares tape gradients against central finite differences.
///
/// `loss_fn` must build a deterministic scalar loss on the graph it is given
/// (no dropout). Up to `samples` coordinates are drawn from every parameter
/// with `requires_grad`; frozen parameters are skipped.
pub fn gradient_check<F>(params: &mut ParamStore, samples: usize, seed: u64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<'_>) -> Result<Var>,
{
    let analytic: Vec<Option<Vec<f64>>> = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        let grads = g.backward(loss)?;
        let mut by_id = vec![None; params.len()];
        for (id, grad) in grads.params() {
            by_id[id.index()] = Some(grad.clone());
        }
        by_id
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        samples: Vec::new(),
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let tensor = params.get(id);
        if !tensor.requires_grad() {
            continue;
        }
        let n = tensor.numel();
        let picks = sample(&mut rng, n, samples.min(n)).into_vec();
        for idx in picks {
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[idx]);
            let orig = params.get(id).data()[idx];
            params.get_mut(id).data_mut()[idx] = orig + FD_STEP;
            let plus = eval(params, &mut loss_fn);
            params.get_mut(id).data_mut()[idx] = orig - FD_STEP;
            let minus = eval(params, &mut loss_fn);
            params.get_mut(id).data_mut()[idx] = orig;
            let numeric = (plus? - minus?) / (2.0 * FD_STEP);
            if !a.is_finite() || !numeric.is_finite() {
                return Err(TensorError::NonFinite {
                    path: params.name(id).to_string(),
                }
                .into());
            }
            let sample = GradSample {
                path: params.name(id).to_string(),
                index: idx,
                analytic: a,
                numeric,
            };
            let rel = sample.rel_error(GRAD_FLOOR);
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((sample.path.clone(), idx));
            }
            report.samples.push(sample);
        }
    }
    Ok(report)
}

fn eval<F>(params: &ParamStore, loss_fn: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let loss = loss_fn(&mut g)?;
    Ok(g.scalar(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Axis, Tensor};

    #[test]
    fn quadratic_form_matches_closed_form() {
        // f(x) = xᵀ A x with A symmetric; ∇f = 2 A x.
        let mut store = ParamStore::new();
        let x = store
            .insert("x", Tensor::row(vec![0.3, -1.2, 0.7]).unwrap().with_requires_grad(true))
            .unwrap();
        let a = Tensor::matrix(3, 3, vec![2.0, 0.5, -0.1, 0.5, 1.0, 0.3, -0.1, 0.3, 3.0]).unwrap();
        let report = gradient_check(&mut store, 3, 1, |g| {
            let xv = g.param(x)?;
            let av = g.constant(a.clone())?;
            let xa = g.matmul(xv, av)?;
            let prod = g.mul(xa, xv)?;
            Ok(g.sum_all(prod))
        })
        .unwrap();
        assert_eq!(report.coordinates, 3);
        assert!(report.max_rel_error < 1e-7, "{report:?}");
        assert!(report.max_rel_error_with_floor(1e-8) < 1e-7);
        assert_eq!(report.samples.len(), 3);

        let mut g = Graph::new(&store);
        let xv = g.param(x).unwrap();
        let av = g.constant(a.clone()).unwrap();
        let xa = g.matmul(xv, av).unwrap();
        let prod = g.mul(xa, xv).unwrap();
        let loss = g.sum_all(prod);
        let grads = g.backward(loss).unwrap();
        let got = grads.wrt(&g, xv);
        let xs = [0.3, -1.2, 0.7];
        for (i, got) in got.iter().enumerate() {
            let expect: f64 = 2.0 * (0..3).map(|j| a.at(i, j) * xs[j]).sum::<f64>();
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_params_are_not_sampled() {
        let mut store = ParamStore::new();
        let w = store
            .insert("w", Tensor::row(vec![1.0, 2.0]).unwrap().with_requires_grad(true))
            .unwrap();
        let frozen = store.insert("frozen", Tensor::row(vec![3.0, 4.0]).unwrap()).unwrap();
        let report = gradient_check(&mut store, 10, 0, |g| {
            let a = g.param(w)?;
            let b = g.param(frozen)?;
            let p = g.mul(a, b)?;
            Ok(g.sum(p, Axis::Cols))
        })
        .unwrap();
        assert_eq!(report.coordinates, 2);
        assert_eq!(report.worst.as_ref().unwrap().0, "w");
    }

    #[test]
    fn non_finite_loss_names_the_parameter() {
        let mut store = ParamStore::new();
        let w = store
            .insert("enc.w", Tensor::row(vec![-1.0]).unwrap().with_requires_grad(true))
            .unwrap();
        let err = gradient_check(&mut store, 1, 0, |g| {
            let a = g.param(w)?;
            Ok(g.ln(a))
        })
        .unwrap_err();
        assert!(err.to_string().contains("enc.w"), "{err}");
    }
}
