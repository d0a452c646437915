//! MD-GAT and attentive pooling gradients against central differences.

mod common;

use common::jvp_error;
use let_core::autodiff::{Graph, Initializer, ParamStore, Tensor, Var};
use let_core::gnn::{AttPoolParams, MdGatParams};
use proptest::prelude::*;

const TOL: f64 = 1e-6;

fn weighted_sum(g: &mut Graph<'_>, out: Var) -> Result<Var, let_core::Error> {
    let (r, c) = g.shape(out);
    let w = g.constant(Tensor::matrix(r, c, (0..r * c).map(|i| 0.5 + 0.25 * (i % 5) as f64).collect())?)?;
    let y = g.mul(out, w)?;
    Ok(g.sum_all(y))
}

fn inputs(store: &mut ParamStore, rows: &[Vec<f64>]) -> Vec<let_core::autodiff::ParamId> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            store
                .insert(format!("in{i}"), Tensor::row(r.clone()).unwrap().with_requires_grad(true))
                .unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn md_gat_matches_finite_differences(
        seed in any::<u64>(),
        rows in prop::collection::vec(prop::collection::vec(-1.5..1.5f64, 4), 2..6),
    ) {
        let mut store = ParamStore::new();
        let gat = MdGatParams::new(&mut store, &Initializer::new(seed), "gat", 4).unwrap();
        let ids = inputs(&mut store, &rows);
        let err = jvp_error(&store, seed, |g| {
            let query = g.param(ids[0])?;
            let neighbors = ids[1..].iter().map(|&id| g.param(id)).collect::<Result<Vec<_>, _>>()?;
            let out = gat.forward(g, query, &neighbors)?;
            weighted_sum(g, out)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn att_pooling_matches_finite_differences(
        seed in any::<u64>(),
        rows in prop::collection::vec(prop::collection::vec(-1.5..1.5f64, 4), 1..6),
    ) {
        let mut store = ParamStore::new();
        let pool = AttPoolParams::new(&mut store, &Initializer::new(seed), "pool", 4).unwrap();
        let ids = inputs(&mut store, &rows);
        let err = jvp_error(&store, seed, |g| {
            let items = ids.iter().map(|&id| g.param(id)).collect::<Result<Vec<_>, _>>()?;
            let out = pool.pool(g, &items)?;
            weighted_sum(g, out)
        });
        prop_assert!(err < TOL, "{}", err);
    }
}
