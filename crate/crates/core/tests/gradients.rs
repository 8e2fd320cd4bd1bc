//! Tape gradients of every primitive and composite against central
//! differences.

mod common;

use std::sync::Arc;

use proptest::prelude::*;

use common::*;
use lrgcn_core::graph::{normalize_snapshot, NormalizationMode};
use lrgcn_core::lrgcn::{lrgcn_step, two_hop_conv, CellState, GraphMode, Layer2Input, LrgcnCellParams, RelationalConvParams};
use lrgcn_core::model::{forward_on_tape, loss_on_tape, Adjacency, ModelConfig};
use lrgcn_core::numerics::gradcheck::{check_all, GradCheckReport};
use lrgcn_core::numerics::{ComputeGraph, Csr, ParamId, ParamSet, Tensor, Var};
use lrgcn_core::pipeline::{gradient_check, tiny_config, tiny_problem};
use lrgcn_core::sape::{embed_path, SapeParams};
use lrgcn_core::train::init_params;
use lrgcn_core::Execution;

type Build = dyn Fn(&mut ComputeGraph<'_>) -> Var + Sync + Send;

/// Checks `Σ mask ⊙ build(θ)` with a fixed random mask, so every output
/// coordinate contributes with a distinct weight.
fn check(params: &ParamSet, build: &Build) -> GradCheckReport {
    let masked = |g: &mut ComputeGraph<'_>| {
        let out = build(g);
        let shape = g.value(out).shape().to_vec();
        let n: usize = shape.iter().product();
        let mut r = rng(99);
        let mask = Tensor::new(shape, random_matrix(&mut r, 1, n, 1.0).concat()).unwrap();
        let m = g.constant(mask).unwrap();
        let prod = g.mul(out, m).unwrap();
        g.sum(prod).unwrap()
    };
    check_all(
        |p| {
            let mut g = ComputeGraph::new(p);
            let root = masked(&mut g);
            Ok(g.value(root).data()[0])
        },
        |p| {
            let mut g = ComputeGraph::new(p);
            let root = masked(&mut g);
            g.gradient(root)
        },
        params,
        Execution::Sequential,
    )
    .unwrap()
}

fn assert_passes(name: &str, report: GradCheckReport) {
    assert!(report.passed(), "{name}: {report:?}");
}

fn matrix_params(seed: u64, shapes: &[(usize, usize)], lo: f64, hi: f64) -> (ParamSet, Vec<ParamId>) {
    let mut r = rng(seed);
    let mut params = ParamSet::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, &(rows, cols))| {
            let data = random_matrix(&mut r, rows, cols, 1.0).concat().iter().map(|v| lo + (v + 1.0) / 2.0 * (hi - lo)).collect();
            params.insert(format!("p{i}"), Tensor::matrix(rows, cols, data).unwrap(), rows)
        })
        .collect();
    (params, ids)
}

#[test]
fn elementwise_and_linear_primitives() {
    let (params, ids) = matrix_params(1, &[(3, 4), (4, 2), (3, 4), (1, 4)], -1.5, 1.5);
    let [a, b, c, row] = [ids[0], ids[1], ids[2], ids[3]];
    let cases: Vec<(&str, Box<Build>)> = vec![
        ("matmul", Box::new(move |g| { let (x, y) = (g.param(a).unwrap(), g.param(b).unwrap()); g.matmul(x, y).unwrap() })),
        ("add", Box::new(move |g| { let (x, y) = (g.param(a).unwrap(), g.param(c).unwrap()); g.add(x, y).unwrap() })),
        ("add_row", Box::new(move |g| { let (x, y) = (g.param(a).unwrap(), g.param(row).unwrap()); g.add_row(x, y).unwrap() })),
        ("mul", Box::new(move |g| { let (x, y) = (g.param(a).unwrap(), g.param(c).unwrap()); g.mul(x, y).unwrap() })),
        ("mul_self", Box::new(move |g| { let x = g.param(a).unwrap(); g.mul(x, x).unwrap() })),
        ("scale", Box::new(move |g| { let x = g.param(a).unwrap(); g.scale(x, -2.5).unwrap() })),
        ("sigmoid", Box::new(move |g| { let x = g.param(a).unwrap(); g.sigmoid(x).unwrap() })),
        ("tanh", Box::new(move |g| { let x = g.param(a).unwrap(); g.tanh(x).unwrap() })),
        ("row_softmax", Box::new(move |g| { let x = g.param(a).unwrap(); g.row_softmax(x).unwrap() })),
        ("transpose", Box::new(move |g| { let x = g.param(a).unwrap(); g.transpose(x).unwrap() })),
        ("flatten", Box::new(move |g| { let x = g.param(a).unwrap(); g.flatten(x).unwrap() })),
        ("sum", Box::new(move |g| { let x = g.param(a).unwrap(); g.sum(x).unwrap() })),
        ("concat_rows", Box::new(move |g| { let (x, y) = (g.param(a).unwrap(), g.param(c).unwrap()); g.concat_rows(&[x, y, x]).unwrap() })),
        ("gather_rows", Box::new(move |g| { let x = g.param(a).unwrap(); g.gather_rows(x, &[2, 0, 2, 1]).unwrap() })),
    ];
    for (name, build) in cases {
        assert_passes(name, check(&params, build.as_ref()));
    }
}

#[test]
fn relu_away_from_the_kink() {
    let (mut params, ids) = matrix_params(2, &[(4, 3)], -1.0, 1.0);
    for v in params.get_mut(ids[0]).data_mut() {
        *v += 0.2 * v.signum();
    }
    let id = ids[0];
    assert_passes("relu", check(&params, &move |g| { let x = g.param(id).unwrap(); g.relu(x).unwrap() }));
}

#[test]
fn ln_on_positive_inputs() {
    let (params, ids) = matrix_params(3, &[(3, 3)], 0.1, 2.0);
    let id = ids[0];
    assert_passes("ln", check(&params, &move |g| { let x = g.param(id).unwrap(); g.ln(x).unwrap() }));
}

#[test]
fn sparse_product() {
    let (params, ids) = matrix_params(4, &[(4, 3)], -1.0, 1.0);
    let a = Arc::new(Csr::from_triplets(5, 4, &[(0, 1, 0.5), (1, 1, -2.0), (3, 0, 1.5), (4, 3, 0.25), (4, 2, 1.0)]));
    let id = ids[0];
    assert_passes("spmm", check(&params, &move |g| { let x = g.param(id).unwrap(); g.spmm(&a, x).unwrap() }));
}

#[test]
fn relational_convolution_and_step() {
    let mut r = rng(5);
    let n = 5;
    let s_t = random_snapshot(&mut r, n, 0.4);
    let s_prev = random_snapshot(&mut r, n, 0.4);
    let x = to_tensor(&random_matrix(&mut r, n, 2, 1.0));
    let h = to_tensor(&random_matrix(&mut r, n, 3, 0.8));
    let c = to_tensor(&random_matrix(&mut r, n, 3, 0.8));
    for mode in [NormalizationMode::Asymmetric, NormalizationMode::Symmetric] {
        let adj_t = normalize_snapshot(&s_t, mode).unwrap();
        let adj_prev = normalize_snapshot(&s_prev, mode).unwrap();

        let mut params = ParamSet::new();
        let conv = RelationalConvParams::register(&mut params, "c", 2, 4, 3);
        randomize(&mut params, &mut r, 1.0);
        let (adj, xc) = (adj_t.clone(), x.clone());
        assert_passes(
            "two_hop_conv",
            check(&params, &move |g| { let xv = g.constant(xc.clone()).unwrap(); two_hop_conv(g, &adj, xv, &conv).unwrap() }),
        );

        let mut params = ParamSet::new();
        let cell = LrgcnCellParams::register(&mut params, "l", 2, 4, 3);
        randomize(&mut params, &mut r, 0.8);
        let (xs, hs, cs) = (x.clone(), h.clone(), c.clone());
        let (at, ap) = (adj_t.clone(), adj_prev.clone());
        let step = move |g: &mut ComputeGraph<'_>| {
            let xv = g.constant(xs.clone()).unwrap();
            let state = CellState::new(g.constant(hs.clone()).unwrap(), g.constant(cs.clone()).unwrap());
            let next = lrgcn_step(g, &cell, state, xv, &at, &ap).unwrap();
            g.concat_rows(&[next.hidden, next.cell]).unwrap()
        };
        assert_passes("lrgcn_step", check(&params, &step));
    }
}

#[test]
fn path_encoder_and_attention() {
    for bias in [true, false] {
        let mut r = rng(6);
        let mut params = ParamSet::new();
        let sape = SapeParams::register(&mut params, "s", 3, 4, 3, 2, bias);
        randomize(&mut params, &mut r, 0.9);
        let omega = to_tensor(&random_matrix(&mut r, 6, 3, 1.0));
        let build = move |g: &mut ComputeGraph<'_>| {
            let o = g.constant(omega.clone()).unwrap();
            let out = embed_path(g, &sape, o, &[4, 1, 1, 5]).unwrap();
            let s = g.flatten(out.attention).unwrap();
            let e = g.flatten(out.embedding).unwrap();
            let both = g.transpose(s).unwrap();
            let e = g.transpose(e).unwrap();
            g.concat_rows(&[both, e]).unwrap()
        };
        assert_passes("embed_path", check(&params, &build));
    }
}

fn full_model(config: &ModelConfig, seed: u64) -> GradCheckReport {
    let params = init_params(config, seed).unwrap();
    let (mut window, paths, labels) = tiny_problem(seed);
    if config.adjacency == Adjacency::Identity {
        let n = window.adjacency[0].n_nodes();
        window.adjacency = vec![Arc::new(lrgcn_core::graph::NormalizedPair::identity(n, config.normalization)); window.len()];
    }
    let ids: Vec<&[usize]> = paths.iter().map(Vec::as_slice).collect();
    let layout = params.layout;
    check_all(
        |values| {
            let mut g = ComputeGraph::new(values);
            let out = forward_on_tape(&mut g, &layout, config, &window, &ids)?;
            let root = loss_on_tape(&mut g, &out, &labels)?;
            Ok(g.value(root).data()[0])
        },
        |values| {
            let mut g = ComputeGraph::new(values);
            let out = forward_on_tape(&mut g, &layout, config, &window, &ids)?;
            let root = loss_on_tape(&mut g, &out, &labels)?;
            g.gradient(root)
        },
        &params.values,
        Execution::Parallel,
    )
    .unwrap()
}

#[test]
fn model_variants_have_exact_gradients() {
    let base = tiny_config();
    let variants = [
        ModelConfig { graph_mode: GraphMode::Static, ..base.clone() },
        ModelConfig { normalization: NormalizationMode::Symmetric, ..base.clone() },
        ModelConfig { adjacency: Adjacency::Identity, ..base.clone() },
        ModelConfig { layer2_input: Layer2Input::RawFeatures, ..base.clone() },
        ModelConfig { sape_bias: false, fc_bias: false, ..base.clone() },
    ];
    for config in variants {
        let report = full_model(&config, 3);
        assert!(report.passed(), "{config:?}: {report:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn end_to_end_gradient_check(seed in 0u64..1000) {
        let report = gradient_check(seed, Execution::Parallel).unwrap();
        prop_assert!(report.passed(), "{:?}", report);
        prop_assert!(report.coordinates > 0);
    }
}
