//! Dense, loop-based reference implementations used as oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lrgcn_core::graph::{Edge, GraphSnapshot, NormalizationMode};
use lrgcn_core::lrgcn::{GateParams, LrgcnCellParams, RelationalConvParams};
use lrgcn_core::numerics::{ParamId, ParamSet, Tensor};

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dense(t: &Tensor) -> Dense {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn to_tensor(m: &Dense) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn zeros(rows: usize, cols: usize) -> Dense {
    vec![vec![0.0; cols]; rows]
}

pub fn mm(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

pub fn zip(a: &Dense, b: &Dense, f: impl Fn(f64, f64) -> f64) -> Dense {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect()).collect()
}

pub fn map(a: &Dense, f: impl Fn(f64) -> f64) -> Dense {
    a.iter().map(|row| row.iter().map(|&v| f(v)).collect()).collect()
}

pub fn plus(a: &Dense, b: &Dense) -> Dense {
    zip(a, b, |p, q| p + q)
}

pub fn max_diff(a: &Dense, b: &Tensor) -> f64 {
    assert_eq!((a.len(), a[0].len()), (b.rows(), b.cols()));
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            worst = worst.max((v - b.get(i, j)).abs());
        }
    }
    worst
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Random snapshot: each ordered pair gets an edge with probability
/// `density`; some weights are exactly zero.
pub fn random_snapshot(rng: &mut impl Rng, n: usize, density: f64) -> GraphSnapshot {
    let mut edges = Vec::new();
    for src in 0..n {
        for dst in 0..n {
            if src != dst && rng.random_bool(density) {
                let weight = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.1..3.0) };
                edges.push(Edge::new(src, dst, weight));
            }
        }
    }
    GraphSnapshot::new(n, edges, 0).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Dense {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect()).collect()
}

/// Overwrites every parameter with uniform values in `[-scale, scale)`.
pub fn randomize(params: &mut ParamSet, rng: &mut impl Rng, scale: f64) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// `(Ã_in, Ã_out)` straight from the definition: `Â = A + I` with
/// `A[dst][src] = w` for the incoming relation and its transpose for the
/// outgoing one, `D̂` the row sums of `Â`.
pub fn dense_operators(s: &GraphSnapshot, mode: NormalizationMode) -> (Dense, Dense) {
    let n = s.n_nodes;
    let mut a_in = zeros(n, n);
    for e in &s.edges {
        a_in[e.dst][e.src] += e.weight;
    }
    let mut a_out = transpose(&a_in);
    for i in 0..n {
        a_in[i][i] += 1.0;
        a_out[i][i] += 1.0;
    }
    let norm = |a: Dense| -> Dense {
        let d: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
        let mut out = zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[i][j] = match mode {
                    NormalizationMode::Asymmetric => a[i][j] / d[i],
                    NormalizationMode::Symmetric => a[i][j] / (d[i].sqrt() * d[j].sqrt()),
                };
            }
        }
        out
    };
    (norm(a_in), norm(a_out))
}

fn get(params: &ParamSet, id: ParamId) -> Dense {
    dense(params.get(id))
}

/// `Σ_φ Ã_φ · ReLU(Σ_φ Ã_φ X W⁰_φ) · W¹_φ`
pub fn dense_two_hop(ops: &(Dense, Dense), x: &Dense, params: &ParamSet, p: &RelationalConvParams) -> Dense {
    let (a_in, a_out) = ops;
    let inner = plus(&mm(&mm(a_in, x), &get(params, p.w0_in)), &mm(&mm(a_out, x), &get(params, p.w0_out)));
    let hidden = map(&inner, |v| v.max(0.0));
    plus(&mm(&mm(a_in, &hidden), &get(params, p.w1_in)), &mm(&mm(a_out, &hidden), &get(params, p.w1_out)))
}

pub fn dense_gate(
    ops_t: &(Dense, Dense),
    ops_prev: &(Dense, Dense),
    x: &Dense,
    h_prev: &Dense,
    params: &ParamSet,
    gate: &GateParams,
) -> Dense {
    plus(&dense_two_hop(ops_t, x, params, &gate.intra), &dense_two_hop(ops_prev, h_prev, params, &gate.inter))
}

/// One recurrent step; returns `(H, c)`.
pub fn dense_step(
    ops_t: &(Dense, Dense),
    ops_prev: &(Dense, Dense),
    x: &Dense,
    h_prev: &Dense,
    c_prev: &Dense,
    params: &ParamSet,
    cell: &LrgcnCellParams,
) -> (Dense, Dense) {
    let pre = |g: &GateParams| dense_gate(ops_t, ops_prev, x, h_prev, params, g);
    let i = map(&pre(&cell.input), logistic);
    let f = map(&pre(&cell.forget), logistic);
    let o = map(&pre(&cell.output), logistic);
    let cand = map(&pre(&cell.cell), f64::tanh);
    let c = plus(&zip(&f, c_prev, |a, b| a * b), &zip(&i, &cand, |a, b| a * b));
    let h = zip(&o, &c, |a, b| a * b);
    (h, c)
}

/// Confusion recount from scratch, returning
/// `(precision, recall, f1_pos, f1_neg, macro_f1)`.
pub fn recount(predicted: &[usize], labels: &[usize]) -> (usize, usize, usize, usize, [f64; 5]) {
    let count = |p: usize, y: usize| predicted.iter().zip(labels).filter(|&(&a, &b)| a == p && b == y).count();
    let (tp, fp, fn_, tn) = (count(1, 1), count(1, 0), count(0, 1), count(0, 0));
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let f1 = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let (precision, recall) = (div(tp, tp + fp), div(tp, tp + fn_));
    let f1_pos = f1(precision, recall);
    let f1_neg = f1(div(tn, tn + fn_), div(tn, tn + fp));
    (tp, fp, fn_, tn, [precision, recall, f1_pos, f1_neg, (f1_pos + f1_neg) / 2.0])
}
