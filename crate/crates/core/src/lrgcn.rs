//! Gated recurrent cell whose linear maps are two-hop relational graph
//! convolutions over incoming and outgoing relations.
//!
//! A gate's preactivation sums a convolution of the current signals over the
//! current snapshot (intra-time) and a convolution of the previous hidden
//! state over the previous snapshot (inter-time). There are no bias terms.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedPair;
use crate::numerics::{ComputeGraph, ParamId, ParamSet, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    /// Every step uses the window's last snapshot.
    Static,
    /// Every step uses its own snapshot.
    #[default]
    Evolving,
}

/// What the second layer consumes at each step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer2Input {
    #[default]
    HiddenSequence,
    RawFeatures,
}

/// Weights of one two-hop convolution: `d_in -> hop -> d_out` per relation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelationalConvParams {
    pub w0_in: ParamId,
    pub w0_out: ParamId,
    pub w1_in: ParamId,
    pub w1_out: ParamId,
}

impl RelationalConvParams {
    pub fn register(params: &mut ParamSet, prefix: &str, d_in: usize, hop: usize, d_out: usize) -> Self {
        let mut w = |name: &str, rows: usize, cols: usize| {
            params.insert(format!("{prefix}.{name}"), Tensor::zeros(rows, cols), rows)
        };
        RelationalConvParams {
            w0_in: w("w0_in", d_in, hop),
            w0_out: w("w0_out", d_in, hop),
            w1_in: w("w1_in", hop, d_out),
            w1_out: w("w1_out", hop, d_out),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateParams {
    /// Applied to the step input over the current snapshot.
    pub intra: RelationalConvParams,
    /// Applied to the previous hidden state over the previous snapshot.
    pub inter: RelationalConvParams,
}

impl GateParams {
    pub fn register(params: &mut ParamSet, prefix: &str, d_in: usize, hop: usize, units: usize) -> Self {
        GateParams {
            intra: RelationalConvParams::register(params, &format!("{prefix}.intra"), d_in, hop, units),
            inter: RelationalConvParams::register(params, &format!("{prefix}.inter"), units, hop, units),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrgcnCellParams {
    pub input: GateParams,
    pub forget: GateParams,
    pub output: GateParams,
    pub cell: GateParams,
}

impl LrgcnCellParams {
    pub fn register(params: &mut ParamSet, prefix: &str, d_in: usize, hop: usize, units: usize) -> Self {
        let mut gate = |g: &str| GateParams::register(params, &format!("{prefix}.{g}"), d_in, hop, units);
        LrgcnCellParams { input: gate("i"), forget: gate("f"), output: gate("o"), cell: gate("c") }
    }

    fn gates(&self) -> [&GateParams; 4] {
        [&self.input, &self.forget, &self.output, &self.cell]
    }
}

/// Hidden state `H` and memory cell `c`, both `N x u`.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub hidden: Var,
    pub cell: Var,
    // Set for the all-zero initial state; lets the step skip terms that are
    // exactly zero.
    zero: bool,
}

impl CellState {
    pub fn new(hidden: Var, cell: Var) -> Self {
        CellState { hidden, cell, zero: false }
    }

    pub fn zeros(g: &mut ComputeGraph<'_>, n_nodes: usize, units: usize) -> Result<Self> {
        let hidden = g.constant(Tensor::zeros(n_nodes, units))?;
        let cell = g.constant(Tensor::zeros(n_nodes, units))?;
        Ok(CellState { hidden, cell, zero: true })
    }
}

/// `Ã_in·X` and `Ã_out·X`, shared by the four gates.
#[derive(Clone, Copy, Debug)]
struct Propagated {
    via_in: Var,
    via_out: Var,
}

fn propagate(g: &mut ComputeGraph<'_>, adj: &NormalizedPair, x: Var) -> Result<Propagated> {
    Ok(Propagated { via_in: g.spmm(&adj.a_in, x)?, via_out: g.spmm(&adj.a_out, x)? })
}

fn conv_from(
    g: &mut ComputeGraph<'_>,
    adj: &NormalizedPair,
    x: Propagated,
    p: &RelationalConvParams,
) -> Result<Var> {
    let (w0_in, w0_out) = (g.param(p.w0_in)?, g.param(p.w0_out)?);
    let (w1_in, w1_out) = (g.param(p.w1_in)?, g.param(p.w1_out)?);
    let a = g.matmul(x.via_in, w0_in)?;
    let b = g.matmul(x.via_out, w0_out)?;
    let inner = g.add(a, b)?;
    let hidden = g.relu(inner)?;
    let a = g.matmul(hidden, w1_in)?;
    let a = g.spmm(&adj.a_in, a)?;
    let b = g.matmul(hidden, w1_out)?;
    let b = g.spmm(&adj.a_out, b)?;
    g.add(a, b)
}

/// `Σ_φ Ã_φ · ReLU(Σ_φ Ã_φ X W⁰_φ) · W¹_φ`
pub fn two_hop_conv(
    g: &mut ComputeGraph<'_>,
    adj: &NormalizedPair,
    x: Var,
    p: &RelationalConvParams,
) -> Result<Var> {
    check_rows(g, adj, x, "two_hop_conv")?;
    let prop = propagate(g, adj, x)?;
    conv_from(g, adj, prop, p)
}

fn check_rows(g: &ComputeGraph<'_>, adj: &NormalizedPair, x: Var, op: &'static str) -> Result<()> {
    let rows = g.value(x).rows();
    if rows != adj.n_nodes() {
        return Err(Error::shape(op, format!("{rows} rows for a {}-node operator", adj.n_nodes())));
    }
    Ok(())
}

/// Intra-time convolution of `x_t` plus inter-time convolution of `h_prev`,
/// without an outer nonlinearity.
pub fn gate_preactivation(
    g: &mut ComputeGraph<'_>,
    theta: &GateParams,
    x_t: Var,
    h_prev: Var,
    adj_t: &NormalizedPair,
    adj_prev: &NormalizedPair,
) -> Result<Var> {
    let intra = two_hop_conv(g, adj_t, x_t, &theta.intra)?;
    let inter = two_hop_conv(g, adj_prev, h_prev, &theta.inter)?;
    g.add(intra, inter)
}

/// One recurrent step:
/// `c = f ⊙ c_prev + i ⊙ tanh(pre_c)`, `H = o ⊙ c`.
pub fn lrgcn_step(
    g: &mut ComputeGraph<'_>,
    params: &LrgcnCellParams,
    state: CellState,
    x_t: Var,
    adj_t: &NormalizedPair,
    adj_prev: &NormalizedPair,
) -> Result<CellState> {
    check_rows(g, adj_t, x_t, "lrgcn_step")?;
    check_rows(g, adj_prev, state.hidden, "lrgcn_step")?;
    if !g.value(state.hidden).is_finite() || !g.value(state.cell).is_finite() {
        return Err(Error::NonFinite { op: "lrgcn_step" });
    }
    let x_prop = propagate(g, adj_t, x_t)?;
    let h_prop = if state.zero { None } else { Some(propagate(g, adj_prev, state.hidden)?) };

    let mut pre = [x_t; 4];
    for (slot, theta) in pre.iter_mut().zip(params.gates()) {
        let intra = conv_from(g, adj_t, x_prop, &theta.intra)?;
        *slot = match h_prop {
            Some(h) => {
                let inter = conv_from(g, adj_prev, h, &theta.inter)?;
                g.add(intra, inter)?
            }
            None => intra,
        };
    }
    let [pre_i, pre_f, pre_o, pre_c] = pre;
    let i = g.sigmoid(pre_i)?;
    let o = g.sigmoid(pre_o)?;
    let candidate = g.tanh(pre_c)?;
    let write = g.mul(i, candidate)?;
    let cell = if state.zero {
        write
    } else {
        let f = g.sigmoid(pre_f)?;
        let keep = g.mul(f, state.cell)?;
        g.add(keep, write)?
    };
    let hidden = g.mul(o, cell)?;
    if g.value(hidden).cols() != g.value(state.hidden).cols() {
        return Err(Error::shape("lrgcn_step", "gate width differs from state width"));
    }
    Ok(CellState::new(hidden, cell))
}

/// Signals and normalized operators for the `M` steps of one window.
#[derive(Clone, Debug)]
pub struct Window {
    pub features: Vec<Tensor>,
    pub adjacency: Vec<Arc<NormalizedPair>>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// `(adj_t, adj_prev)` for step `k` under `mode`.
    pub fn operators(&self, k: usize, mode: GraphMode) -> (&NormalizedPair, &NormalizedPair) {
        match mode {
            GraphMode::Static => {
                let last = self.adjacency.last().expect("non-empty window");
                (last, last)
            }
            GraphMode::Evolving => (&self.adjacency[k], &self.adjacency[k.saturating_sub(1)]),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderParams {
    pub layer1: LrgcnCellParams,
    pub layer2: LrgcnCellParams,
    pub units: usize,
    pub layer2_input: Layer2Input,
}

/// Runs both layers over the window and returns the node encodings `Ω`
/// (`N x u`), the second layer's last hidden state.
pub fn encode_sequence(
    g: &mut ComputeGraph<'_>,
    enc: &EncoderParams,
    window: &Window,
    mode: GraphMode,
) -> Result<Var> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if window.adjacency.len() != window.len() {
        return Err(Error::shape("encode_sequence", "feature and snapshot counts differ"));
    }
    let n = window.adjacency[0].n_nodes();
    let inputs = window
        .features
        .iter()
        .map(|x| g.constant(x.clone()))
        .collect::<Result<Vec<_>>>()?;

    let mut state = CellState::zeros(g, n, enc.units)?;
    let mut hidden_seq = Vec::with_capacity(window.len());
    for (k, &x) in inputs.iter().enumerate() {
        let (adj_t, adj_prev) = window.operators(k, mode);
        state = lrgcn_step(g, &enc.layer1, state, x, adj_t, adj_prev)?;
        hidden_seq.push(state.hidden);
    }

    let layer2_inputs = match enc.layer2_input {
        Layer2Input::HiddenSequence => hidden_seq,
        Layer2Input::RawFeatures => inputs,
    };
    for (k, &x) in layer2_inputs.iter().enumerate() {
        let (adj_t, adj_prev) = window.operators(k, mode);
        state = lrgcn_step(g, &enc.layer2, state, x, adj_t, adj_prev)?;
    }
    Ok(state.hidden)
}
