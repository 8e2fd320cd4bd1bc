//! Self-attentive path embedding.
//!
//! A path's node encodings are run through a forward LSTM (`Γ`, `m x v`),
//! scored from `r` views as `S = softmax(W_h2 · tanh(W_h1 · Γᵀ))` and pooled
//! into `E = S·Γ`, whose `r x v` shape does not depend on the path length.

use crate::error::{Error, Result};
use crate::numerics::{ComputeGraph, ParamId, ParamSet, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmGate {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: Option<ParamId>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SapeParams {
    pub input: LstmGate,
    pub forget: LstmGate,
    pub output: LstmGate,
    pub candidate: LstmGate,
    /// `d_s x v`
    pub w_h1: ParamId,
    /// `r x d_s`
    pub w_h2: ParamId,
    pub width: usize,
}

impl SapeParams {
    /// Registers weights for `u -> v` encoding with `d_s` attention units and
    /// `r` views.
    pub fn register(
        params: &mut ParamSet,
        prefix: &str,
        u: usize,
        v: usize,
        d_s: usize,
        r: usize,
        bias: bool,
    ) -> Self {
        let mut gate = |name: &str| LstmGate {
            w_x: params.insert(format!("{prefix}.lstm.{name}.w_x"), Tensor::zeros(u, v), u),
            w_h: params.insert(format!("{prefix}.lstm.{name}.w_h"), Tensor::zeros(v, v), v),
            bias: bias.then(|| params.insert(format!("{prefix}.lstm.{name}.b"), Tensor::zeros(1, v), 0)),
        };
        let (input, forget, output, candidate) = (gate("i"), gate("f"), gate("o"), gate("c"));
        SapeParams {
            input,
            forget,
            output,
            candidate,
            w_h1: params.insert(format!("{prefix}.w_h1"), Tensor::zeros(d_s, v), v),
            w_h2: params.insert(format!("{prefix}.w_h2"), Tensor::zeros(r, d_s), d_s),
            width: v,
        }
    }
}

/// Rows of `Ω` for the path's nodes, in path order. Revisits are allowed.
pub fn index_path(g: &mut ComputeGraph<'_>, omega: Var, node_ids: &[usize]) -> Result<Var> {
    if node_ids.is_empty() {
        return Err(Error::EmptyPath);
    }
    g.gather_rows(omega, node_ids)
}

fn gate_pre(g: &mut ComputeGraph<'_>, gate: &LstmGate, x: Var, h: Option<Var>) -> Result<Var> {
    let w_x = g.param(gate.w_x)?;
    let mut pre = g.matmul(x, w_x)?;
    if let Some(h) = h {
        let w_h = g.param(gate.w_h)?;
        let rec = g.matmul(h, w_h)?;
        pre = g.add(pre, rec)?;
    }
    if let Some(b) = gate.bias {
        let b = g.param(b)?;
        pre = g.add_row(pre, b)?;
    }
    Ok(pre)
}

/// Forward LSTM from a zero state; row `t` of the result is the hidden state
/// after consuming row `t` of `path`.
pub fn path_lstm(g: &mut ComputeGraph<'_>, p: &SapeParams, path: Var) -> Result<Var> {
    let m = g.value(path).rows();
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut outputs = Vec::with_capacity(m);
    for t in 0..m {
        let x = g.gather_rows(path, &[t])?;
        let i = gate_pre(g, &p.input, x, h)?;
        let i = g.sigmoid(i)?;
        let o = gate_pre(g, &p.output, x, h)?;
        let o = g.sigmoid(o)?;
        let cand = gate_pre(g, &p.candidate, x, h)?;
        let cand = g.tanh(cand)?;
        let write = g.mul(i, cand)?;
        let cell = match c {
            Some(prev) => {
                let f = gate_pre(g, &p.forget, x, h)?;
                let f = g.sigmoid(f)?;
                let keep = g.mul(f, prev)?;
                g.add(keep, write)?
            }
            None => write,
        };
        let squashed = g.tanh(cell)?;
        let hidden = g.mul(o, squashed)?;
        outputs.push(hidden);
        h = Some(hidden);
        c = Some(cell);
    }
    g.concat_rows(&outputs)
}

/// `S = row_softmax(W_h2 · tanh(W_h1 · Γᵀ))`, one distribution over path
/// positions per view.
pub fn self_attention(g: &mut ComputeGraph<'_>, p: &SapeParams, gamma: Var) -> Result<Var> {
    if !g.value(gamma).is_finite() {
        return Err(Error::NonFinite { op: "self_attention" });
    }
    let w_h1 = g.param(p.w_h1)?;
    let w_h2 = g.param(p.w_h2)?;
    let gamma_t = g.transpose(gamma)?;
    let hidden = g.matmul(w_h1, gamma_t)?;
    let hidden = g.tanh(hidden)?;
    let logits = g.matmul(w_h2, hidden)?;
    g.row_softmax(logits)
}

/// `E = S · Γ`
pub fn pool_embedding(g: &mut ComputeGraph<'_>, s: Var, gamma: Var) -> Result<Var> {
    g.matmul(s, gamma)
}

/// Attention `S` (`r x m`) and embedding `E` (`r x v`) for one path.
#[derive(Clone, Copy, Debug)]
pub struct PathEmbeddingVars {
    pub attention: Var,
    pub embedding: Var,
}

pub fn embed_path(g: &mut ComputeGraph<'_>, p: &SapeParams, omega: Var, node_ids: &[usize]) -> Result<PathEmbeddingVars> {
    let path = index_path(g, omega, node_ids)?;
    let gamma = path_lstm(g, p, path)?;
    let attention = self_attention(g, p, gamma)?;
    let embedding = pool_embedding(g, attention, gamma)?;
    Ok(PathEmbeddingVars { attention, embedding })
}

/// Per-position importance: the mean of each column of `S` over the views.
pub fn node_importance(attention: &Tensor) -> Vec<f64> {
    let (r, m) = (attention.rows(), attention.cols());
    (0..m)
        .map(|j| (0..r).map(|i| attention.get(i, j)).sum::<f64>() / r as f64)
        .collect()
}
