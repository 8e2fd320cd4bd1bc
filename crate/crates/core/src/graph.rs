//! Weighted directed snapshots, their evolution rules, and the normalized
//! per-relation propagation operators.
//!
//! Edge `src -> dst` populates adjacency entry `A[dst][src]`: row `i` of the
//! incoming operator aggregates over the nodes that point at `i`.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::{Csr, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

impl Edge {
    pub fn new(src: usize, dst: usize, weight: f64) -> Self {
        Edge { src, dst, weight }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphSnapshot {
    pub n_nodes: usize,
    pub edges: Vec<Edge>,
    pub t: usize,
}

impl GraphSnapshot {
    pub fn new(n_nodes: usize, edges: Vec<Edge>, t: usize) -> Result<Self> {
        let snapshot = GraphSnapshot { n_nodes, edges, t };
        snapshot.check()?;
        Ok(snapshot)
    }

    pub fn empty(n_nodes: usize, t: usize) -> Self {
        GraphSnapshot { n_nodes, edges: Vec::new(), t }
    }

    pub fn check(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.edges.len());
        for e in &self.edges {
            for id in [e.src, e.dst] {
                if id >= self.n_nodes {
                    return Err(Error::NodeOutOfRange { id, n_nodes: self.n_nodes });
                }
            }
            if !(e.weight >= 0.0) || !e.weight.is_finite() {
                return Err(Error::NegativeWeight { src: e.src, dst: e.dst, weight: e.weight });
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(Error::DuplicateEdge { src: e.src, dst: e.dst });
            }
        }
        Ok(())
    }

    pub fn weight(&self, src: usize, dst: usize) -> Option<f64> {
        self.edges.iter().find(|e| e.src == src && e.dst == dst).map(|e| e.weight)
    }

    /// Dense `A` with `A[dst][src] = weight`.
    pub fn dense_adjacency(&self) -> Tensor {
        let mut a = Tensor::zeros(self.n_nodes, self.n_nodes);
        for e in &self.edges {
            a.set(e.dst, e.src, e.weight);
        }
        a
    }

    /// Out-neighbour lists over edges with positive weight.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_nodes];
        for e in self.edges.iter().filter(|e| e.weight > 0.0) {
            out[e.src].push(e.dst);
        }
        for list in &mut out {
            list.sort_unstable();
        }
        out
    }

    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_nodes];
        for e in self.edges.iter().filter(|e| e.weight > 0.0) {
            out[e.dst].push(e.src);
        }
        for list in &mut out {
            list.sort_unstable();
        }
        out
    }

    fn sort_edges(&mut self) {
        self.edges.sort_by(|a, b| (a.src, a.dst).cmp(&(b.src, b.dst)));
    }
}

/// A snapshot sequence with a `T x N x d` node-signal cube.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeEvolvingGraph {
    pub snapshots: Vec<GraphSnapshot>,
    pub features: Tensor,
}

impl TimeEvolvingGraph {
    pub fn n_steps(&self) -> usize {
        self.snapshots.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.n_nodes)
    }

    pub fn n_channels(&self) -> usize {
        self.features.shape().get(2).copied().unwrap_or(0)
    }

    /// `N x d` signals at step `t`.
    pub fn features_at(&self, t: usize) -> Tensor {
        let shape = self.features.shape();
        let (n, d) = (shape[1], shape[2]);
        let start = t * n * d;
        Tensor::matrix(n, d, self.features.data()[start..start + n * d].to_vec())
            .expect("feature slice")
    }

    /// Copy whose every snapshot is replaced by `snapshot` (re-timed).
    pub fn with_constant_structure(&self, snapshot: &GraphSnapshot) -> TimeEvolvingGraph {
        let snapshots = (0..self.n_steps())
            .map(|t| GraphSnapshot { t, ..snapshot.clone() })
            .collect();
        TimeEvolvingGraph { snapshots, features: self.features.clone() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// `D̂⁻¹Â`
    #[default]
    Asymmetric,
    /// `D̂^{-1/2} Â D̂^{-1/2}`
    Symmetric,
}

impl fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormalizationMode::Asymmetric => "asymmetric",
            NormalizationMode::Symmetric => "symmetric",
        })
    }
}

/// Normalized incoming and outgoing operators for one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedPair {
    pub a_in: Arc<Csr>,
    pub a_out: Arc<Csr>,
    pub mode: NormalizationMode,
}

impl NormalizedPair {
    /// `Ã_in = Ã_out = I`; what every snapshot reduces to with no edges.
    pub fn identity(n: usize, mode: NormalizationMode) -> Self {
        let eye = Arc::new(Csr::identity(n));
        NormalizedPair { a_in: Arc::clone(&eye), a_out: eye, mode }
    }

    pub fn n_nodes(&self) -> usize {
        self.a_in.rows()
    }
}

pub fn normalize_snapshot(snapshot: &GraphSnapshot, mode: NormalizationMode) -> Result<NormalizedPair> {
    snapshot.check()?;
    let n = snapshot.n_nodes;
    let mut incoming: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    let mut outgoing = incoming.clone();
    for e in &snapshot.edges {
        incoming.push((e.dst, e.src, e.weight));
        outgoing.push((e.src, e.dst, e.weight));
    }
    Ok(NormalizedPair {
        a_in: Arc::new(normalize(Csr::from_triplets(n, n, &incoming), mode)),
        a_out: Arc::new(normalize(Csr::from_triplets(n, n, &outgoing), mode)),
        mode,
    })
}

fn normalize(a_hat: Csr, mode: NormalizationMode) -> Csr {
    let n = a_hat.rows();
    let degree: Vec<f64> = (0..n).map(|r| a_hat.row_sum(r)).collect();
    let mut triplets = Vec::with_capacity(a_hat.nnz());
    for r in 0..n {
        for (c, v) in a_hat.row(r) {
            let scaled = match mode {
                NormalizationMode::Asymmetric => v / degree[r],
                NormalizationMode::Symmetric => v / (degree[r].sqrt() * degree[c].sqrt()),
            };
            triplets.push((r, c, scaled));
        }
    }
    Csr::from_triplets(n, n, &triplets)
}

/// Normalizes every snapshot; output order follows the input.
pub fn normalize_all(
    graph: &TimeEvolvingGraph,
    mode: NormalizationMode,
    exec: Execution,
) -> Result<Vec<Arc<NormalizedPair>>> {
    exec.map(&graph.snapshots, |s| normalize_snapshot(s, mode).map(Arc::new))
        .into_iter()
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Event {
    /// Removes every edge incident to the node.
    Closure { node: usize },
    /// Halves the weight of every edge incident to the node.
    Congestion { node: usize },
    LinkFailure { src: usize, dst: usize },
    LinkRecovery { src: usize, dst: usize },
    /// Service alarm raised on a node; carries no structural change.
    Alarm { node: usize },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Closure { .. } => "closure",
            Event::Congestion { .. } => "congestion",
            Event::LinkFailure { .. } => "link_failure",
            Event::LinkRecovery { .. } => "link_recovery",
            Event::Alarm { .. } => "alarm",
        }
    }

    fn node_ids(&self) -> [usize; 2] {
        match *self {
            Event::Closure { node } | Event::Congestion { node } | Event::Alarm { node } => [node, node],
            Event::LinkFailure { src, dst } | Event::LinkRecovery { src, dst } => [src, dst],
        }
    }
}

/// Line format of `events.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: usize,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<[usize; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimedEvent {
    pub t: usize,
    pub event: Event,
}

impl From<&TimedEvent> for EventRecord {
    fn from(e: &TimedEvent) -> Self {
        let (node, edge) = match e.event {
            Event::Closure { node } | Event::Congestion { node } | Event::Alarm { node } => (Some(node), None),
            Event::LinkFailure { src, dst } | Event::LinkRecovery { src, dst } => (None, Some([src, dst])),
        };
        EventRecord { t: e.t, kind: e.event.kind().to_owned(), node, edge }
    }
}

impl TryFrom<&EventRecord> for TimedEvent {
    type Error = Error;

    fn try_from(r: &EventRecord) -> Result<Self> {
        let node = || r.node.ok_or_else(|| Error::InvalidConfig(format!("`{}` event needs `node`", r.kind)));
        let edge = || r.edge.ok_or_else(|| Error::InvalidConfig(format!("`{}` event needs `edge`", r.kind)));
        let event = match r.kind.as_str() {
            "closure" => Event::Closure { node: node()? },
            "congestion" => Event::Congestion { node: node()? },
            "alarm" => Event::Alarm { node: node()? },
            "link_failure" => {
                let [src, dst] = edge()?;
                Event::LinkFailure { src, dst }
            }
            "link_recovery" => {
                let [src, dst] = edge()?;
                Event::LinkRecovery { src, dst }
            }
            other => return Err(Error::UnknownEventKind(other.to_owned())),
        };
        Ok(TimedEvent { t: r.t, event })
    }
}

/// Applies `events` in order to a copy of `base`. Alarms leave the
/// structure untouched.
pub fn evolve_adjacency(base: &GraphSnapshot, events: &[Event]) -> Result<GraphSnapshot> {
    let mut out = base.clone();
    for ev in events {
        for id in ev.node_ids() {
            if id >= base.n_nodes {
                return Err(Error::NodeOutOfRange { id, n_nodes: base.n_nodes });
            }
        }
        match *ev {
            Event::Closure { node } => out.edges.retain(|e| e.src != node && e.dst != node),
            Event::Congestion { node } => {
                for e in out.edges.iter_mut().filter(|e| e.src == node || e.dst == node) {
                    e.weight *= 0.5;
                }
            }
            Event::LinkFailure { src, dst } => out.edges.retain(|e| !(e.src == src && e.dst == dst)),
            Event::LinkRecovery { src, dst } => {
                match out.edges.iter_mut().find(|e| e.src == src && e.dst == dst) {
                    Some(e) => e.weight = 1.0,
                    None => out.edges.push(Edge::new(src, dst, 1.0)),
                }
            }
            Event::Alarm { .. } => {}
        }
    }
    if events.iter().any(|e| matches!(e, Event::LinkRecovery { .. })) {
        out.sort_edges();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Finding {
    NodeCount { t: usize, expected: usize, found: usize },
    TimeIndex { position: usize, found: usize },
    LengthMismatch { snapshots: usize, feature_steps: usize },
    FeatureNodes { expected: usize, found: usize },
    FeatureShape(Vec<usize>),
    FeatureRange { t: usize, node: usize, channel: usize, value: f64 },
    DanglingId { t: usize, src: usize, dst: usize },
    BadWeight { t: usize, src: usize, dst: usize, weight: f64 },
    DuplicateEdge { t: usize, src: usize, dst: usize },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::NodeCount { t, expected, found } => {
                write!(f, "snapshot {t} has {found} nodes, expected {expected}")
            }
            Finding::TimeIndex { position, found } => {
                write!(f, "snapshot at position {position} carries time index {found}")
            }
            Finding::LengthMismatch { snapshots, feature_steps } => {
                write!(f, "{snapshots} snapshots but {feature_steps} feature steps")
            }
            Finding::FeatureNodes { expected, found } => {
                write!(f, "features cover {found} nodes, expected {expected}")
            }
            Finding::FeatureShape(s) => write!(f, "features must be T x N x d, found {s:?}"),
            Finding::FeatureRange { t, node, channel, value } => {
                write!(f, "feature (t={t}, node={node}, channel={channel}) = {value} outside [0, 1]")
            }
            Finding::DanglingId { t, src, dst } => write!(f, "snapshot {t}: edge {src}->{dst} references a missing node"),
            Finding::BadWeight { t, src, dst, weight } => write!(f, "snapshot {t}: edge {src}->{dst} has weight {weight}"),
            Finding::DuplicateEdge { t, src, dst } => write!(f, "snapshot {t}: duplicate edge {src}->{dst}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub n_steps: usize,
    pub n_nodes: usize,
    pub n_channels: usize,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.findings.is_empty()
    }
}

pub fn validate_sequence(graph: &TimeEvolvingGraph) -> ValidationReport {
    let n = graph.n_nodes();
    let mut report = ValidationReport { n_steps: graph.n_steps(), n_nodes: n, ..Default::default() };
    for (pos, s) in graph.snapshots.iter().enumerate() {
        if s.n_nodes != n {
            report.findings.push(Finding::NodeCount { t: s.t, expected: n, found: s.n_nodes });
        }
        if s.t != pos {
            report.findings.push(Finding::TimeIndex { position: pos, found: s.t });
        }
        let mut seen = HashSet::new();
        for e in &s.edges {
            if e.src >= s.n_nodes || e.dst >= s.n_nodes {
                report.findings.push(Finding::DanglingId { t: s.t, src: e.src, dst: e.dst });
            }
            if !(e.weight >= 0.0) || !e.weight.is_finite() {
                report.findings.push(Finding::BadWeight { t: s.t, src: e.src, dst: e.dst, weight: e.weight });
            }
            if !seen.insert((e.src, e.dst)) {
                report.findings.push(Finding::DuplicateEdge { t: s.t, src: e.src, dst: e.dst });
            }
        }
    }
    let shape = graph.features.shape();
    if shape.len() != 3 {
        report.findings.push(Finding::FeatureShape(shape.to_vec()));
        return report;
    }
    let (steps, nodes, d) = (shape[0], shape[1], shape[2]);
    report.n_channels = d;
    if steps != graph.n_steps() {
        report.findings.push(Finding::LengthMismatch { snapshots: graph.n_steps(), feature_steps: steps });
    }
    if nodes != n {
        report.findings.push(Finding::FeatureNodes { expected: n, found: nodes });
    }
    for (i, &value) in graph.features.data().iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            let (t, rem) = (i / (nodes * d), i % (nodes * d));
            report.findings.push(Finding::FeatureRange { t, node: rem / d, channel: rem % d, value });
        }
    }
    report
}
