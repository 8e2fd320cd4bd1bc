//! End-to-end classifier: encode the window, embed each path, then a fully
//! connected layer and softmax over the classes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::PathInstance;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{normalize_all, NormalizationMode, NormalizedPair, TimeEvolvingGraph};
use crate::lrgcn::{encode_sequence, EncoderParams, GraphMode, Layer2Input, LrgcnCellParams, Window};
use crate::numerics::{ComputeGraph, ParamId, ParamSet, Tensor, Var};
use crate::sape::{embed_path, node_importance, SapeParams};
use crate::train::{path_of, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Which adjacency the encoder sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjacency {
    #[default]
    Observed,
    /// `Ã = I` everywhere; the encoder degenerates to per-node LSTMs.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Window length `M` in steps.
    pub window: usize,
    /// Prediction horizon `F` in steps.
    pub horizon: usize,
    /// Signal channels per node (`d`).
    pub signals: usize,
    /// Inner width of each two-hop convolution (`h`).
    pub hop: usize,
    /// Node encoding width (`u`).
    pub units: usize,
    /// Path sequence-encoder width (`v`).
    pub path_units: usize,
    /// Attention hidden width (`d_s`).
    pub attention_units: usize,
    /// Attention views (`r`).
    pub views: usize,
    pub classes: usize,
    pub normalization: NormalizationMode,
    pub graph_mode: GraphMode,
    pub adjacency: Adjacency,
    pub layer2_input: Layer2Input,
    pub sape_bias: bool,
    pub fc_bias: bool,
    /// Positive-class probability above which an instance is called positive.
    pub decision_threshold: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 12,
            horizon: 3,
            signals: 2,
            hop: 96,
            units: 8,
            path_units: 8,
            attention_units: 32,
            views: 8,
            classes: 2,
            normalization: NormalizationMode::Asymmetric,
            graph_mode: GraphMode::Evolving,
            adjacency: Adjacency::Observed,
            layer2_input: Layer2Input::HiddenSequence,
            sape_bias: true,
            fc_bias: true,
            decision_threshold: 0.5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("window", self.window),
            ("horizon", self.horizon),
            ("signals", self.signals),
            ("hop", self.hop),
            ("units", self.units),
            ("path_units", self.path_units),
            ("attention_units", self.attention_units),
            ("views", self.views),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("`{name}` must be positive")));
        }
        if self.classes != 2 {
            return Err(Error::InvalidConfig("`classes` must be 2".into()));
        }
        if !(0.0..1.0).contains(&self.decision_threshold) {
            return Err(Error::InvalidConfig("`decision_threshold` must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModelLayout {
    pub encoder: EncoderParams,
    pub sape: SapeParams,
    /// `(r·v) x C`
    pub fc_w: ParamId,
    pub fc_b: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub layout: ModelLayout,
    pub values: ParamSet,
}

impl ModelParams {
    /// All-zero parameters laid out for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut values = ParamSet::new();
        let c = config;
        let layer1 = LrgcnCellParams::register(&mut values, "layer1", c.signals, c.hop, c.units);
        let layer2_in = match c.layer2_input {
            Layer2Input::HiddenSequence => c.units,
            Layer2Input::RawFeatures => c.signals,
        };
        let layer2 = LrgcnCellParams::register(&mut values, "layer2", layer2_in, c.hop, c.units);
        let sape = SapeParams::register(&mut values, "sape", c.units, c.path_units, c.attention_units, c.views, c.sape_bias);
        let flat = c.views * c.path_units;
        let fc_w = values.insert("fc.w", Tensor::zeros(flat, c.classes), flat);
        let fc_b = c.fc_bias.then(|| values.insert("fc.b", Tensor::zeros(1, c.classes), 0));
        let encoder = EncoderParams { layer1, layer2, units: c.units, layer2_input: c.layer2_input };
        Ok(ModelParams { layout: ModelLayout { encoder, sape, fc_w, fc_b }, values })
    }
}

/// Per-step signals and normalized operators for a whole sequence, built once.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    features: Vec<Tensor>,
    adjacency: Vec<Arc<NormalizedPair>>,
    n_nodes: usize,
}

impl PreparedGraph {
    pub fn new(graph: &TimeEvolvingGraph, config: &ModelConfig, exec: Execution) -> Result<Self> {
        let n = graph.n_nodes();
        if graph.n_channels() != config.signals {
            return Err(Error::InvalidConfig(format!(
                "data has {} signal channels, model expects {}",
                graph.n_channels(),
                config.signals
            )));
        }
        let adjacency = match config.adjacency {
            Adjacency::Observed => normalize_all(graph, config.normalization, exec)?,
            Adjacency::Identity => {
                let eye = Arc::new(NormalizedPair::identity(n, config.normalization));
                vec![eye; graph.n_steps()]
            }
        };
        let features = (0..graph.n_steps()).map(|t| graph.features_at(t)).collect();
        Ok(PreparedGraph { features, adjacency, n_nodes: n })
    }

    pub fn n_steps(&self) -> usize {
        self.features.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// The `len` steps ending at (and including) `t`.
    pub fn window(&self, t: usize, len: usize) -> Result<Window> {
        if len == 0 {
            return Err(Error::EmptyWindow);
        }
        if t + 1 < len || t >= self.n_steps() {
            return Err(Error::WindowLength { expected: len, found: (t + 1).min(self.n_steps()) });
        }
        let span = t + 1 - len..t + 1;
        Ok(Window { features: self.features[span.clone()].to_vec(), adjacency: self.adjacency[span].to_vec() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    /// Argmax class; ties resolve to the lower index.
    pub predicted: usize,
    /// `r x m`
    pub attention: Tensor,
    /// `r x v`
    pub embedding: Tensor,
}

impl Prediction {
    pub fn positive_probability(&self) -> f64 {
        self.probabilities[1]
    }

    /// Positive iff the positive-class probability exceeds `threshold`.
    pub fn classify(&self, threshold: f64) -> usize {
        usize::from(self.positive_probability() > threshold)
    }
}

/// Tape outputs for one path.
#[derive(Clone, Copy, Debug)]
pub struct PathOutputs {
    pub probabilities: Var,
    pub attention: Var,
    pub embedding: Var,
}

/// Records the forward pass for one window and its paths on `g`.
pub fn forward_on_tape(
    g: &mut ComputeGraph<'_>,
    layout: &ModelLayout,
    config: &ModelConfig,
    window: &Window,
    paths: &[&[usize]],
) -> Result<Vec<PathOutputs>> {
    if window.len() != config.window {
        return Err(Error::WindowLength { expected: config.window, found: window.len() });
    }
    let omega = encode_sequence(g, &layout.encoder, window, config.graph_mode)?;
    let fc_w = g.param(layout.fc_w)?;
    let fc_b = layout.fc_b.map(|b| g.param(b)).transpose()?;
    paths
        .iter()
        .map(|ids| {
            let emb = embed_path(g, &layout.sape, omega, ids)?;
            let flat = g.flatten(emb.embedding)?;
            let mut logits = g.matmul(flat, fc_w)?;
            if let Some(b) = fc_b {
                logits = g.add_row(logits, b)?;
            }
            let probabilities = g.row_softmax(logits)?;
            Ok(PathOutputs { probabilities, attention: emb.attention, embedding: emb.embedding })
        })
        .collect()
}

/// Predictions for every path on one window; `Ω` is computed once.
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    window: &Window,
    paths: &[&[usize]],
) -> Result<Vec<Prediction>> {
    let mut g = ComputeGraph::new(&params.values);
    let outputs = forward_on_tape(&mut g, &params.layout, config, window, paths)?;
    Ok(outputs
        .iter()
        .map(|o| {
            let probabilities = g.value(o.probabilities).data().to_vec();
            Prediction {
                predicted: argmax(&probabilities),
                probabilities,
                attention: g.value(o.attention).clone(),
                embedding: g.value(o.embedding).clone(),
            }
        })
        .collect())
}

/// Predictions for arbitrary `(t, path)` instances, in input order. Each
/// distinct prediction time is encoded once.
pub fn predict_instances(
    params: &ModelParams,
    config: &ModelConfig,
    prepared: &PreparedGraph,
    paths: &[Vec<usize>],
    instances: &[PathInstance],
    exec: Execution,
) -> Result<Vec<Prediction>> {
    let mut by_time: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        by_time.entry(inst.t).or_default().push(i);
    }
    let groups: Vec<(usize, Vec<usize>)> = by_time.into_iter().collect();
    let results = exec.map(&groups, |(t, members)| {
        let window = prepared.window(*t, config.window)?;
        let ids = members
            .iter()
            .map(|&i| path_of(paths, instances[i].path_id))
            .collect::<Result<Vec<_>>>()?;
        forward(params, config, &window, &ids)
    });
    let mut out: Vec<Option<Prediction>> = vec![None; instances.len()];
    for ((_, members), preds) in groups.iter().zip(results) {
        for (&i, p) in members.iter().zip(preds?) {
            out[i] = Some(p);
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every instance predicted")).collect())
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `−Σ_j ln f_{y_j}` on the tape, summed over paths.
pub fn loss_on_tape(g: &mut ComputeGraph<'_>, outputs: &[PathOutputs], labels: &[usize]) -> Result<Var> {
    if outputs.len() != labels.len() {
        return Err(Error::LengthMismatch { predictions: outputs.len(), labels: labels.len() });
    }
    let mut total: Option<Var> = None;
    for (o, &y) in outputs.iter().zip(labels) {
        let classes = g.value(o.probabilities).cols();
        let one_hot = one_hot(y, classes)?;
        let one_hot = g.constant(one_hot)?;
        let logp = g.ln(o.probabilities)?;
        let picked = g.mul(one_hot, logp)?;
        let term = g.sum(picked)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let total = total.ok_or_else(|| Error::shape("loss", "no instances"))?;
    g.scale(total, -1.0)
}

fn one_hot(label: usize, classes: usize) -> Result<Tensor> {
    if label >= classes {
        return Err(Error::shape("loss", format!("label {label} for {classes} classes")));
    }
    let mut t = Tensor::zeros(1, classes);
    t.set(0, label, 1.0);
    Ok(t)
}

/// Summed cross-entropy of finished predictions, log clamped.
pub fn loss(predictions: &[Prediction], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { predictions: predictions.len(), labels: labels.len() });
    }
    let mut total = 0.0;
    for (p, &y) in predictions.iter().zip(labels) {
        let prob = p
            .probabilities
            .get(y)
            .ok_or_else(|| Error::shape("loss", format!("label {y} for {} classes", p.probabilities.len())))?;
        total -= prob.max(crate::numerics::LOG_CLAMP).ln();
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub path_id: usize,
    pub position: usize,
    pub node_id: usize,
    pub importance: f64,
}

/// One row per `(path, position)` with the view-averaged attention, ordered
/// by path id then position.
pub fn export_attention(predictions: &[Prediction], paths: &[(usize, &[usize])]) -> Vec<AttentionRow> {
    let mut rows: Vec<AttentionRow> = predictions
        .iter()
        .zip(paths)
        .flat_map(|(p, &(path_id, ids))| {
            node_importance(&p.attention)
                .into_iter()
                .zip(ids)
                .enumerate()
                .map(move |(position, (importance, &node_id))| AttentionRow { path_id, position, node_id, importance })
        })
        .collect();
    rows.sort_by_key(|r| (r.path_id, r.position));
    rows
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: CheckpointConfig,
    params: BTreeMap<String, ParamRecord>,
}

pub fn checkpoint_json(params: &ModelParams, config: &ModelConfig, train: Option<&TrainConfig>) -> Result<String> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config: CheckpointConfig { model: config.clone(), train: train.cloned() },
        params: params
            .values
            .iter()
            .map(|(name, t)| (name.to_owned(), ParamRecord { shape: t.shape().to_vec(), data: t.data().to_vec() }))
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn save_checkpoint(
    params: &ModelParams,
    config: &ModelConfig,
    train: Option<&TrainConfig>,
    path: &Path,
) -> Result<()> {
    let mut text = checkpoint_json(params, config, train)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub struct Checkpoint {
    pub params: ModelParams,
    pub config: ModelConfig,
    pub train: Option<TrainConfig>,
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let raw: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::MalformedCheckpoint("missing `version`".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::VersionMismatch { expected: CHECKPOINT_VERSION, found: version as u32 });
    }
    let file: CheckpointFile =
        serde_json::from_value(raw).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    let mut params = ModelParams::zeros(&file.config.model)?;
    if file.params.len() != params.values.len() {
        return Err(Error::MalformedCheckpoint(format!(
            "{} parameters in file, configuration needs {}",
            file.params.len(),
            params.values.len()
        )));
    }
    for id in params.values.ids().collect::<Vec<_>>() {
        let name = params.values.name(id).to_owned();
        let record = file
            .params
            .get(&name)
            .ok_or_else(|| Error::MalformedCheckpoint(format!("missing parameter `{name}`")))?;
        let tensor = Tensor::new(record.shape.clone(), record.data.clone())
            .map_err(|e| Error::shape("checkpoint", format!("`{name}`: {e}")))?;
        if !tensor.same_shape(params.values.get(id)) {
            return Err(Error::shape(
                "checkpoint",
                format!("`{name}` has shape {:?}, configuration needs {:?}", tensor.shape(), params.values.get(id).shape()),
            ));
        }
        *params.values.get_mut(id) = tensor;
    }
    Ok(Checkpoint { params, config: file.config.model, train: file.config.train })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_owned()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}
