//! Directory-level steps behind the command-line tool.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, normalize_features, read_dataset, read_raw, split_times, write_dataset, write_features,
    BuildMeta, Dataset, GeneratorConfig, LabelRule, PathInstance, SplitFractions, FEATURES_FILE, RAW_FEATURES_FILE,
};
use crate::error::{Error, Result};
use crate::eval::{benchmark_csv, benchmark_variants, evaluate as evaluate_split, MetricsReport, Variant, VariantResult};
use crate::exec::Execution;
use crate::graph::{Edge, GraphSnapshot, TimeEvolvingGraph, TimedEvent};
use crate::lrgcn::Window;
use crate::model::{
    export_attention as attention_rows, forward, forward_on_tape, load_checkpoint, loss_on_tape, predict_instances,
    save_checkpoint, Checkpoint, ModelConfig, PreparedGraph,
};
use crate::numerics::gradcheck::{check_all, GradCheckReport};
use crate::numerics::{ComputeGraph, Tensor};
use crate::train::{fit, history_csv, init_params, TrainConfig, TrainingData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub n_nodes: usize,
    pub n_steps: usize,
    pub n_paths: usize,
    pub n_events: usize,
    pub tuned_rate: f64,
    pub positive_fraction: f64,
}

/// Generates a synthetic dataset into `out`. The stored generator config
/// carries the tuned rate, so regenerating from it reproduces the output.
pub fn generate(config: &GeneratorConfig, out: &Path) -> Result<GenerateSummary> {
    let data = generate_synthetic(config)?;
    let mut stored = config.clone();
    match config.rule {
        LabelRule::Telecom { .. } => stored.failure_rate = data.tuned_rate,
        LabelRule::Traffic => stored.congestion_rate = data.tuned_rate,
    }
    crate::data::write_raw(out, &data.graph, &data.paths, &data.events, Some(&stored))?;
    Ok(GenerateSummary {
        n_nodes: config.n_nodes,
        n_steps: config.n_steps,
        n_paths: data.paths.len(),
        n_events: data.events.len(),
        tuned_rate: data.tuned_rate,
        positive_fraction: data.positive_fraction,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildOptions {
    pub window: usize,
    pub horizon: usize,
    pub rule: LabelRule,
    pub fractions: SplitFractions,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { window: 12, horizon: 3, rule: LabelRule::default(), fractions: SplitFractions::default() }
    }
}

/// Labels, splits and scales raw data in memory.
pub fn build_dataset(
    graph: &TimeEvolvingGraph,
    paths: Vec<Vec<usize>>,
    events: Vec<TimedEvent>,
    options: &BuildOptions,
    exec: Execution,
) -> Result<Dataset> {
    let (validation_start, test_start) = split_times(options.window, options.horizon, graph.n_steps(), options.fractions)?;
    let instances = crate::data::build_instances(
        graph.n_steps(),
        graph.n_nodes(),
        &paths,
        &events,
        options.window,
        options.horizon,
        options.rule,
        options.fractions,
        exec,
    )?
    .all();
    let (scaled, scaling) = normalize_features(graph, validation_start);
    let meta = BuildMeta {
        window: options.window,
        horizon: options.horizon,
        rule: options.rule,
        fractions: options.fractions,
        validation_start,
        test_start,
        scaling,
    };
    Ok(Dataset { graph: scaled, paths, events, instances, meta })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub instances: usize,
    pub positives: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Adds labels and build metadata to a generated directory and scales
/// `features.csv`, keeping the unscaled copy alongside. Rerunning uses the
/// unscaled copy, so repeated builds agree.
pub fn build(dir: &Path, options: &BuildOptions, exec: Execution) -> Result<BuildSummary> {
    let (graph, paths, events) = read_raw(dir)?;
    let dataset = build_dataset(&graph, paths, events, options, exec)?;
    let raw = dir.join(RAW_FEATURES_FILE);
    if !raw.exists() {
        write_features(&raw, &graph.features)?;
    }
    write_dataset(dir, &dataset)?;
    debug_assert!(dir.join(FEATURES_FILE).exists());
    let split = dataset.split();
    Ok(BuildSummary {
        instances: dataset.instances.len(),
        positives: dataset.instances.iter().filter(|i| i.label == 1).count(),
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_macro_f1: f64,
}

/// Trains on `dir` and writes the checkpoint (and optionally the history).
/// Window and horizon always come from the built dataset.
pub fn train(
    dir: &Path,
    model: &ModelConfig,
    train: &TrainConfig,
    checkpoint: &Path,
    history: Option<&Path>,
    exec: Execution,
) -> Result<TrainSummary> {
    let dataset = read_dataset(dir)?;
    let model = ModelConfig {
        window: dataset.meta.window,
        horizon: dataset.meta.horizon,
        signals: dataset.graph.n_channels(),
        ..model.clone()
    };
    let split = dataset.split();
    let prepared = PreparedGraph::new(&dataset.graph, &model, exec)?;
    let data = TrainingData { prepared: &prepared, paths: &dataset.paths };
    let fitted = fit(&model, train, data, &split.train, &split.validation, exec)?;
    save_checkpoint(&fitted.state.params, &model, Some(train), checkpoint)?;
    if let Some(path) = history {
        fs::write(path, history_csv(&fitted.history)).map_err(|e| Error::io(path, e))?;
    }
    let best = fitted.history.iter().find(|r| r.epoch == fitted.state.best_epoch);
    Ok(TrainSummary {
        epochs: fitted.history.len(),
        best_epoch: fitted.state.best_epoch,
        best_val_loss: fitted.state.best_val_loss,
        val_macro_f1: best.map_or(0.0, |r| r.val_macro_f1),
    })
}

fn load_for(dir: &Path, checkpoint: &Path, exec: Execution) -> Result<(Dataset, Checkpoint, PreparedGraph)> {
    let dataset = read_dataset(dir)?;
    let ckpt = load_checkpoint(checkpoint)?;
    if ckpt.config.window != dataset.meta.window {
        return Err(Error::InvalidConfig(format!(
            "model window {} does not match dataset window {}",
            ckpt.config.window, dataset.meta.window
        )));
    }
    let prepared = PreparedGraph::new(&dataset.graph, &ckpt.config, exec)?;
    Ok((dataset, ckpt, prepared))
}

pub fn metrics_csv(rows: &[(&str, MetricsReport)]) -> String {
    let mut out = String::from("split,tp,fp,fn,tn,precision,recall,f1_pos,f1_neg,macro_f1\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{},{}\n",
            r.tp, r.fp, r.fn_, r.tn, r.precision, r.recall, r.f1_pos, r.f1_neg, r.macro_f1
        ));
    }
    out
}

/// Test-split metrics of a checkpoint, written as a one-row CSV.
pub fn evaluate(dir: &Path, checkpoint: &Path, report: &Path, exec: Execution) -> Result<MetricsReport> {
    let (dataset, ckpt, prepared) = load_for(dir, checkpoint, exec)?;
    let split = dataset.split();
    let metrics = evaluate_split(&ckpt.params, &ckpt.config, &prepared, &dataset.paths, &split.test, exec)?;
    fs::write(report, metrics_csv(&[("test", metrics)])).map_err(|e| Error::io(report, e))?;
    Ok(metrics)
}

/// Predictions over the test split for the selected paths (all when
/// `path_ids` is `None`). Returns the number of rows written.
pub fn predict(
    dir: &Path,
    checkpoint: &Path,
    path_ids: Option<&[usize]>,
    out: &Path,
    exec: Execution,
) -> Result<usize> {
    let (dataset, ckpt, prepared) = load_for(dir, checkpoint, exec)?;
    if let Some(ids) = path_ids {
        if let Some(&bad) = ids.iter().find(|&&id| id >= dataset.paths.len()) {
            return Err(Error::InvalidConfig(format!("unknown path id {bad}")));
        }
    }
    let selected: Vec<PathInstance> = dataset
        .split()
        .test
        .into_iter()
        .filter(|i| path_ids.is_none_or(|ids| ids.contains(&i.path_id)))
        .collect();
    let preds = predict_instances(&ckpt.params, &ckpt.config, &prepared, &dataset.paths, &selected, exec)?;
    let mut text = String::from("t,path_id,prob_negative,prob_positive,predicted,label\n");
    for (inst, p) in selected.iter().zip(&preds) {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            inst.t,
            inst.path_id,
            p.probabilities[0],
            p.probabilities[1],
            p.classify(ckpt.config.decision_threshold),
            inst.label
        ));
    }
    fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok(preds.len())
}

/// Per-position attention of every path at prediction time `t` (default:
/// the last labelled time). Returns the number of rows written.
pub fn export_attention(dir: &Path, checkpoint: &Path, t: Option<usize>, out: &Path, exec: Execution) -> Result<usize> {
    let (dataset, ckpt, prepared) = load_for(dir, checkpoint, exec)?;
    let last = dataset.instances.iter().map(|i| i.t).max().ok_or(Error::EmptySplit("test"))?;
    let t = t.unwrap_or(last);
    let window = prepared.window(t, ckpt.config.window)?;
    let ids: Vec<&[usize]> = dataset.paths.iter().map(Vec::as_slice).collect();
    let preds = forward(&ckpt.params, &ckpt.config, &window, &ids)?;
    let keyed: Vec<(usize, &[usize])> = ids.iter().copied().enumerate().collect();
    let rows = attention_rows(&preds, &keyed);
    let mut text = String::from("path_id,position,node_id,importance\n");
    for r in &rows {
        text.push_str(&format!("{},{},{},{}\n", r.path_id, r.position, r.node_id, r.importance));
    }
    fs::write(out, text).map_err(|e| Error::io(out, e))?;
    Ok(rows.len())
}

/// Trains every variant on `dir` for each seed and writes the averaged table.
pub fn benchmark(
    dir: &Path,
    model: &ModelConfig,
    train: &TrainConfig,
    seeds: &[u64],
    out: &Path,
    exec: Execution,
) -> Result<Vec<VariantResult>> {
    let dataset = read_dataset(dir)?;
    let model = ModelConfig { signals: dataset.graph.n_channels(), ..model.clone() };
    let results = benchmark_variants(&dataset, &model, train, &Variant::ALL, seeds, exec)?;
    fs::write(out, benchmark_csv(&results)).map_err(|e| Error::io(out, e))?;
    Ok(results)
}

/// Sizes of the small end-to-end instance used for gradient checking.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        window: 4,
        horizon: 1,
        signals: 2,
        hop: 5,
        units: 4,
        path_units: 4,
        attention_units: 3,
        views: 2,
        ..ModelConfig::default()
    }
}

/// A random 6-node window with per-step structure and two 3-node paths.
pub fn tiny_problem(seed: u64) -> (Window, Vec<Vec<usize>>, Vec<usize>) {
    let config = tiny_config();
    let n = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let snapshots: Vec<GraphSnapshot> = (0..config.window)
        .map(|t| {
            let mut edges = Vec::new();
            for src in 0..n {
                for dst in 0..n {
                    if src != dst && rng.random::<f64>() < 0.35 {
                        edges.push(Edge::new(src, dst, rng.random_range(0.2..1.5)));
                    }
                }
            }
            GraphSnapshot::new(n, edges, t).expect("valid random snapshot")
        })
        .collect();
    let features: Vec<f64> = (0..config.window * n * config.signals).map(|_| rng.random_range(-1.0..1.0)).collect();
    let graph = TimeEvolvingGraph {
        snapshots,
        features: Tensor::new(vec![config.window, n, config.signals], features).expect("feature cube"),
    };
    let prepared = PreparedGraph::new(&graph, &config, Execution::Sequential).expect("tiny graph");
    let window = prepared.window(config.window - 1, config.window).expect("full window");
    let paths = vec![vec![0, 2, 5], vec![4, 1, 3]];
    (window, paths, vec![1, 0])
}

/// Analytic against central-difference gradients for every parameter
/// coordinate of the tiny instance.
pub fn gradient_check(seed: u64, exec: Execution) -> Result<GradCheckReport> {
    let config = tiny_config();
    let params = init_params(&config, seed)?;
    let (window, paths, labels) = tiny_problem(seed);
    let ids: Vec<&[usize]> = paths.iter().map(Vec::as_slice).collect();
    let layout = params.layout;
    let loss_fn = |values: &crate::numerics::ParamSet| -> Result<f64> {
        let mut g = ComputeGraph::new(values);
        let outputs = forward_on_tape(&mut g, &layout, &config, &window, &ids)?;
        let root = loss_on_tape(&mut g, &outputs, &labels)?;
        Ok(g.value(root).data()[0])
    };
    let analytic = |values: &crate::numerics::ParamSet| {
        let mut g = ComputeGraph::new(values);
        let outputs = forward_on_tape(&mut g, &layout, &config, &window, &ids)?;
        let root = loss_on_tape(&mut g, &outputs, &labels)?;
        g.gradient(root)
    };
    check_all(loss_fn, analytic, &params.values, exec)
}
