//! Binary classification metrics and the variant benchmark.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PathInstance};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::NormalizationMode;
use crate::lrgcn::GraphMode;
use crate::model::{predict_instances, Adjacency, ModelConfig, ModelParams, PreparedGraph};
use crate::train::{fit, EpochRecord, TrainConfig, TrainingData};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1_pos: f64,
    pub f1_neg: f64,
    pub macro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl MetricsReport {
    /// Report from confusion counts; undefined ratios are 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1_pos = harmonic(precision, recall);
        let f1_neg = harmonic(ratio(tn, tn + fn_), ratio(tn, tn + fp));
        MetricsReport { tp, fp, fn_, tn, precision, recall, f1_pos, f1_neg, macro_f1: (f1_pos + f1_neg) / 2.0 }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Metrics of predicted classes against labels; class 1 is positive.
pub fn compute_metrics(predicted: &[usize], labels: &[usize]) -> Result<MetricsReport> {
    if predicted.len() != labels.len() {
        return Err(Error::LengthMismatch { predictions: predicted.len(), labels: labels.len() });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in predicted.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            (0, 0) => tn += 1,
            _ => return Err(Error::InvalidConfig(format!("non-binary class pair ({p}, {y})"))),
        }
    }
    Ok(MetricsReport::from_counts(tp, fp, fn_, tn))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    EvolvingAsymmetric,
    StaticAsymmetric,
    /// `A = I`: per-node recurrences with no graph coupling.
    IdentityAdjacency,
    EvolvingSymmetric,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::EvolvingAsymmetric, Variant::StaticAsymmetric, Variant::IdentityAdjacency, Variant::EvolvingSymmetric];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EvolvingAsymmetric => "evolving_asymmetric",
            Variant::StaticAsymmetric => "static_asymmetric",
            Variant::IdentityAdjacency => "identity_adjacency",
            Variant::EvolvingSymmetric => "evolving_symmetric",
        }
    }

    pub fn configure(self, base: &ModelConfig) -> ModelConfig {
        let (graph_mode, normalization, adjacency) = match self {
            Variant::EvolvingAsymmetric => (GraphMode::Evolving, NormalizationMode::Asymmetric, Adjacency::Observed),
            Variant::StaticAsymmetric => (GraphMode::Static, NormalizationMode::Asymmetric, Adjacency::Observed),
            Variant::IdentityAdjacency => (GraphMode::Evolving, NormalizationMode::Asymmetric, Adjacency::Identity),
            Variant::EvolvingSymmetric => (GraphMode::Evolving, NormalizationMode::Symmetric, Adjacency::Observed),
        };
        ModelConfig { graph_mode, normalization, adjacency, ..base.clone() }
    }
}

/// One training run and its test-split evaluation.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub report: MetricsReport,
}

/// Classes predicted for `instances` at the configured threshold.
pub fn predict_classes(
    params: &ModelParams,
    config: &ModelConfig,
    prepared: &PreparedGraph,
    paths: &[Vec<usize>],
    instances: &[PathInstance],
    exec: Execution,
) -> Result<Vec<usize>> {
    let preds = predict_instances(params, config, prepared, paths, instances, exec)?;
    Ok(preds.iter().map(|p| p.classify(config.decision_threshold)).collect())
}

pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    prepared: &PreparedGraph,
    paths: &[Vec<usize>],
    instances: &[PathInstance],
    exec: Execution,
) -> Result<MetricsReport> {
    let predicted = predict_classes(params, config, prepared, paths, instances, exec)?;
    let labels: Vec<usize> = instances.iter().map(|i| i.label).collect();
    compute_metrics(&predicted, &labels)
}

/// Trains on the dataset's train split with `seed` for both initialization
/// and shuffling, then scores the test split.
pub fn train_and_test(
    dataset: &Dataset,
    model: &ModelConfig,
    train: &TrainConfig,
    seed: u64,
    exec: Execution,
) -> Result<RunOutcome> {
    let model = ModelConfig { seed, window: dataset.meta.window, horizon: dataset.meta.horizon, ..model.clone() };
    let train = TrainConfig { seed, ..train.clone() };
    let split = dataset.split();
    if split.test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let prepared = PreparedGraph::new(&dataset.graph, &model, exec)?;
    let data = TrainingData { prepared: &prepared, paths: &dataset.paths };
    let fitted = fit(&model, &train, data, &split.train, &split.validation, exec)?;
    let report = evaluate(&fitted.state.params, &model, &prepared, &dataset.paths, &split.test, exec)?;
    Ok(RunOutcome { params: fitted.state.params, history: fitted.history, report })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub runs: Vec<MetricsReport>,
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
}

impl VariantResult {
    fn from_runs(variant: Variant, runs: Vec<MetricsReport>) -> Self {
        let k = runs.len().max(1) as f64;
        let mean = |f: fn(&MetricsReport) -> f64| runs.iter().map(f).sum::<f64>() / k;
        VariantResult {
            variant,
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            macro_f1: mean(|r| r.macro_f1),
            runs,
        }
    }
}

/// Trains and tests each variant once per seed under identical budgets and
/// reports seed-averaged metrics. Variants run one after another.
pub fn benchmark_variants(
    dataset: &Dataset,
    base: &ModelConfig,
    train: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<VariantResult>> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    variants
        .iter()
        .map(|&variant| {
            let config = variant.configure(base);
            let runs = seeds
                .iter()
                .map(|&seed| train_and_test(dataset, &config, train, seed, exec).map(|o| o.report))
                .collect::<Result<Vec<_>>>()?;
            Ok(VariantResult::from_runs(variant, runs))
        })
        .collect()
}

pub fn benchmark_csv(results: &[VariantResult]) -> String {
    let mut out = String::from("variant,precision,recall,macro_f1\n");
    for r in results {
        out.push_str(&format!("{},{},{},{}\n", r.variant.name(), r.precision, r.recall, r.macro_f1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_of_each_cell() {
        let r = compute_metrics(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_, r.tn), (1, 1, 1, 1));
        for v in [r.precision, r.recall, r.f1_pos, r.f1_neg, r.macro_f1] {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn perfect_and_degenerate() {
        let r = compute_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!([r.precision, r.recall, r.f1_pos, r.f1_neg, r.macro_f1], [1.0; 5]);

        let r = compute_metrics(&[0, 0, 0], &[0, 0, 0]).unwrap();
        assert_eq!((r.precision, r.f1_pos), (0.0, 0.0));
        assert_eq!(r.macro_f1, r.f1_neg / 2.0);

        assert!(compute_metrics(&[0], &[0, 1]).is_err());
        assert!(compute_metrics(&[2], &[0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let runs = vec![MetricsReport::from_counts(1, 1, 1, 1), MetricsReport::from_counts(2, 0, 0, 2)];
        let r = VariantResult::from_runs(Variant::StaticAsymmetric, runs);
        assert_eq!(r.macro_f1, 0.75);
        assert_eq!(benchmark_csv(&[r]), "variant,precision,recall,macro_f1\nstatic_asymmetric,0.75,0.75,0.75\n");
    }
}
