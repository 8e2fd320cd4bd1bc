//! Determinism of training and prediction, agreement of the execution modes,
//! and checkpoint round trips.

use lrgcn_core::data::{generate_synthetic, Dataset, GeneratorConfig};
use lrgcn_core::eval::train_and_test;
use lrgcn_core::model::{
    checkpoint_json, load_checkpoint, parse_checkpoint, predict_instances, save_checkpoint, ModelConfig, PreparedGraph,
};
use lrgcn_core::pipeline::{build_dataset, BuildOptions};
use lrgcn_core::train::{batch_loss_and_gradient, init_params, TrainConfig, TrainingData};
use lrgcn_core::{Error, Execution};

fn dataset() -> Dataset {
    let config = GeneratorConfig { n_nodes: 12, n_steps: 90, n_paths: 6, max_path_len: 8, window: 5, horizon: 2, ..GeneratorConfig::default() };
    let data = generate_synthetic(&config).unwrap();
    let options = BuildOptions { window: 5, horizon: 2, ..BuildOptions::default() };
    build_dataset(&data.graph, data.paths, data.events, &options, Execution::Parallel).unwrap()
}

fn model() -> ModelConfig {
    ModelConfig { window: 5, horizon: 2, hop: 6, units: 4, path_units: 4, attention_units: 5, views: 3, ..ModelConfig::default() }
}

fn train() -> TrainConfig {
    TrainConfig { max_epochs: 3, learning_rate: 1e-3, batch_size: 16, ..TrainConfig::default() }
}

#[test]
fn training_is_deterministic_and_mode_independent() {
    let ds = dataset();
    let a = train_and_test(&ds, &model(), &train(), 5, Execution::Parallel).unwrap();
    let b = train_and_test(&ds, &model(), &train(), 5, Execution::Parallel).unwrap();
    let c = train_and_test(&ds, &model(), &train(), 5, Execution::Sequential).unwrap();
    assert_eq!(a.params.values.tensors(), b.params.values.tensors());
    assert_eq!(a.params.values.tensors(), c.params.values.tensors());
    assert_eq!(a.history, c.history);
    assert_eq!(a.report, c.report);

    let other = train_and_test(&ds, &model(), &train(), 6, Execution::Parallel).unwrap();
    assert_ne!(a.params.values.tensors(), other.params.values.tensors());
}

#[test]
fn batch_gradients_agree_across_modes() {
    let ds = dataset();
    let config = model();
    let params = init_params(&config, 1).unwrap();
    let prepared = PreparedGraph::new(&ds.graph, &config, Execution::Parallel).unwrap();
    let data = TrainingData { prepared: &prepared, paths: &ds.paths };
    let batch: Vec<usize> = (0..40).map(|i| i * 7 % ds.instances.len()).collect();
    let par = batch_loss_and_gradient(&params, &config, data, &ds.instances, &batch, Execution::Parallel).unwrap();
    let seq = batch_loss_and_gradient(&params, &config, data, &ds.instances, &batch, Execution::Sequential).unwrap();
    assert_eq!(par.0.to_bits(), seq.0.to_bits());
    assert_eq!(par.1 .0, seq.1 .0);
}

#[test]
fn checkpoint_round_trip_preserves_predictions_bit_exactly() {
    let ds = dataset();
    let config = model();
    let params = init_params(&config, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&params, &config, Some(&train()), &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, config);
    assert_eq!(loaded.train, Some(train()));

    let prepared = PreparedGraph::new(&ds.graph, &config, Execution::Parallel).unwrap();
    let before = predict_instances(&params, &config, &prepared, &ds.paths, &ds.instances, Execution::Parallel).unwrap();
    let after =
        predict_instances(&loaded.params, &loaded.config, &prepared, &ds.paths, &ds.instances, Execution::Parallel).unwrap();
    assert_eq!(before, after);

    let again = checkpoint_json(&loaded.params, &loaded.config, loaded.train.as_ref()).unwrap();
    assert_eq!(again + "\n", std::fs::read_to_string(&path).unwrap());
}

#[test]
fn checkpoint_errors_are_distinguished() {
    let config = model();
    let params = init_params(&config, 0).unwrap();
    let text = checkpoint_json(&params, &config, None).unwrap();

    let bumped = text.replacen("\"version\":1", "\"version\":7", 1);
    assert!(matches!(parse_checkpoint(&bumped), Err(Error::VersionMismatch { found: 7, .. })));
    assert!(matches!(parse_checkpoint("{\"version\":1}"), Err(Error::MalformedCheckpoint(_))));
    let missing = tempfile::tempdir().unwrap().path().join("absent.json");
    assert!(matches!(load_checkpoint(&missing), Err(Error::MissingFile(_))));
}
