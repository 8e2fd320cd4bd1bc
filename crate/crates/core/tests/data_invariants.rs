//! Generated and built datasets: structure, labels, splits, scaling and
//! file round trips.

use std::collections::HashSet;

use proptest::prelude::*;

use lrgcn_core::data::{
    derive_snapshots, generate_synthetic, label_for, read_dataset, read_raw, split_times, write_dataset, write_raw,
    GeneratorConfig, LabelRule, SplitFractions,
};
use lrgcn_core::pipeline::{build, build_dataset, BuildOptions};
use lrgcn_core::Execution;

fn config_strategy() -> impl Strategy<Value = GeneratorConfig> {
    (8usize..20, 60usize..120, 2usize..8, any::<u64>(), prop_oneof![Just(0usize), Just(1usize)], 0usize..3).prop_map(
        |(n_nodes, n_steps, n_paths, seed, depth, hubs)| GeneratorConfig {
            n_nodes,
            n_steps,
            n_paths,
            max_path_len: 10,
            propagation_depth: depth,
            hub_count: hubs,
            hub_probability: 0.3,
            failure_rate: 0.02,
            closure_rate: 0.005,
            congestion_rate: 0.01,
            window: 4,
            horizon: 2,
            target_positive: [0.0, 1.0],
            seed,
            ..GeneratorConfig::default()
        },
    )
}

fn options(config: &GeneratorConfig, rule: LabelRule) -> BuildOptions {
    BuildOptions { window: config.window, horizon: config.horizon, rule, fractions: SplitFractions::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn paths_are_distinct_connected_and_bounded(config in config_strategy()) {
        let data = generate_synthetic(&config).unwrap();
        prop_assert_eq!(data.paths.len(), config.n_paths);
        let distinct: HashSet<&Vec<usize>> = data.paths.iter().collect();
        prop_assert_eq!(distinct.len(), data.paths.len());
        for path in &data.paths {
            prop_assert!(path.len() >= config.min_path_len && path.len() <= config.max_path_len);
            for hop in path.windows(2) {
                prop_assert!(data.base.weight(hop[0], hop[1]).is_some_and(|w| w > 0.0), "{:?}", path);
            }
        }
    }

    #[test]
    fn snapshots_follow_from_events(config in config_strategy()) {
        let data = generate_synthetic(&config).unwrap();
        let derived = derive_snapshots(&data.base, &data.events, config.n_steps).unwrap();
        prop_assert_eq!(&derived, &data.graph.snapshots);
        for (t, s) in data.graph.snapshots.iter().enumerate() {
            prop_assert_eq!(s.t, t);
            prop_assert!(s.edges.iter().all(|e| data.base.weight(e.src, e.dst).is_some()));
        }
    }

    #[test]
    fn labels_recompute_from_events(config in config_strategy(), traffic: bool) {
        let rule = if traffic { LabelRule::Traffic } else { LabelRule::Telecom { threshold: 1 } };
        let data = generate_synthetic(&config).unwrap();
        let ds = build_dataset(&data.graph, data.paths.clone(), data.events.clone(), &options(&config, rule), Execution::Parallel)
            .unwrap();
        let (m, f, t_total) = (config.window, config.horizon, config.n_steps);
        prop_assert_eq!(ds.instances.len(), data.paths.len() * (t_total - f - m + 1));
        for inst in &ds.instances {
            let expected = label_for(&data.events, &data.paths[inst.path_id], inst.t, f, rule);
            prop_assert_eq!(inst.label, expected);
        }
    }

    #[test]
    fn splits_are_chronological_and_scaling_uses_training_steps(config in config_strategy()) {
        let data = generate_synthetic(&config).unwrap();
        let opts = options(&config, LabelRule::default());
        let ds = build_dataset(&data.graph, data.paths.clone(), data.events.clone(), &opts, Execution::Sequential).unwrap();
        let split = ds.split();
        let max_t = |v: &[lrgcn_core::data::PathInstance]| v.iter().map(|i| i.t).max().unwrap();
        let min_t = |v: &[lrgcn_core::data::PathInstance]| v.iter().map(|i| i.t).min().unwrap();
        prop_assert!(max_t(&split.train) < min_t(&split.validation));
        prop_assert!(max_t(&split.validation) < min_t(&split.test));
        let (v, t) = split_times(opts.window, opts.horizon, config.n_steps, opts.fractions).unwrap();
        prop_assert_eq!((v, t), (ds.meta.validation_start, ds.meta.test_start));

        let features = ds.graph.features.data();
        prop_assert!(features.iter().all(|x| (0.0..=1.0).contains(x)));
        let (n, d) = (config.n_nodes, config.signals);
        for c in 0..d {
            let train: Vec<f64> = (0..v * n).map(|k| features[k * d + c]).collect();
            let (lo, hi) = train.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
            let range = ds.meta.scaling[c];
            if range.max > range.min {
                prop_assert_eq!((lo, hi), (0.0, 1.0));
            }
        }
    }
}

#[test]
fn instance_count_example() {
    let config = GeneratorConfig { n_nodes: 10, n_steps: 50, n_paths: 4, window: 5, horizon: 3, target_positive: [0.0, 1.0], ..GeneratorConfig::default() };
    let data = generate_synthetic(&config).unwrap();
    let ds = build_dataset(&data.graph, data.paths, data.events, &options(&config, LabelRule::default()), Execution::Parallel).unwrap();
    assert_eq!(ds.instances.len(), 4 * (50 - 3 - 5 + 1));
}

#[test]
fn default_generator_lands_in_the_target_band() {
    let config = GeneratorConfig::default();
    let data = generate_synthetic(&config).unwrap();
    let [lo, hi] = config.target_positive;
    assert!((lo..=hi).contains(&data.positive_fraction), "{}", data.positive_fraction);
    assert_eq!((data.graph.n_nodes(), data.graph.n_steps(), data.paths.len()), (40, 500, 30));
}

#[test]
fn dataset_round_trips_through_files() {
    let config = GeneratorConfig { n_nodes: 10, n_steps: 60, n_paths: 5, window: 4, horizon: 2, target_positive: [0.0, 1.0], ..GeneratorConfig::default() };
    let data = generate_synthetic(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_raw(dir.path(), &data.graph, &data.paths, &data.events, Some(&config)).unwrap();
    let (graph, paths, events) = read_raw(dir.path()).unwrap();
    assert_eq!((&graph, &paths, &events), (&data.graph, &data.paths, &data.events));

    let opts = options(&config, LabelRule::default());
    build(dir.path(), &opts, Execution::Parallel).unwrap();
    let on_disk = read_dataset(dir.path()).unwrap();
    let in_memory = build_dataset(&data.graph, data.paths, data.events, &opts, Execution::Sequential).unwrap();
    assert_eq!(on_disk, in_memory);

    let copy = tempfile::tempdir().unwrap();
    write_dataset(copy.path(), &on_disk).unwrap();
    assert_eq!(read_dataset(copy.path()).unwrap(), on_disk);
}

#[test]
fn rebuilding_with_other_options_starts_from_raw_features() {
    let config = GeneratorConfig { n_nodes: 10, n_steps: 60, n_paths: 5, window: 4, horizon: 2, target_positive: [0.0, 1.0], ..GeneratorConfig::default() };
    let data = generate_synthetic(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_raw(dir.path(), &data.graph, &data.paths, &data.events, Some(&config)).unwrap();
    let first = options(&config, LabelRule::default());
    let second = BuildOptions { window: 6, horizon: 1, ..first.clone() };
    build(dir.path(), &first, Execution::Parallel).unwrap();
    build(dir.path(), &second, Execution::Parallel).unwrap();
    let fresh = build_dataset(&data.graph, data.paths, data.events, &second, Execution::Parallel).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), fresh);
}
