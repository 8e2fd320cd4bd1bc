//! Telecom-style synthetic networks with planted failures.
//!
//! A failure at node `b` cuts every link into `b` for `outage_steps` steps,
//! depresses `b`'s signals for `dip_steps` steps and raises alarms on `b` and
//! its downstream neighbourhood `alarm_delay` steps later. Decoy shocks
//! produce the same signal dip with no structural change and no alarm, so
//! the signals alone cannot tell the two apart.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::instances::{label_all, LabelRule};
use super::paths::sample_paths;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{evolve_adjacency, Edge, Event, GraphSnapshot, TimeEvolvingGraph, TimedEvent};
use crate::numerics::Tensor;

/// Rate adjustments tried before giving up on the positive-fraction target.
const TUNING_ROUNDS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_nodes: usize,
    pub n_steps: usize,
    pub signals: usize,
    /// Probability of each extra directed edge on top of the ring.
    pub edge_probability: f64,
    /// Nodes that attract extra incoming edges.
    pub hub_count: usize,
    /// Probability of each extra edge into a hub.
    pub hub_probability: f64,
    /// Per node and step.
    pub failure_rate: f64,
    pub decoy_rate: f64,
    pub closure_rate: f64,
    pub congestion_rate: f64,
    pub outage_steps: usize,
    pub dip_steps: usize,
    pub dip_depth: f64,
    pub alarm_delay: usize,
    /// Hops downstream of a failed node that also raise alarms.
    pub propagation_depth: usize,
    pub period: usize,
    pub amplitude: f64,
    pub noise: f64,
    /// AR(1) coefficient of the signal noise.
    pub persistence: f64,
    pub n_paths: usize,
    pub min_path_len: usize,
    pub max_path_len: usize,
    pub window: usize,
    pub horizon: usize,
    pub rule: LabelRule,
    /// Acceptable positive-label fraction; the driving event rate is
    /// rescaled until the instances land inside it.
    pub target_positive: [f64; 2],
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_nodes: 40,
            n_steps: 500,
            signals: 2,
            edge_probability: 0.05,
            hub_count: 0,
            hub_probability: 0.0,
            failure_rate: 0.05,
            decoy_rate: 0.004,
            closure_rate: 0.0,
            congestion_rate: 0.0,
            outage_steps: 2,
            dip_steps: 3,
            dip_depth: 0.4,
            alarm_delay: 3,
            propagation_depth: 1,
            period: 24,
            amplitude: 0.1,
            noise: 0.03,
            persistence: 0.5,
            n_paths: 30,
            min_path_len: 2,
            max_path_len: 50,
            window: 12,
            horizon: 3,
            rule: LabelRule::Telecom { threshold: 1 },
            target_positive: [0.05, 0.40],
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("edge_probability", self.edge_probability),
            ("hub_probability", self.hub_probability),
            ("failure_rate", self.failure_rate),
            ("decoy_rate", self.decoy_rate),
            ("closure_rate", self.closure_rate),
            ("congestion_rate", self.congestion_rate),
        ];
        if let Some((name, _)) = rates.iter().find(|(_, r)| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidConfig(format!("`{name}` must lie in [0, 1]")));
        }
        if self.n_nodes < 2 {
            return Err(Error::InvalidConfig("`n_nodes` must be at least 2".into()));
        }
        if self.hub_count > self.n_nodes {
            return Err(Error::InvalidConfig("`hub_count` exceeds `n_nodes`".into()));
        }
        if self.signals == 0 || self.period == 0 {
            return Err(Error::InvalidConfig("`signals` and `period` must be positive".into()));
        }
        if self.n_steps <= self.window + self.horizon {
            return Err(Error::InvalidConfig("`n_steps` must exceed window + horizon".into()));
        }
        let [lo, hi] = self.target_positive;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::InvalidConfig("`target_positive` must be an increasing pair in [0, 1]".into()));
        }
        if !(self.noise >= 0.0 && self.amplitude >= 0.0 && self.dip_depth >= 0.0) || !(0.0..1.0).contains(&self.persistence) {
            return Err(Error::InvalidConfig("signal parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub base: GraphSnapshot,
    pub graph: TimeEvolvingGraph,
    pub events: Vec<TimedEvent>,
    pub paths: Vec<Vec<usize>>,
    /// Driving event rate after tuning.
    pub tuned_rate: f64,
    pub positive_fraction: f64,
}

struct Sampled {
    events: Vec<TimedEvent>,
    /// `(node, first step)` of every signal dip.
    dips: Vec<(usize, usize)>,
}

fn base_graph(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<GraphSnapshot> {
    let n = config.n_nodes;
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(rng);
    let mut is_hub = vec![false; n];
    for &h in &nodes[..config.hub_count] {
        is_hub[h] = true;
    }
    let mut edges = Vec::new();
    for src in 0..n {
        for dst in 0..n {
            let ring = dst == (src + 1) % n;
            let p = if is_hub[dst] { config.hub_probability.max(config.edge_probability) } else { config.edge_probability };
            let extra = src != dst && rng.random::<f64>() < p;
            if ring || extra {
                edges.push(Edge::new(src, dst, 1.0));
            }
        }
    }
    GraphSnapshot::new(n, edges, 0)
}

fn downstream(successors: &[Vec<usize>], node: usize, depth: usize) -> Vec<usize> {
    let mut seen = BTreeSet::from([node]);
    let mut frontier = VecDeque::from([(node, 0)]);
    while let Some((u, d)) = frontier.pop_front() {
        if d == depth {
            continue;
        }
        for &v in &successors[u] {
            if seen.insert(v) {
                frontier.push_back((v, d + 1));
            }
        }
    }
    seen.into_iter().collect()
}

fn sample_events(config: &GeneratorConfig, base: &GraphSnapshot, rates: [f64; 4], seed: u64) -> Sampled {
    let [failure, decoy, closure, congestion] = rates;
    let (n, steps) = (config.n_nodes, config.n_steps);
    let preds = base.predecessors();
    let succs = base.successors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut dips = Vec::new();
    let mut busy_until = vec![0usize; n];
    let mut push = |t: usize, event: Event| {
        if t < steps {
            events.push(TimedEvent { t, event });
        }
    };
    for s in 0..steps {
        for b in 0..n {
            // Fixed draw count per node-step keeps the stream aligned across rates.
            let draws: [f64; 4] = [rng.random(), rng.random(), rng.random(), rng.random()];
            if draws[0] < failure && s >= busy_until[b] {
                busy_until[b] = s + config.outage_steps.max(config.dip_steps).max(1);
                for &p in &preds[b] {
                    push(s, Event::LinkFailure { src: p, dst: b });
                    push(s + config.outage_steps, Event::LinkRecovery { src: p, dst: b });
                }
                for node in downstream(&succs, b, config.propagation_depth) {
                    push(s + config.alarm_delay, Event::Alarm { node });
                }
                dips.push((b, s));
            } else if draws[1] < decoy && s >= busy_until[b] {
                busy_until[b] = s + config.dip_steps.max(1);
                dips.push((b, s));
            }
            if draws[2] < closure {
                push(s, Event::Closure { node: b });
            }
            if draws[3] < congestion {
                push(s, Event::Congestion { node: b });
            }
        }
    }
    events.sort_by_key(|e| e.t);
    Sampled { events, dips }
}

/// Snapshot per step: link failures persist until their recovery; closures
/// and congestion apply to their own step only.
pub fn derive_snapshots(base: &GraphSnapshot, events: &[TimedEvent], n_steps: usize) -> Result<Vec<GraphSnapshot>> {
    let mut down: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut out = Vec::with_capacity(n_steps);
    let mut cursor = 0;
    for t in 0..n_steps {
        let mut transient = Vec::new();
        while cursor < events.len() && events[cursor].t <= t {
            let e = events[cursor];
            cursor += 1;
            if e.t < t {
                continue;
            }
            match e.event {
                Event::LinkFailure { src, dst } => {
                    down.insert((src, dst));
                }
                Event::LinkRecovery { src, dst } => {
                    down.remove(&(src, dst));
                }
                Event::Closure { .. } | Event::Congestion { .. } => transient.push(e.event),
                Event::Alarm { .. } => {}
            }
        }
        let mut applied: Vec<Event> = down.iter().map(|&(src, dst)| Event::LinkFailure { src, dst }).collect();
        applied.extend(transient);
        let mut snapshot = evolve_adjacency(base, &applied)?;
        snapshot.t = t;
        out.push(snapshot);
    }
    Ok(out)
}

fn signals(config: &GeneratorConfig, dips: &[(usize, usize)], seed: u64) -> Tensor {
    let (n, steps, d) = (config.n_nodes, config.n_steps, config.signals);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.noise.max(0.0)).expect("finite std");
    let mut depth = vec![0.0f64; steps * n];
    for &(node, start) in dips {
        for t in start..(start + config.dip_steps).min(steps) {
            let slot = &mut depth[t * n + node];
            *slot = slot.max(config.dip_depth);
        }
    }
    let mut state = vec![0.0f64; n * d];
    let mut data = Vec::with_capacity(steps * n * d);
    for t in 0..steps {
        let season = config.amplitude * (std::f64::consts::TAU * t as f64 / config.period as f64).sin();
        for node in 0..n {
            for c in 0..d {
                let ar = &mut state[node * d + c];
                *ar = config.persistence * *ar + if config.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                let level = 0.6 - 0.1 * c as f64;
                data.push(level + season + *ar - depth[t * n + node]);
            }
        }
    }
    Tensor::new(vec![steps, n, d], data).expect("signal cube")
}

fn positive_fraction(config: &GeneratorConfig, paths: &[Vec<usize>], events: &[TimedEvent]) -> Result<f64> {
    let labels = label_all(
        config.n_steps,
        config.n_nodes,
        paths,
        events,
        config.window,
        config.horizon,
        config.rule,
        Execution::Sequential,
    )?;
    Ok(labels.iter().filter(|i| i.label == 1).count() as f64 / labels.len() as f64)
}

pub fn generate_synthetic(config: &GeneratorConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let (structure_seed, path_seed, event_seed, signal_seed) =
        (master.next_u64(), master.next_u64(), master.next_u64(), master.next_u64());
    let base = base_graph(config, &mut ChaCha8Rng::seed_from_u64(structure_seed))?;
    let paths = sample_paths(&base, config.n_paths, config.min_path_len, config.max_path_len, path_seed)?;

    let driving = |c: &GeneratorConfig| match c.rule {
        LabelRule::Telecom { .. } => c.failure_rate,
        LabelRule::Traffic => c.congestion_rate,
    };
    let rates_for = |rate: f64| match config.rule {
        LabelRule::Telecom { .. } => [rate, config.decoy_rate, config.closure_rate, config.congestion_rate],
        LabelRule::Traffic => [config.failure_rate, config.decoy_rate, config.closure_rate, rate],
    };
    let [lo, hi] = config.target_positive;
    let mut rate = driving(config);
    let mut sampled = sample_events(config, &base, rates_for(rate), event_seed);
    let mut fraction = positive_fraction(config, &paths, &sampled.events)?;
    if rate > 0.0 {
        let mut rounds = 0;
        while !(lo..=hi).contains(&fraction) {
            rounds += 1;
            if rounds > TUNING_ROUNDS {
                return Err(Error::InvalidConfig(format!(
                    "could not bring the positive fraction into [{lo}, {hi}] (last {fraction:.3} at rate {rate:e})"
                )));
            }
            rate = if fraction > hi { rate * 0.7 } else { (rate * 1.3).min(1.0) };
            sampled = sample_events(config, &base, rates_for(rate), event_seed);
            fraction = positive_fraction(config, &paths, &sampled.events)?;
        }
    }

    let snapshots = derive_snapshots(&base, &sampled.events, config.n_steps)?;
    let features = signals(config, &sampled.dips, signal_seed);
    Ok(SyntheticData {
        base,
        graph: TimeEvolvingGraph { snapshots, features },
        events: sampled.events,
        paths,
        tuned_rate: rate,
        positive_fraction: fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig { n_nodes: 12, n_steps: 80, n_paths: 6, ..GeneratorConfig::default() }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&GeneratorConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn zero_rates_freeze_structure() {
        let config = GeneratorConfig { failure_rate: 0.0, decoy_rate: 0.0, ..small() };
        let data = generate_synthetic(&config).unwrap();
        assert!(data.events.is_empty());
        assert!(data.graph.snapshots.iter().all(|s| s.edges == data.base.edges));
    }

    #[test]
    fn failures_cut_incoming_links_for_the_outage() {
        let config = GeneratorConfig { decoy_rate: 0.0, ..small() };
        let data = generate_synthetic(&config).unwrap();
        let first = data
            .events
            .iter()
            .find_map(|e| match e.event {
                Event::LinkFailure { src, dst } => Some((e.t, src, dst)),
                _ => None,
            })
            .expect("some failure");
        let (t, src, dst) = first;
        assert_eq!(data.graph.snapshots[t].weight(src, dst), None);
        assert_eq!(data.base.weight(src, dst), Some(1.0));
        if t + config.outage_steps < config.n_steps {
            let back = &data.graph.snapshots[t + config.outage_steps];
            let still_down = data.events.iter().any(|e| {
                e.t == t + config.outage_steps && matches!(e.event, Event::LinkFailure { dst: d, .. } if d == dst)
            });
            if !still_down {
                assert_eq!(back.weight(src, dst), Some(1.0));
            }
        }
        assert!(data.events.iter().any(|e| e.t == t + config.alarm_delay && e.event == Event::Alarm { node: dst }));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate_synthetic(&GeneratorConfig { failure_rate: 1.5, ..small() }).is_err());
        assert!(generate_synthetic(&GeneratorConfig { n_steps: 10, ..small() }).is_err());
    }
}
