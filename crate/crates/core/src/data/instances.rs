use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, PathInstance};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph::{Event, TimedEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelRule {
    /// Positive when at least `threshold` alarms land on path nodes within
    /// the horizon.
    Telecom { threshold: usize },
    /// Positive when two consecutive path nodes are congested at the same
    /// step within the horizon.
    Traffic,
}

impl Default for LabelRule {
    fn default() -> Self {
        LabelRule::Telecom { threshold: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.65, validation: 0.12, test: 0.23 }
    }
}

/// Label of `path` at prediction time `t`, read straight off the event log.
pub fn label_for(events: &[TimedEvent], path: &[usize], t: usize, horizon: usize, rule: LabelRule) -> usize {
    let in_horizon = |e: &&TimedEvent| e.t > t && e.t <= t + horizon;
    match rule {
        LabelRule::Telecom { threshold } => {
            let nodes: HashSet<usize> = path.iter().copied().collect();
            let alarms = events
                .iter()
                .filter(in_horizon)
                .filter(|e| matches!(e.event, Event::Alarm { node } if nodes.contains(&node)))
                .count();
            usize::from(alarms >= threshold)
        }
        LabelRule::Traffic => {
            let congested: HashSet<(usize, usize)> = events
                .iter()
                .filter(in_horizon)
                .filter_map(|e| match e.event {
                    Event::Congestion { node } => Some((e.t, node)),
                    _ => None,
                })
                .collect();
            let hit = (t + 1..=t + horizon).any(|s| {
                path.windows(2).any(|w| congested.contains(&(s, w[0])) && congested.contains(&(s, w[1])))
            });
            usize::from(hit)
        }
    }
}

/// Per-step alarm counts and congestion sets for fast repeated labelling.
pub(crate) struct EventIndex {
    alarms: Vec<Vec<usize>>,
    congested: Vec<HashSet<usize>>,
}

impl EventIndex {
    pub(crate) fn new(events: &[TimedEvent], n_steps: usize, n_nodes: usize) -> Self {
        let mut alarms = vec![vec![0; n_nodes]; n_steps];
        let mut congested = vec![HashSet::new(); n_steps];
        for e in events.iter().filter(|e| e.t < n_steps) {
            match e.event {
                Event::Alarm { node } if node < n_nodes => alarms[e.t][node] += 1,
                Event::Congestion { node } => {
                    congested[e.t].insert(node);
                }
                _ => {}
            }
        }
        EventIndex { alarms, congested }
    }

    pub(crate) fn label(&self, path: &[usize], t: usize, horizon: usize, rule: LabelRule) -> usize {
        let steps = t + 1..(t + horizon + 1).min(self.alarms.len());
        match rule {
            LabelRule::Telecom { threshold } => {
                let mut nodes = path.to_vec();
                nodes.sort_unstable();
                nodes.dedup();
                let count: usize = steps.flat_map(|s| nodes.iter().map(move |&n| (s, n))).map(|(s, n)| self.alarms[s][n]).sum();
                usize::from(count >= threshold)
            }
            LabelRule::Traffic => {
                let hit = steps.into_iter().any(|s| {
                    let c = &self.congested[s];
                    path.windows(2).any(|w| c.contains(&w[0]) && c.contains(&w[1]))
                });
                usize::from(hit)
            }
        }
    }
}

/// First validation and first test prediction times for a chronological
/// split of the times `[M - 1, T - F)`.
pub fn split_times(window: usize, horizon: usize, n_steps: usize, fractions: SplitFractions) -> Result<(usize, usize)> {
    check_horizon(window, horizon, n_steps)?;
    let f = fractions;
    if [f.train, f.validation, f.test].iter().any(|&x| !(x > 0.0)) || (f.train + f.validation + f.test - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig("split fractions must be positive and sum to 1".into()));
    }
    let first = window - 1;
    let n = n_steps - horizon - first;
    let n_train = (n as f64 * f.train).floor() as usize;
    let n_val = (n as f64 * f.validation).floor() as usize;
    if n_train == 0 {
        return Err(Error::EmptySplit("train"));
    }
    if n_val == 0 {
        return Err(Error::EmptySplit("validation"));
    }
    if n_train + n_val >= n {
        return Err(Error::EmptySplit("test"));
    }
    Ok((first + n_train, first + n_train + n_val))
}

fn check_horizon(window: usize, horizon: usize, n_steps: usize) -> Result<()> {
    if window == 0 || horizon == 0 || window + horizon > n_steps {
        return Err(Error::HorizonOverflow { window, horizon, steps: n_steps });
    }
    Ok(())
}

/// All labelled instances ordered by `(path_id, t)`, one per path and
/// prediction time in `[M - 1, T - F)`.
pub(crate) fn label_all(
    n_steps: usize,
    n_nodes: usize,
    paths: &[Vec<usize>],
    events: &[TimedEvent],
    window: usize,
    horizon: usize,
    rule: LabelRule,
    exec: Execution,
) -> Result<Vec<PathInstance>> {
    check_horizon(window, horizon, n_steps)?;
    if paths.is_empty() {
        return Err(Error::InvalidConfig("no paths".into()));
    }
    let index = EventIndex::new(events, n_steps, n_nodes);
    let ids: Vec<usize> = (0..paths.len()).collect();
    let per_path = exec.map(&ids, |&path_id| {
        (window - 1..n_steps - horizon)
            .map(|t| PathInstance { path_id, t, label: index.label(&paths[path_id], t, horizon, rule) })
            .collect::<Vec<_>>()
    });
    Ok(per_path.concat())
}

#[allow(clippy::too_many_arguments)]
pub fn build_instances(
    n_steps: usize,
    n_nodes: usize,
    paths: &[Vec<usize>],
    events: &[TimedEvent],
    window: usize,
    horizon: usize,
    rule: LabelRule,
    fractions: SplitFractions,
    exec: Execution,
) -> Result<DatasetSplit> {
    let (validation_start, test_start) = split_times(window, horizon, n_steps, fractions)?;
    let all = label_all(n_steps, n_nodes, paths, events, window, horizon, rule, exec)?;
    let mut split = DatasetSplit::default();
    for inst in all {
        let bucket = if inst.t < validation_start {
            &mut split.train
        } else if inst.t < test_start {
            &mut split.validation
        } else {
            &mut split.test
        };
        bucket.push(inst);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: usize, event: Event) -> TimedEvent {
        TimedEvent { t, event }
    }

    #[test]
    fn no_events_means_negative() {
        assert_eq!(label_for(&[], &[0, 1], 5, 1, LabelRule::default()), 0);
        let alarm_at_t = [ev(5, Event::Alarm { node: 0 })];
        assert_eq!(label_for(&alarm_at_t, &[0, 1], 5, 1, LabelRule::default()), 0);
        let alarm_next = [ev(6, Event::Alarm { node: 1 })];
        assert_eq!(label_for(&alarm_next, &[0, 1], 5, 1, LabelRule::default()), 1);
        assert_eq!(label_for(&alarm_next, &[0, 1], 5, 1, LabelRule::Telecom { threshold: 2 }), 0);
    }

    #[test]
    fn traffic_rule_needs_adjacent_congestion_at_one_step() {
        let path = [7, 8, 9, 3, 4, 5];
        let same_step = [ev(6, Event::Congestion { node: 3 }), ev(6, Event::Congestion { node: 4 })];
        assert_eq!(label_for(&same_step, &path, 4, 3, LabelRule::Traffic), 1);
        let apart = [ev(6, Event::Congestion { node: 3 }), ev(7, Event::Congestion { node: 4 })];
        assert_eq!(label_for(&apart, &path, 4, 3, LabelRule::Traffic), 0);
        let not_adjacent = [ev(6, Event::Congestion { node: 7 }), ev(6, Event::Congestion { node: 4 })];
        assert_eq!(label_for(&not_adjacent, &path, 4, 3, LabelRule::Traffic), 0);
    }

    #[test]
    fn instance_count_and_split_order() {
        let paths = vec![vec![0, 1], vec![1, 2], vec![2]];
        let split = build_instances(40, 3, &paths, &[], 5, 2, LabelRule::default(), SplitFractions::default(), Execution::Sequential)
            .unwrap();
        assert_eq!(split.len(), 3 * (40 - 2 - 5 + 1));
        let max_train = split.train.iter().map(|i| i.t).max().unwrap();
        let min_val = split.validation.iter().map(|i| i.t).min().unwrap();
        let max_val = split.validation.iter().map(|i| i.t).max().unwrap();
        let min_test = split.test.iter().map(|i| i.t).min().unwrap();
        assert!(max_train < min_val && max_val < min_test);
    }

    #[test]
    fn horizon_overflow() {
        assert!(matches!(
            build_instances(10, 2, &[vec![0]], &[], 8, 3, LabelRule::default(), SplitFractions::default(), Execution::Sequential),
            Err(Error::HorizonOverflow { window: 8, horizon: 3, steps: 10 })
        ));
    }
}
