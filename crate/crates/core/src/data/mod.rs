//! Synthetic evolving networks, path sampling, labelled sliding-window
//! instances, feature scaling and the on-disk dataset layout.

mod generator;
mod instances;
mod io;
mod normalize;
mod paths;

use serde::{Deserialize, Serialize};

pub use generator::{derive_snapshots, generate_synthetic, GeneratorConfig, SyntheticData};
pub use instances::{build_instances, label_for, split_times, LabelRule, SplitFractions};
pub use io::{
    read_dataset, read_events, read_features, read_labels, read_paths, read_raw, read_snapshots,
    write_dataset, write_events, write_features, write_labels, write_paths, write_raw, write_snapshots,
    BUILD_FILE, EVENTS_FILE, FEATURES_FILE, GENERATOR_FILE, LABELS_FILE, PATHS_FILE, RAW_FEATURES_FILE,
    SNAPSHOTS_FILE,
};
pub use normalize::{normalize_features, ChannelRange};
pub use paths::sample_paths;

use crate::graph::{TimeEvolvingGraph, TimedEvent};

/// One labelled `(path, prediction time)` pair. The window is
/// `[t - M + 1, t]` and the label covers `(t, t + F]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PathInstance {
    pub path_id: usize,
    pub t: usize,
    pub label: usize,
}

/// Chronological split: every training time precedes every validation
/// time, which precedes every test time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PathInstance>,
    pub validation: Vec<PathInstance>,
    pub test: Vec<PathInstance>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> Vec<PathInstance> {
        let mut all: Vec<PathInstance> =
            self.train.iter().chain(&self.validation).chain(&self.test).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Parameters `build` used, persisted next to the labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildMeta {
    pub window: usize,
    pub horizon: usize,
    pub rule: LabelRule,
    pub fractions: SplitFractions,
    /// First validation time; feature scaling statistics come from steps
    /// before it.
    pub validation_start: usize,
    pub test_start: usize,
    pub scaling: Vec<ChannelRange>,
}

/// A built dataset directory held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: TimeEvolvingGraph,
    pub paths: Vec<Vec<usize>>,
    pub events: Vec<TimedEvent>,
    /// Ordered by `(path_id, t)`.
    pub instances: Vec<PathInstance>,
    pub meta: BuildMeta,
}

impl Dataset {
    pub fn split(&self) -> DatasetSplit {
        let mut split = DatasetSplit::default();
        for &inst in &self.instances {
            if inst.t < self.meta.validation_start {
                split.train.push(inst);
            } else if inst.t < self.meta.test_start {
                split.validation.push(inst);
            } else {
                split.test.push(inst);
            }
        }
        split
    }
}
