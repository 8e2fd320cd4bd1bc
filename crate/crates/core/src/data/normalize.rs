use serde::{Deserialize, Serialize};

use crate::graph::TimeEvolvingGraph;
use crate::numerics::Tensor;

/// Per-channel scaling statistics from the training steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: f64,
    pub max: f64,
}

impl ChannelRange {
    pub fn scale(&self, x: f64) -> f64 {
        let x = if x.is_finite() { x } else { 0.0 };
        if self.max > self.min {
            ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Min-max scales each channel to `[0, 1]` using steps `[0, train_end)`.
/// Missing (non-finite) values count as 0; later values outside the
/// training range are clipped; constant channels become 0.
pub fn normalize_features(graph: &TimeEvolvingGraph, train_end: usize) -> (TimeEvolvingGraph, Vec<ChannelRange>) {
    let shape = graph.features.shape().to_vec();
    let (n, d) = (shape[1], shape[2]);
    let clean = |x: f64| if x.is_finite() { x } else { 0.0 };
    let train_rows = train_end.clamp(1, shape[0]) * n;
    let ranges: Vec<ChannelRange> = (0..d)
        .map(|c| {
            let values = graph.features.data().chunks(d).take(train_rows).map(|row| clean(row[c]));
            let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            ChannelRange { min, max }
        })
        .collect();
    let data: Vec<f64> = graph
        .features
        .data()
        .chunks(d)
        .flat_map(|row| row.iter().zip(&ranges).map(|(&x, r)| r.scale(x)).collect::<Vec<_>>())
        .collect();
    let features = Tensor::new(shape, data).expect("same shape");
    (TimeEvolvingGraph { snapshots: graph.snapshots.clone(), features }, ranges)
}
