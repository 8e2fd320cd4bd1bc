use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::GraphSnapshot;

/// Attempts allowed per requested path before giving up.
pub const PATH_ATTEMPTS: usize = 1000;

/// Fewest-hop path from `src` to `dst`; ties go to lower node ids.
pub(crate) fn shortest_path(successors: &[Vec<usize>], src: usize, dst: usize) -> Option<Vec<usize>> {
    let mut parent = vec![usize::MAX; successors.len()];
    parent[src] = src;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        if u == dst {
            let mut path = vec![dst];
            let mut at = dst;
            while at != src {
                at = parent[at];
                path.push(at);
            }
            path.reverse();
            return Some(path);
        }
        for &v in &successors[u] {
            if parent[v] == usize::MAX {
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    None
}

/// `k` distinct shortest paths between random `(source, target)` pairs on
/// `base`, each with between `min_len` and `max_len` nodes.
pub fn sample_paths(
    base: &GraphSnapshot,
    k: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::InvalidConfig("path count must be at least 1".into()));
    }
    if min_len < 2 || min_len > max_len {
        return Err(Error::InvalidConfig(format!("path length range [{min_len}, {max_len}] is invalid")));
    }
    let n = base.n_nodes;
    if n < 2 {
        return Err(Error::InvalidConfig("path sampling needs at least 2 nodes".into()));
    }
    let successors = base.successors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut last = (0, 0);
        let mut found = None;
        for _ in 0..PATH_ATTEMPTS {
            let src = rng.random_range(0..n);
            let dst = rng.random_range(0..n - 1);
            let dst = if dst >= src { dst + 1 } else { dst };
            last = (src, dst);
            let Some(path) = shortest_path(&successors, src, dst) else { continue };
            if (min_len..=max_len).contains(&path.len()) && seen.insert(path.clone()) {
                found = Some(path);
                break;
            }
        }
        match found {
            Some(path) => out.push(path),
            None => return Err(Error::Unreachable { src: last.0, dst: last.1, budget: PATH_ATTEMPTS }),
        }
    }
    Ok(out)
}
