//! Dataset directory layout.
//!
//! ```text
//! snapshots.jsonl   {"t":0,"n_nodes":40,"edges":[[src,dst,weight],...]} per step
//! features.csv      t,node,f0,f1,...   (scaled after `build`; empty cell = missing)
//! features.raw.csv  unscaled copy kept by `build`
//! paths.txt         comma-separated node ids, line number = path id
//! events.jsonl      {"t":4,"kind":"link_failure","edge":[1,3]}
//! labels.csv        t,path_id,label
//! build.json        build parameters and scaling statistics
//! generator.json    generator configuration after rate tuning
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BuildMeta, Dataset, PathInstance};
use crate::error::{Error, Result};
use crate::graph::{Edge, EventRecord, GraphSnapshot, TimeEvolvingGraph, TimedEvent};
use crate::numerics::Tensor;

pub const SNAPSHOTS_FILE: &str = "snapshots.jsonl";
pub const FEATURES_FILE: &str = "features.csv";
pub const RAW_FEATURES_FILE: &str = "features.raw.csv";
pub const PATHS_FILE: &str = "paths.txt";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const LABELS_FILE: &str = "labels.csv";
pub const BUILD_FILE: &str = "build.json";
pub const GENERATOR_FILE: &str = "generator.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotRecord {
    t: usize,
    // Optional on input; without it the node count is one past the largest
    // id seen in the file.
    #[serde(default)]
    n_nodes: Option<usize>,
    edges: Vec<(usize, usize, f64)>,
}

fn schema(path: &Path, line: usize, message: impl Into<String>) -> Error {
    let file = path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
    Error::Schema { file, line, message: message.into() }
}

fn open(path: &Path) -> Result<fs::File> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_owned()));
    }
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(path: &Path, mut w: impl Write) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?))
}

fn csv_line(path: &Path, e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    schema(path, line, e.to_string())
}

fn csv_write_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidConfig(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_snapshots(path: &Path, snapshots: &[GraphSnapshot]) -> Result<()> {
    let mut w = create(path)?;
    for s in snapshots {
        let record = SnapshotRecord {
            t: s.t,
            n_nodes: Some(s.n_nodes),
            edges: s.edges.iter().map(|e| (e.src, e.dst, e.weight)).collect(),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}

pub fn read_snapshots(path: &Path) -> Result<Vec<GraphSnapshot>> {
    let mut records = Vec::new();
    let mut declared: Option<usize> = None;
    for (line, text) in lines(path)? {
        let r: SnapshotRecord = serde_json::from_str(&text).map_err(|e| schema(path, line, e.to_string()))?;
        if r.t != records.len() {
            return Err(schema(path, line, format!("expected t = {}, found {}", records.len(), r.t)));
        }
        match (declared, r.n_nodes) {
            (Some(n), Some(m)) if n != m => {
                return Err(schema(path, line, format!("n_nodes {m} differs from {n}")));
            }
            (None, Some(m)) => declared = Some(m),
            _ => {}
        }
        records.push((line, r));
    }
    if records.is_empty() {
        return Err(schema(path, 1, "no snapshots"));
    }
    let largest = records.iter().flat_map(|(_, r)| r.edges.iter().map(|&(s, d, _)| s.max(d) + 1)).max().unwrap_or(1);
    let n = declared.unwrap_or(largest);
    records
        .into_iter()
        .map(|(line, r)| {
            let edges = r.edges.into_iter().map(|(src, dst, w)| Edge::new(src, dst, w)).collect();
            GraphSnapshot::new(n, edges, r.t).map_err(|e| schema(path, line, e.to_string()))
        })
        .collect()
}

/// Writes the `T x N x d` cube; non-finite values are left blank.
pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    let shape = features.shape();
    let (steps, n, d) = (shape[0], shape[1], shape[2]);
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["t".to_owned(), "node".to_owned()];
    header.extend((0..d).map(|c| format!("f{c}")));
    w.write_record(&header).map_err(|e| csv_write_err(path, e))?;
    let data = features.data();
    for t in 0..steps {
        for node in 0..n {
            let mut row = vec![t.to_string(), node.to_string()];
            let start = (t * n + node) * d;
            row.extend(data[start..start + d].iter().map(|x| if x.is_finite() { x.to_string() } else { String::new() }));
            w.write_record(&row).map_err(|e| csv_write_err(path, e))?;
        }
    }
    let inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    finish(path, inner)
}

pub fn read_features(path: &Path, steps: usize, n_nodes: usize) -> Result<Tensor> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_line(path, &e))?.clone();
    if header.len() < 3 || &header[0] != "t" || &header[1] != "node" {
        return Err(schema(path, 1, "header must be `t,node,f0,...`"));
    }
    let d = header.len() - 2;
    let mut data = Vec::with_capacity(steps * n_nodes * d);
    let mut expected = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| csv_line(path, &e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<usize> {
            record[i].trim().parse().map_err(|_| schema(path, line, format!("`{}` is not an index", &record[i])))
        };
        let (t, node) = (field(0)?, field(1)?);
        if expected >= steps * n_nodes || (t, node) != (expected / n_nodes, expected % n_nodes) {
            return Err(schema(
                path,
                line,
                format!("expected row for t={}, node={}", expected / n_nodes.max(1), expected % n_nodes.max(1)),
            ));
        }
        for cell in record.iter().skip(2) {
            let cell = cell.trim();
            let value = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| schema(path, line, format!("`{cell}` is not a number")))?
            };
            data.push(value);
        }
        expected += 1;
    }
    if expected != steps * n_nodes {
        return Err(schema(path, expected + 2, format!("expected {} rows, found {expected}", steps * n_nodes)));
    }
    Tensor::new(vec![steps, n_nodes, d], data)
}

pub fn write_paths(path: &Path, paths: &[Vec<usize>]) -> Result<()> {
    let mut w = create(path)?;
    for p in paths {
        let line: Vec<String> = p.iter().map(usize::to_string).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}

pub fn read_paths(path: &Path, n_nodes: usize) -> Result<Vec<Vec<usize>>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let ids = line
            .split(',')
            .map(|s| {
                let id: usize = s.trim().parse().map_err(|_| schema(path, i + 1, format!("`{s}` is not a node id")))?;
                if id >= n_nodes {
                    return Err(schema(path, i + 1, format!("node {id} out of range for {n_nodes} nodes")));
                }
                Ok(id)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ids);
    }
    if out.is_empty() {
        return Err(schema(path, 1, "no paths"));
    }
    Ok(out)
}

pub fn write_events(path: &Path, events: &[TimedEvent]) -> Result<()> {
    let mut w = create(path)?;
    for e in events {
        serde_json::to_writer(&mut w, &EventRecord::from(e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}

pub fn read_events(path: &Path) -> Result<Vec<TimedEvent>> {
    lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let record: EventRecord = serde_json::from_str(&text).map_err(|e| schema(path, line, e.to_string()))?;
            TimedEvent::try_from(&record).map_err(|e| schema(path, line, e.to_string()))
        })
        .collect()
}

pub fn write_labels(path: &Path, instances: &[PathInstance]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,path_id,label").map_err(|e| Error::io(path, e))?;
    for i in instances {
        writeln!(w, "{},{},{}", i.t, i.path_id, i.label).map_err(|e| Error::io(path, e))?;
    }
    finish(path, w)
}

/// Labels ordered by `(path_id, t)`.
pub fn read_labels(path: &Path, n_paths: usize, n_steps: usize) -> Result<Vec<PathInstance>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_line(path, &e))?;
    if header.iter().collect::<Vec<_>>() != ["t", "path_id", "label"] {
        return Err(schema(path, 1, "header must be `t,path_id,label`"));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_line(path, &e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<usize> {
            record[i].trim().parse().map_err(|_| schema(path, line, format!("`{}` is not an integer", &record[i])))
        };
        let inst = PathInstance { t: field(0)?, path_id: field(1)?, label: field(2)? };
        if inst.path_id >= n_paths {
            return Err(schema(path, line, format!("unknown path_id {}", inst.path_id)));
        }
        if inst.t >= n_steps {
            return Err(schema(path, line, format!("t {} beyond {n_steps} steps", inst.t)));
        }
        if inst.label > 1 {
            return Err(schema(path, line, format!("label {} is not 0 or 1", inst.label)));
        }
        out.push(inst);
    }
    out.sort_unstable();
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| schema(path, e.line(), e.to_string()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the generator output: structure, raw signals, paths and events.
pub fn write_raw(
    dir: &Path,
    graph: &TimeEvolvingGraph,
    paths: &[Vec<usize>],
    events: &[TimedEvent],
    generator: Option<&super::GeneratorConfig>,
) -> Result<()> {
    ensure_dir(dir)?;
    write_snapshots(&dir.join(SNAPSHOTS_FILE), &graph.snapshots)?;
    write_features(&dir.join(FEATURES_FILE), &graph.features)?;
    let stale_raw = dir.join(RAW_FEATURES_FILE);
    if stale_raw.exists() {
        fs::remove_file(&stale_raw).map_err(|e| Error::io(&stale_raw, e))?;
    }
    write_paths(&dir.join(PATHS_FILE), paths)?;
    write_events(&dir.join(EVENTS_FILE), events)?;
    if let Some(config) = generator {
        write_json(&dir.join(GENERATOR_FILE), config)?;
    }
    Ok(())
}

/// Unscaled graph, paths and events; prefers the raw feature copy when
/// `build` has already scaled `features.csv`.
pub fn read_raw(dir: &Path) -> Result<(TimeEvolvingGraph, Vec<Vec<usize>>, Vec<TimedEvent>)> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_owned()));
    }
    let snapshots = read_snapshots(&dir.join(SNAPSHOTS_FILE))?;
    let n = snapshots[0].n_nodes;
    let raw = dir.join(RAW_FEATURES_FILE);
    let features_path = if raw.exists() { raw } else { dir.join(FEATURES_FILE) };
    let features = read_features(&features_path, snapshots.len(), n)?;
    let paths = read_paths(&dir.join(PATHS_FILE), n)?;
    let events = read_events(&dir.join(EVENTS_FILE))?;
    Ok((TimeEvolvingGraph { snapshots, features }, paths, events))
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    ensure_dir(dir)?;
    write_snapshots(&dir.join(SNAPSHOTS_FILE), &dataset.graph.snapshots)?;
    write_features(&dir.join(FEATURES_FILE), &dataset.graph.features)?;
    write_paths(&dir.join(PATHS_FILE), &dataset.paths)?;
    write_events(&dir.join(EVENTS_FILE), &dataset.events)?;
    write_labels(&dir.join(LABELS_FILE), &dataset.instances)?;
    write_json(&dir.join(BUILD_FILE), &dataset.meta)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_owned()));
    }
    let snapshots = read_snapshots(&dir.join(SNAPSHOTS_FILE))?;
    let (steps, n) = (snapshots.len(), snapshots[0].n_nodes);
    let features = read_features(&dir.join(FEATURES_FILE), steps, n)?;
    let paths = read_paths(&dir.join(PATHS_FILE), n)?;
    let events = read_events(&dir.join(EVENTS_FILE))?;
    let instances = read_labels(&dir.join(LABELS_FILE), paths.len(), steps)?;
    let meta: BuildMeta = read_json(&dir.join(BUILD_FILE))?;
    Ok(Dataset { graph: TimeEvolvingGraph { snapshots, features }, paths, events, instances, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_paths_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(PATHS_FILE);
        fs::write(&p, "").unwrap();
        match read_paths(&p, 3) {
            Err(Error::Schema { message, .. }) => assert_eq!(message, "no paths"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_path_id_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(LABELS_FILE);
        fs::write(&p, "t,path_id,label\n3,0,1\n3,5,0\n").unwrap();
        match read_labels(&p, 2, 10) {
            Err(Error::Schema { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("path_id 5"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn features_round_trip_with_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(FEATURES_FILE);
        let t = Tensor::new(vec![2, 2, 2], vec![0.1, f64::NAN, 1.0 / 3.0, -2.5e-17, 4.0, 5.0, 6.0, 7.0]).unwrap();
        write_features(&p, &t).unwrap();
        let back = read_features(&p, 2, 2).unwrap();
        assert!(back.data()[1].is_nan());
        for (a, b) in t.data().iter().zip(back.data()).filter(|(a, _)| a.is_finite()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(matches!(read_features(&p, 3, 2), Err(Error::Schema { .. })));
    }

    #[test]
    fn snapshot_node_count_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(SNAPSHOTS_FILE);
        fs::write(&p, "{\"t\":0,\"edges\":[[0,2,1.0]]}\n{\"t\":1,\"edges\":[[3,1,0.5]]}\n").unwrap();
        let s = read_snapshots(&p).unwrap();
        assert_eq!((s[0].n_nodes, s[1].n_nodes), (4, 4));

        fs::write(&p, "{\"t\":0,\"n_nodes\":6,\"edges\":[]}\n{\"t\":1,\"edges\":[[3,1,0.5]]}\n").unwrap();
        assert_eq!(read_snapshots(&p).unwrap()[1].n_nodes, 6);

        fs::write(&p, "{\"t\":0,\"n_nodes\":6,\"edges\":[]}\n{\"t\":1,\"n_nodes\":5,\"edges\":[]}\n").unwrap();
        assert!(matches!(read_snapshots(&p), Err(Error::Schema { line: 2, .. })));
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_snapshots(&dir.path().join("nope.jsonl")), Err(Error::MissingFile(_))));
    }
}
