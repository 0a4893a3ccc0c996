//! File I/O: digested inputs, graph and observation parsing, and output
//! writing with round-trip float formatting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use netsmooth::{Graph, GraphFile, Observations, ResolutionSpec};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Floats in CSV output: 17 significant digits.
pub fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    /// File name only, so manifests do not depend on where the data lives.
    pub name: String,
    pub sha256: String,
}

/// Every file read during a run, in read order.
#[derive(Debug, Default)]
pub struct Inputs {
    pub digests: Vec<InputDigest>,
}

impl Inputs {
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.digests.push(InputDigest { name: file_name(path), sha256: hex::encode(Sha256::digest(&bytes)) });
        Ok(bytes)
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

pub fn parse_graph(bytes: &[u8], path: &Path) -> Result<Graph, CliError> {
    let file: GraphFile =
        serde_json::from_slice(bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Graph::from_file(&file).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Reads per-sub-edge observations. Accepts either aggregated rows
/// (edge_id, subedge_index, n, mean_seconds) or raw samples
/// (edge_id, subedge_index, sample_seconds), which are averaged. The
/// resolution is whatever the rows cover; every sub-edge must appear.
pub fn parse_observations(bytes: &[u8], path: &Path, graph: &Graph) -> Result<(ResolutionSpec, Observations), CliError> {
    let name = path.display();
    let err = |line: u64, msg: String| CliError::Input(format!("{name}: line {line}: {msg}"));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| CliError::Input(format!("{name}: {e}")))?.clone();
    let col = |h: &str| headers.iter().position(|c| c == h);
    let (edge_c, sub_c) = match (col("edge_id"), col("subedge_index")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::Input(format!("{name}: header must contain edge_id and subedge_index"))),
    };
    enum Kind {
        Aggregated { n: usize, mean: usize },
        Raw { sample: usize },
    }
    let kind = match (col("n"), col("mean_seconds"), col("sample_seconds")) {
        (Some(n), Some(mean), None) => Kind::Aggregated { n, mean },
        (None, None, Some(sample)) => Kind::Raw { sample },
        _ => {
            return Err(CliError::Input(format!(
                "{name}: expected columns n, mean_seconds or a single sample_seconds column"
            )))
        }
    };

    let q = graph.edge_count();
    // (edge, sub-edge) -> (count, sum of n * mean)
    let mut cells: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{name}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize, what: &str| {
            field(i).parse::<usize>().map_err(|_| err(line, format!("{what} {:?} is not a positive integer", field(i))))
        };
        let float = |i: usize, what: &str| match field(i).parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(err(line, format!("{what} {:?} is not a finite number", field(i)))),
        };
        let edge = int(edge_c, "edge_id")?;
        let sub = int(sub_c, "subedge_index")?;
        if edge == 0 || edge > q {
            return Err(err(line, format!("edge_id {edge} outside 1..={q}")));
        }
        if sub == 0 {
            return Err(err(line, "subedge_index starts at 1".into()));
        }
        let key = (edge - 1, sub - 1);
        match kind {
            Kind::Aggregated { n, mean } => {
                let n = float(n, "n")?;
                if !(n >= 1.0) {
                    return Err(err(line, format!("n must be at least 1, got {n}")));
                }
                let mean = float(mean, "mean_seconds")?;
                if cells.insert(key, (n, n * mean)).is_some() {
                    return Err(err(line, format!("duplicate row for edge {edge}, sub-edge {sub}")));
                }
            }
            Kind::Raw { sample } => {
                let v = float(sample, "sample_seconds")?;
                let cell = cells.entry(key).or_insert((0.0, 0.0));
                cell.0 += 1.0;
                cell.1 += v;
            }
        }
    }

    let mut counts = vec![0usize; q];
    for &(e, s) in cells.keys() {
        counts[e] = counts[e].max(s + 1);
    }
    let mut n = Vec::with_capacity(cells.len());
    let mut mean = Vec::with_capacity(cells.len());
    for (e, &count) in counts.iter().enumerate() {
        if count == 0 {
            return Err(CliError::Input(format!("{name}: no observations for edge {}", e + 1)));
        }
        for s in 0..count {
            let Some(&(cn, sum)) = cells.get(&(e, s)) else {
                return Err(CliError::Input(format!("{name}: missing row for edge {}, sub-edge {}", e + 1, s + 1)));
            };
            n.push(cn);
            mean.push(sum / cn);
        }
    }
    let resolution = ResolutionSpec::new(counts.iter().map(|c| c - 1).collect());
    let obs = Observations::new(n, mean).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
    Ok((resolution, obs))
}

/// Collects output files under one directory and remembers their names.
pub struct Outputs {
    dir: PathBuf,
    pub written: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        Ok(Outputs { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.written.push(name.to_owned());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
        for row in rows {
            w.write_record(row).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        self.write(name, &bytes)
    }
}
