//! CSV and JSON files.
//!
//! CSV files start with one `#` comment line carrying the tool version and
//! config hash, then a header row. Floats are written with 17 significant
//! digits. JSON files carry the same two fields at the top level.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use sdemap::grid::{Partition, PwlPath};
use sdemap::model::Dataset;
use sdemap::sim::{Scheme, Trajectory};

use crate::config::VERSION;
use crate::error::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Provenance stamped into every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stamp {
    pub version: String,
    pub config_sha256: String,
}

impl Stamp {
    pub fn new(config_sha256: String) -> Self {
        Self { version: VERSION.to_string(), config_sha256 }
    }

    fn comment(&self) -> String {
        format!("# sdemap {} config_sha256={}\n", self.version, self.config_sha256)
    }
}

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_csv(path: &Path, stamp: &Stamp, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut file = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    file.write_all(stamp.comment().as_bytes()).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Pretty JSON with the stamp fields merged in front of `value`'s fields.
pub fn write_json<T: Serialize>(path: &Path, stamp: &Stamp, value: &T) -> Result<(), CliError> {
    let mut obj = serde_json::to_value(stamp).expect("stamp serializes");
    let body = serde_json::to_value(value).map_err(|e| CliError::Compute(e.to_string()))?;
    if let (Some(o), serde_json::Value::Object(b)) = (obj.as_object_mut(), body) {
        o.extend(b);
    }
    let mut text = serde_json::to_string_pretty(&obj).expect("json serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Header and numeric rows of a CSV written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| io_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| io_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Config(format!("{} row {}: {e}", path.display(), i + 1)))?;
        if row.len() != header.len() {
            return Err(CliError::Config(format!("{} row {}: expected {} columns", path.display(), i + 1, header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn state_header(n: usize, q: usize) -> Vec<String> {
    std::iter::once("t".to_string()).chain((0..n).map(|i| format!("x{i}"))).chain((0..q).map(|i| format!("z{i}"))).collect()
}

pub fn write_trajectory(path: &Path, stamp: &Stamp, tr: &Trajectory) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = (0..tr.len())
        .map(|k| {
            std::iter::once(tr.times[k]).chain(tr.x_at(k).iter().copied()).chain(tr.z_at(k).iter().copied()).map(num).collect()
        })
        .collect();
    write_csv(path, stamp, &state_header(tr.n, tr.q), &rows)
}

/// Trajectory CSV back into a [`Trajectory`]. Only the path is recovered;
/// the parameters are left empty.
pub fn read_trajectory(path: &Path, n: usize, q: usize) -> Result<Trajectory, CliError> {
    let (header, rows) = read_csv(path)?;
    if header != state_header(n, q) {
        return Err(CliError::Config(format!("{}: expected columns {}", path.display(), state_header(n, q).join(","))));
    }
    if rows.len() < 2 {
        return Err(CliError::Config(format!("{}: needs at least two rows", path.display())));
    }
    let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    Ok(Trajectory {
        h_sim: times[1] - times[0],
        x: rows.iter().flat_map(|r| r[1..1 + n].to_vec()).collect(),
        z: rows.iter().flat_map(|r| r[1 + n..].to_vec()).collect(),
        times,
        n,
        q,
        theta: vec![],
        seed: 0,
        scheme: Scheme::EulerMaruyama,
        left_validity_at: None,
    })
}

pub fn write_dataset(path: &Path, stamp: &Stamp, y: &Dataset) -> Result<(), CliError> {
    let header: Vec<String> = std::iter::once("t".to_string()).chain((0..y.dim()).map(|i| format!("y{i}"))).collect();
    let rows: Vec<Vec<String>> =
        (0..y.len()).map(|k| std::iter::once(y.times()[k]).chain(y.value(k).iter().copied()).map(num).collect()).collect();
    write_csv(path, stamp, &header, &rows)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let (header, rows) = read_csv(path)?;
    if header.first().map(String::as_str) != Some("t") || header.len() < 2 {
        return Err(CliError::Config(format!("{}: expected columns t,y0,...", path.display())));
    }
    let dim = header.len() - 1;
    let times = rows.iter().map(|r| r[0]).collect();
    let values = rows.iter().flat_map(|r| r[1..].to_vec()).collect();
    Dataset::new(times, dim, values).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Estimated path on its grid nodes.
pub fn write_path(path: &Path, stamp: &Stamp, x: &PwlPath, z: &PwlPath) -> Result<(), CliError> {
    let grid: &Partition = x.partition();
    let rows: Vec<Vec<String>> = (0..grid.len())
        .map(|k| {
            std::iter::once(grid.node(k))
                .chain(x.node_value(k).iter().copied())
                .chain(z.node_value(k).iter().copied())
                .map(num)
                .collect()
        })
        .collect();
    write_csv(path, stamp, &state_header(x.dim(), z.dim()), &rows)
}
