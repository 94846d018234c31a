//! CSV and JSON formats for trajectories, policies, weights and reports.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! file reads back bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{Horizon, Trajectory};
use crate::graph::Graph;
use crate::policy::{PolicyGrid, SGrid};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}, line {line}, column '{column}': {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// A numeric CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[idx])
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let file = File::create(path).map_err(file_err(path))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{}", self.header.join(",")).map_err(file_err(path))?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            for (c, v) in row.iter().enumerate() {
                if c > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            writeln!(out, "{line}").map_err(file_err(path))?;
        }
        out.flush().map_err(file_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_err(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            let mut row = Vec::with_capacity(header.len());
            for (c, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| IoError::Parse {
                    path: path.to_path_buf(),
                    line,
                    column: header.get(c).cloned().unwrap_or_default(),
                    message: format!("'{field}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(IoError::Parse {
                        path: path.to_path_buf(),
                        line,
                        column: header.get(c).cloned().unwrap_or_default(),
                        message: format!("'{field}' is not finite"),
                    });
                }
                row.push(v);
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::File {
            path: path.to_path_buf(),
            source,
        },
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => IoError::Parse {
            path: path.to_path_buf(),
            line,
            column: format!("#{}", len.min(expected_len) + 1),
            message: format!("expected {expected_len} fields, found {len}"),
        },
        other => IoError::Parse {
            path: path.to_path_buf(),
            line,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

/// Header `t,x1_1,…,x1_d,…,xN_d`.
pub fn state_header(prefix: &str, num_nodes: usize, state_dim: usize) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    for i in 1..=num_nodes {
        for c in 1..=state_dim {
            header.push(format!("{prefix}{i}_{c}"));
        }
    }
    header
}

/// Header `t,w{j}_{i},…` naming each edge by its one-based endpoints.
pub fn weight_header(graph: &Graph) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain(
            graph
                .one_based_edges()
                .into_iter()
                .map(|(j, i)| format!("w{j}_{i}")),
        )
        .collect()
}

fn time_series(
    header: Vec<String>,
    horizon: Horizon,
    rows: impl Iterator<Item = Vec<f64>>,
) -> Table {
    let mut table = Table::new(header);
    for (n, values) in rows.enumerate() {
        let mut row = Vec::with_capacity(values.len() + 1);
        row.push(horizon.time(n));
        row.extend(values);
        table.rows.push(row);
    }
    table
}

pub fn write_trajectory(
    path: &Path,
    traj: &Trajectory,
    num_nodes: usize,
    state_dim: usize,
) -> Result<(), IoError> {
    write_states(path, "x", traj.horizon(), traj.states(), num_nodes, state_dim)
}

/// Writes any per-sample ensemble-sized series (states, co-states).
pub fn write_states(
    path: &Path,
    prefix: &str,
    horizon: Horizon,
    states: &[DVector<f64>],
    num_nodes: usize,
    state_dim: usize,
) -> Result<(), IoError> {
    time_series(
        state_header(prefix, num_nodes, state_dim),
        horizon,
        states.iter().map(|s| s.iter().copied().collect()),
    )
    .write(path)
}

/// Reads a trajectory, recovering its time grid from the `t` column.
pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let table = Table::read(path)?;
    if table.header.first().map(String::as_str) != Some("t") || table.header.len() < 2 {
        return Err(format_err(path, "expected header 't,x1_1,...'"));
    }
    if table.rows.is_empty() {
        return Err(format_err(path, "no samples"));
    }
    let times: Vec<f64> = table.column(0).collect();
    let t0 = times[0];
    let tf = times[times.len() - 1];
    let dt = if times.len() > 1 { times[1] - t0 } else { 1.0 };
    let horizon = Horizon { t0, tf, dt };
    trajectory_on(path, &table, horizon)
}

/// Reads a trajectory whose samples must sit on `horizon`.
pub fn read_trajectory_on(path: &Path, horizon: Horizon) -> Result<Trajectory, IoError> {
    let table = Table::read(path)?;
    trajectory_on(path, &table, horizon)
}

fn trajectory_on(path: &Path, table: &Table, horizon: Horizon) -> Result<Trajectory, IoError> {
    let steps = horizon
        .steps()
        .map_err(|e| format_err(path, e.to_string()))?;
    if table.rows.len() != steps + 1 {
        return Err(format_err(
            path,
            format!(
                "expected {} samples for the configured horizon, found {}",
                steps + 1,
                table.rows.len()
            ),
        ));
    }
    let tol = 1e-9 * horizon.duration().abs().max(1.0);
    for (n, row) in table.rows.iter().enumerate() {
        if (row[0] - horizon.time(n)).abs() > tol {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: n as u64 + 2,
                column: "t".into(),
                message: format!(
                    "time {} does not match the grid value {}",
                    row[0],
                    horizon.time(n)
                ),
            });
        }
    }
    let states = table
        .rows
        .iter()
        .map(|r| DVector::from_column_slice(&r[1..]))
        .collect();
    Trajectory::new(horizon, states).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_policy(path: &Path, p: &PolicyGrid) -> Result<(), IoError> {
    let mut table = Table::new(vec!["s".into(), "u".into()]);
    for (q, u) in p.values().iter().enumerate() {
        table.rows.push(vec![p.grid().node(q), *u]);
    }
    table.write(path)
}

/// Reads an `s,u` table; the nodes must be uniformly spaced.
pub fn read_policy(path: &Path) -> Result<PolicyGrid, IoError> {
    let table = Table::read(path)?;
    if table.header != ["s", "u"] {
        return Err(format_err(path, "expected header 's,u'"));
    }
    let s: Vec<f64> = table.column(0).collect();
    if s.len() < 2 {
        return Err(format_err(path, "a policy needs at least two nodes"));
    }
    let grid = SGrid::new(s[0], s[s.len() - 1], s.len())
        .map_err(|e| format_err(path, e.to_string()))?;
    let tol = 1e-9 * grid.upper().max(1.0);
    for (q, sq) in s.iter().enumerate() {
        if (sq - grid.node(q)).abs() > tol {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: q as u64 + 2,
                column: "s".into(),
                message: "grid nodes are not uniformly spaced".into(),
            });
        }
    }
    PolicyGrid::new(grid, table.column(1).collect()).map_err(|e| format_err(path, e.to_string()))
}

/// Per-edge weights of `p` along `traj`, one row per sample.
pub fn weight_table(p: &PolicyGrid, traj: &Trajectory, graph: &Graph) -> Result<Table, IoError> {
    let mut rows = Vec::with_capacity(traj.len());
    for x in traj.states() {
        rows.push(
            p.edge_weights(x, graph)
                .map_err(|e| format_err(Path::new("<weights>"), e.to_string()))?,
        );
    }
    Ok(time_series(weight_header(graph), traj.horizon(), rows.into_iter()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path).map_err(file_err(path))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| format_err(path, e.to_string()))?;
    writeln!(out).map_err(file_err(path))?;
    out.flush().map_err(file_err(path))
}
