//! Result files: a `#`-prefixed metadata preamble followed by a plain CSV table.
//!
//! ```text
//! # schema = tbnoise-result/1
//! # gamma = 10
//! # ...
//! t,mean_x2,mean_x_sq,mean_var,mean_pn,stderr_mean_x2,...
//! 0,4,0,4,7.08,0,...
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::Boundary;
use crate::observables::{EnsembleSummary, TrajectoryRecord};

pub const SCHEMA: &str = "tbnoise-result/1";

pub const COLUMNS: [&str; 9] = [
    "t",
    "mean_x2",
    "mean_x_sq",
    "mean_var",
    "mean_pn",
    "stderr_mean_x2",
    "stderr_mean_x_sq",
    "stderr_mean_var",
    "stderr_mean_pn",
];

/// Run description echoed into every result file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub gamma: f64,
    pub n_sites: usize,
    pub dt: f64,
    pub t_max: f64,
    pub boundary: Boundary,
    pub unravelling: String,
    pub noise: String,
    pub seed: u64,
    pub initial: String,
    pub code_version: String,
}

impl Default for RunMeta {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            n_sites: 0,
            dt: 0.0,
            t_max: 0.0,
            boundary: Boundary::Open,
            unravelling: String::new(),
            noise: String::new(),
            seed: 0,
            initial: String::new(),
            code_version: crate::CODE_VERSION.to_string(),
        }
    }
}

pub fn to_csv_string(summary: &EnsembleSummary) -> String {
    let m = &summary.meta;
    let mut out = String::new();
    let pairs: [(&str, String); 12] = [
        ("schema", SCHEMA.to_string()),
        ("gamma", m.gamma.to_string()),
        ("sites", m.n_sites.to_string()),
        ("unravelling", m.unravelling.clone()),
        ("noise", m.noise.clone()),
        ("seed", m.seed.to_string()),
        ("trajectories", summary.n_trajectories.to_string()),
        ("dt", m.dt.to_string()),
        ("t_max", m.t_max.to_string()),
        ("boundary", m.boundary.to_string()),
        ("initial", m.initial.clone()),
        ("code_version", m.code_version.clone()),
    ];
    for (k, v) in pairs {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    let cols: Vec<&[f64]> = COLUMNS.iter().map(|c| summary.column(c).unwrap()).collect();
    for row in 0..summary.len() {
        let line: Vec<String> = cols.iter().map(|c| c[row].to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(summary: &EnsembleSummary, path: &Path) -> Result<()> {
    fs::write(path, to_csv_string(summary))?;
    Ok(())
}

fn meta_value<'a>(meta: &'a [(String, String)], key: &str) -> Result<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Schema(format!("preamble is missing `{key}`")))
}

fn parse_meta<T: std::str::FromStr>(meta: &[(String, String)], key: &str) -> Result<T> {
    let raw = meta_value(meta, key)?;
    raw.parse()
        .map_err(|_| Error::Schema(format!("preamble value `{key} = {raw}` does not parse")))
}

pub fn from_csv_str(text: &str) -> Result<EnsembleSummary> {
    let mut meta = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
        } else if !line.trim().is_empty() {
            body.push_str(line);
            body.push('\n');
        }
    }
    let schema = meta_value(&meta, "schema")?;
    if schema != SCHEMA {
        return Err(Error::Schema(format!("unsupported schema `{schema}` (expected `{SCHEMA}`)")));
    }
    let run = RunMeta {
        gamma: parse_meta(&meta, "gamma")?,
        n_sites: parse_meta(&meta, "sites")?,
        dt: parse_meta(&meta, "dt")?,
        t_max: parse_meta(&meta, "t_max")?,
        boundary: meta_value(&meta, "boundary")?
            .parse()
            .map_err(|e: Error| Error::Schema(e.to_string()))?,
        unravelling: meta_value(&meta, "unravelling")?.to_string(),
        noise: meta_value(&meta, "noise")?.to_string(),
        seed: parse_meta(&meta, "seed")?,
        initial: meta_value(&meta, "initial")?.to_string(),
        code_version: meta_value(&meta, "code_version")?.to_string(),
    };
    let n_trajectories = parse_meta(&meta, "trajectories")?;

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(Error::Schema(format!(
            "column header {:?} does not match schema columns {:?}",
            header, COLUMNS
        )));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); COLUMNS.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != COLUMNS.len() {
            return Err(Error::Schema(format!(
                "row {} has {} fields, expected {}",
                row + 1,
                record.len(),
                COLUMNS.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v = field.trim().parse::<f64>().map_err(|_| {
                Error::Schema(format!("row {}, column `{}`: `{field}` is not a number", row + 1, COLUMNS[j]))
            })?;
            cols[j].push(v);
        }
    }
    let mut it = cols.into_iter();
    let mut next = || it.next().unwrap();
    Ok(EnsembleSummary {
        meta: run,
        n_trajectories,
        t: next(),
        mean_x2: next(),
        mean_x_sq: next(),
        mean_var: next(),
        mean_pn: next(),
        stderr_mean_x2: next(),
        stderr_mean_x_sq: next(),
        stderr_mean_var: next(),
        stderr_mean_pn: next(),
    })
}

pub fn read_csv(path: &Path) -> Result<EnsembleSummary> {
    from_csv_str(&fs::read_to_string(path)?)
}

/// Columns of the per-trajectory record file.
pub const RECORD_COLUMNS: [&str; 6] = ["trajectory", "t", "mean_x", "mean_x2", "var_x", "pn"];

/// Per-trajectory observables in long format, one row per trajectory and
/// time, preceded by the same preamble as the summary file.
pub fn records_to_csv_string(meta: &RunMeta, records: &[TrajectoryRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# schema = {SCHEMA}-records");
    let _ = writeln!(out, "# gamma = {}", meta.gamma);
    let _ = writeln!(out, "# sites = {}", meta.n_sites);
    let _ = writeln!(out, "# unravelling = {}", meta.unravelling);
    let _ = writeln!(out, "# noise = {}", meta.noise);
    let _ = writeln!(out, "# seed = {}", meta.seed);
    let _ = writeln!(out, "# trajectories = {}", records.len());
    let _ = writeln!(out, "# initial = {}", meta.initial);
    let _ = writeln!(out, "# code_version = {}", meta.code_version);
    out.push_str(&RECORD_COLUMNS.join(","));
    out.push('\n');
    for (k, r) in records.iter().enumerate() {
        for i in 0..r.len() {
            let _ = writeln!(out, "{k},{},{},{},{},{}", r.grid[i], r.mean_x[i], r.mean_x2[i], r.var_x[i], r.pn[i]);
        }
    }
    out
}

pub fn write_records(meta: &RunMeta, records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    fs::write(path, records_to_csv_string(meta, records))?;
    Ok(())
}
