//! CSV artifacts. Column sets are frozen; see FORMATS.md.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hygo_core::driver::EvalRecord;
use hygo_core::{Genome, LgpProgram, RunResult};
use serde::Deserialize;

pub const LOG_COLUMNS: [&str; 8] = [
    "index",
    "stage",
    "generation",
    "origin",
    "flagged",
    "phenotype",
    "cost",
    "genome",
];

pub const SERIES_COLUMNS: [&str; 4] = ["stage", "generation", "evaluations", "best_cost"];

pub const SCATTER_COLUMNS: [&str; 8] = [
    "index",
    "stage",
    "generation",
    "origin",
    "flagged",
    "cost",
    "best_so_far",
    "phenotype",
];

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut file = fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
    file.write_all(bytes)?;
    file.sync_all()?;
    drop(file);
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn genome_text(genome: &Genome) -> Result<String> {
    Ok(match genome {
        Genome::Bits(c) => c.to_string(),
        Genome::Program(p) => serde_json::to_string(p)?,
    })
}

pub fn log_csv(log: &[EvalRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LOG_COLUMNS)?;
    for r in log {
        w.write_record([
            r.index.to_string(),
            r.stage.to_string(),
            r.generation.to_string(),
            r.origin.as_str().to_string(),
            r.flagged.to_string(),
            join(&r.phenotype),
            r.cost.to_string(),
            genome_text(&r.genome)?,
        ])?;
    }
    Ok(w.into_inner()?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPoint {
    pub stage: usize,
    pub generation: usize,
    pub evaluations: u64,
    pub best_cost: f64,
}

pub fn series_of(result: &RunResult) -> Vec<SeriesPoint> {
    result
        .generations
        .iter()
        .map(|g| SeriesPoint {
            stage: g.stage,
            generation: g.generation,
            evaluations: g.evaluations,
            best_cost: g.best_cost(),
        })
        .collect()
}

pub fn series_csv(series: &[SeriesPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SERIES_COLUMNS)?;
    for p in series {
        w.write_record([
            p.stage.to_string(),
            p.generation.to_string(),
            p.evaluations.to_string(),
            p.best_cost.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

/// One row of a run log as read back by `report`.
#[derive(Clone, Debug, Deserialize)]
pub struct LogRow {
    pub index: u64,
    pub stage: usize,
    pub generation: usize,
    pub origin: String,
    pub flagged: bool,
    pub phenotype: String,
    pub cost: f64,
    pub genome: String,
}

impl LogRow {
    pub fn program(&self) -> Option<LgpProgram> {
        self.genome.starts_with('{').then(|| serde_json::from_str(&self.genome).ok()).flatten()
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read log {}", path.display()))?;
    let headers = reader.headers().with_context(|| format!("{}: missing header", path.display()))?;
    if headers.iter().ne(LOG_COLUMNS) {
        bail!("{}: line 1: expected columns {}", path.display(), LOG_COLUMNS.join(","));
    }
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<LogRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| {
            let line = e.position().map_or(line as u64, |p| p.line());
            anyhow::anyhow!("{}: line {line}: {e}", path.display())
        })?;
        if row.index != i as u64 {
            bail!("{}: line {line}: expected evaluation index {i}, found {}", path.display(), row.index);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: log has no evaluations", path.display());
    }
    Ok(rows)
}

/// Best logged cost so far at the end of each (stage, generation).
pub fn series_from_log(rows: &[LogRow]) -> Vec<SeriesPoint> {
    let mut series: Vec<SeriesPoint> = Vec::new();
    let mut best = f64::INFINITY;
    for r in rows {
        best = best.min(r.cost);
        match series.last_mut() {
            Some(p) if p.stage == r.stage && p.generation == r.generation => {
                p.evaluations = r.index + 1;
                p.best_cost = best;
            }
            _ => series.push(SeriesPoint {
                stage: r.stage,
                generation: r.generation,
                evaluations: r.index + 1,
                best_cost: best,
            }),
        }
    }
    series
}

pub fn scatter_csv(rows: &[LogRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCATTER_COLUMNS)?;
    let mut best = f64::INFINITY;
    for r in rows {
        best = best.min(r.cost);
        w.write_record([
            r.index.to_string(),
            r.stage.to_string(),
            r.generation.to_string(),
            r.origin.clone(),
            r.flagged.to_string(),
            r.cost.to_string(),
            best.to_string(),
            r.phenotype.clone(),
        ])?;
    }
    Ok(w.into_inner()?)
}
