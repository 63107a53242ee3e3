//! Aggregation of result files into a summary table.

use std::io::Write;
use std::path::Path;

use cellsleep_core::loadaware::Mode;
use serde::Serialize;

use crate::config::Algorithm;
use crate::experiment::{read_results_file, ResultRow};
use crate::stats::{bootstrap_ci, mean, BootstrapOptions, CI_METHOD};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub source: String,
    pub algorithm: Algorithm,
    pub mode: Mode,
    pub sweep_value: Option<f64>,
    pub runs: usize,
    pub feasible: usize,
    pub mean_energy_norm: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ci_method: &'static str,
    pub mean_wall_ms: f64,
    /// Mean normalized energy relative to the reference at the same sweep value.
    pub energy_ratio: f64,
    /// Mean wall time relative to the reference at the same sweep value.
    pub time_ratio: f64,
}

struct Group<'a> {
    source: &'a str,
    algorithm: Algorithm,
    mode: Mode,
    sweep_value: Option<f64>,
    rows: Vec<&'a ResultRow>,
}

fn same_value(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
        (None, None) => true,
        _ => false,
    }
}

/// Summarizes labelled row sets.
///
/// Rows are grouped by (source, algorithm, mode, sweep value) in order of
/// first appearance. Ratios divide by the first group of the `reference`
/// algorithm at the same sweep value; without a reference the first
/// group's algorithm is used. Infeasible rows count towards `runs` and the
/// wall time only.
pub fn summarize(sets: &[(String, Vec<ResultRow>)], reference: Option<Algorithm>, boot: &BootstrapOptions) -> Result<Vec<SummaryRow>> {
    let mut groups: Vec<Group> = Vec::new();
    for (source, rows) in sets {
        for row in rows {
            let found = groups.iter_mut().find(|g| {
                g.source == source.as_str()
                    && g.algorithm == row.algorithm
                    && g.mode == row.mode
                    && same_value(g.sweep_value, row.sweep_value)
            });
            match found {
                Some(g) => g.rows.push(row),
                None => groups.push(Group {
                    source,
                    algorithm: row.algorithm,
                    mode: row.mode,
                    sweep_value: row.sweep_value,
                    rows: vec![row],
                }),
            }
        }
    }
    let Some(first) = groups.first() else {
        return Err(Error::Schema("no result rows to compare".into()));
    };
    let reference = reference.unwrap_or(first.algorithm);
    let stats: Vec<(usize, f64, (f64, f64), f64)> = groups
        .iter()
        .map(|g| {
            let energies: Vec<f64> = g.rows.iter().filter(|r| r.feasible).map(|r| r.energy_norm).collect();
            let walls: Vec<f64> = g.rows.iter().map(|r| r.wall_ms).collect();
            let m = if energies.is_empty() { f64::NAN } else { mean(&energies) };
            let ci = bootstrap_ci(&energies, boot).unwrap_or((m, m));
            (energies.len(), m, ci, mean(&walls))
        })
        .collect();
    let mut out = Vec::with_capacity(groups.len());
    for (g, &(feasible, m, (lo, hi), wall)) in groups.iter().zip(&stats) {
        let r = groups
            .iter()
            .position(|h| h.algorithm == reference && same_value(h.sweep_value, g.sweep_value));
        let (energy_ratio, time_ratio) = match r {
            Some(r) => (m / stats[r].1, wall / stats[r].3),
            None => (f64::NAN, f64::NAN),
        };
        out.push(SummaryRow {
            source: g.source.to_owned(),
            algorithm: g.algorithm,
            mode: g.mode,
            sweep_value: g.sweep_value,
            runs: g.rows.len(),
            feasible,
            mean_energy_norm: m,
            ci_lo: lo,
            ci_hi: hi,
            ci_method: CI_METHOD,
            mean_wall_ms: wall,
            energy_ratio,
            time_ratio,
        });
    }
    Ok(out)
}

/// Reads result files and summarizes them, labelling groups by file path
/// (`path#k` for the k-th repetition of a path).
pub fn compare(files: &[&Path], reference: Option<Algorithm>, boot: &BootstrapOptions) -> Result<Vec<SummaryRow>> {
    let mut sets = Vec::with_capacity(files.len());
    for (k, path) in files.iter().enumerate() {
        let rows = read_results_file(path).map_err(|e| match e {
            Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let mut label = path.display().to_string();
        let repeats = files[..k].iter().filter(|p| *p == path).count();
        if repeats > 0 {
            label = format!("{label}#{}", repeats + 1);
        }
        sets.push((label, rows));
    }
    summarize(&sets, reference, boot)
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
