//! The `report` command: aggregates every run found under a directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cladnet::{Error, Result};

use crate::experiment::{RESULTS_FILE, SUMMARY_FILE};
use crate::table::{self, mean_std, Table};

pub const REPORT_FILE: &str = "report.csv";
pub const CURVES_FILE: &str = "curves.csv";

/// Per-strategy means and standard deviations over runs.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyRow {
    pub strategy: String,
    pub runs: usize,
    pub fa: (f64, f64),
    pub fm: (f64, f64),
    pub la: (f64, f64),
}

/// Accuracy on subject `t` after training through subject `t_prime`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub strategy: String,
    pub t: usize,
    pub t_prime: usize,
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub strategies: Vec<StrategyRow>,
    pub curves: Vec<CurvePoint>,
}

fn find_files(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            find_files(&path, name, out)?;
        } else if path.file_name().is_some_and(|n| n == name) {
            out.push(path);
        }
    }
    Ok(())
}

fn files_named(dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    find_files(dir, name, &mut out)?;
    out.sort();
    Ok(out)
}

fn number<T: std::str::FromStr>(path: &Path, row: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        file: path.to_path_buf(),
        line: row + 3,
        msg: format!("not a number: {s:?}"),
    })
}

/// Reads every `summary.csv` and `results.csv` below `runs`.
pub fn aggregate(runs: &Path) -> Result<Report> {
    let summaries = files_named(runs, SUMMARY_FILE)?;
    let results = files_named(runs, RESULTS_FILE)?;
    if summaries.is_empty() || results.is_empty() {
        return Err(Error::Data(format!("no run results found under {}", runs.display())));
    }

    let mut metrics: BTreeMap<String, [Vec<f64>; 3]> = BTreeMap::new();
    for path in &summaries {
        let t = Table::read(path)?;
        let cols = [t.column("strategy")?, t.column("FA")?, t.column("FM")?, t.column("LA")?];
        for (i, row) in t.rows.iter().enumerate() {
            let entry = metrics.entry(row[cols[0]].clone()).or_default();
            for k in 0..3 {
                entry[k].push(number(path, i, &row[cols[k + 1]])?);
            }
        }
    }
    let strategies = metrics
        .into_iter()
        .map(|(strategy, [fa, fm, la])| StrategyRow {
            strategy,
            runs: fa.len(),
            fa: mean_std(&fa),
            fm: mean_std(&fm),
            la: mean_std(&la),
        })
        .collect();

    let mut cells: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    for path in &results {
        let t = Table::read(path)?;
        let cols = [t.column("strategy")?, t.column("t")?, t.column("t_prime")?, t.column("accuracy")?];
        for (i, row) in t.rows.iter().enumerate() {
            let key = (
                row[cols[0]].clone(),
                number(path, i, &row[cols[1]])?,
                number(path, i, &row[cols[2]])?,
            );
            cells.entry(key).or_default().push(number(path, i, &row[cols[3]])?);
        }
    }
    let curves = cells
        .into_iter()
        .map(|((strategy, t, t_prime), accs)| {
            let (mean, std) = mean_std(&accs);
            CurvePoint {
                strategy,
                t,
                t_prime,
                runs: accs.len(),
                mean,
                std,
            }
        })
        .collect();
    Ok(Report { strategies, curves })
}

/// Aggregates `runs` and writes `report.csv` and `curves.csv` into `out`.
pub fn cmd_report(runs: &Path, out: &Path) -> Result<Report> {
    let report = aggregate(runs)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let path = out.join(REPORT_FILE);
    let mut w = table::writer(&path, "report", &[])?;
    w.write_record(["strategy", "runs", "FA_mean", "FA_std", "FM_mean", "FM_std", "LA_mean", "LA_std"])?;
    for r in &report.strategies {
        w.write_record([
            r.strategy.clone(),
            r.runs.to_string(),
            r.fa.0.to_string(),
            r.fa.1.to_string(),
            r.fm.0.to_string(),
            r.fm.1.to_string(),
            r.la.0.to_string(),
            r.la.1.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join(CURVES_FILE);
    let mut w = table::writer(&path, "curves", &[])?;
    w.write_record(["strategy", "t", "t_prime", "runs", "accuracy_mean", "accuracy_std"])?;
    for c in &report.curves {
        w.write_record([
            c.strategy.clone(),
            c.t.to_string(),
            c.t_prime.to_string(),
            c.runs.to_string(),
            c.mean.to_string(),
            c.std.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
