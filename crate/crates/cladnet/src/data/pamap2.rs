use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{trailing_number, DatasetConfig, ParseReport, RawStream};
use crate::error::{Error, Result};

const ACTIVITY_COLUMN: usize = 1;

/// Reads every file in `root` as one subject's whitespace-separated
/// recording. Rows with an unmapped activity id or a NaN in any selected
/// channel are dropped and counted.
pub fn parse_pamap2(root: &Path, cfg: &DatasetConfig) -> Result<(Vec<RawStream>, ParseReport)> {
    let mut files: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no subject files in {}", root.display())));
    }

    let mut report = ParseReport::default();
    let mut streams = Vec::with_capacity(files.len());
    for (idx, file) in files.iter().enumerate() {
        let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let subject = trailing_number(stem).unwrap_or(idx as u32);
        if !cfg.subjects.is_empty() && !cfg.subjects.contains(&subject) {
            continue;
        }
        let stream = parse_file(file, subject, cfg, &mut report)?;
        if stream.is_empty() {
            report.warn(format!("{}: no valid rows", file.display()));
        }
        streams.push(stream);
    }
    Ok((streams, report))
}

fn parse_file(file: &Path, subject: u32, cfg: &DatasetConfig, report: &mut ParseReport) -> Result<RawStream> {
    let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    let channels = cfg.channels();
    let width = cfg.expected_columns();
    let activity: HashMap<String, usize> = cfg
        .activities()
        .into_iter()
        .map(|m| (m.raw, m.class))
        .collect();

    let mut stream = RawStream::new(subject, channels.iter().map(|c| c.name.clone()).collect());
    let mut row = vec![0.0f64; channels.len()];
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            file: file.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        if fields.len() != width {
            return Err(parse_err(format!("expected {width} columns, found {}", fields.len())));
        }
        let raw_activity: f64 = fields[ACTIVITY_COLUMN]
            .parse()
            .map_err(|_| parse_err(format!("bad activity id {:?}", fields[ACTIVITY_COLUMN])))?;
        let Some(&class) = activity.get(&format!("{}", raw_activity as i64)) else {
            report.dropped_activity += 1;
            continue;
        };
        for (slot, ch) in row.iter_mut().zip(&channels) {
            let field = fields[ch.column];
            *slot = field
                .parse()
                .map_err(|_| parse_err(format!("bad value {field:?} for {}", ch.name)))?;
        }
        if row.iter().any(|v| !v.is_finite()) {
            report.dropped_nan += 1;
            continue;
        }
        stream.push(&row, Some(class));
        report.rows_kept += 1;
    }
    Ok(stream)
}
