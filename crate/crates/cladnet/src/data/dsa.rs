use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use super::{trailing_number, DatasetConfig, ParseReport, RawStream};
use crate::error::{Error, Result};

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| if want_dirs { p.is_dir() } else { p.is_file() })
        .collect();
    out.sort();
    Ok(out)
}

fn name_of(p: &Path) -> String {
    p.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Reads the `activity/subject/segment` tree of comma-separated segment
/// files. Segments are concatenated per subject in sorted (activity,
/// segment) order.
pub fn parse_dsa(root: &Path, cfg: &DatasetConfig) -> Result<(Vec<RawStream>, ParseReport)> {
    let activity_dirs = sorted_entries(root, true)?;
    if activity_dirs.is_empty() {
        return Err(Error::Data(format!("no activity directories in {}", root.display())));
    }
    let explicit = cfg.activities();
    let activity_class: HashMap<String, usize> = if explicit.is_empty() {
        activity_dirs.iter().enumerate().map(|(i, p)| (name_of(p), i)).collect()
    } else {
        explicit.into_iter().map(|m| (m.raw, m.class)).collect()
    };

    let channels = cfg.channels();
    let names: Vec<String> = channels.iter().map(|c| c.name.clone()).collect();
    let mut report = ParseReport::default();
    let mut width: Option<(usize, PathBuf)> = None;
    let mut streams: BTreeMap<u32, RawStream> = BTreeMap::new();
    let mut row = vec![0.0f64; channels.len()];

    for adir in &activity_dirs {
        let aname = name_of(adir);
        let Some(&class) = activity_class.get(&aname) else {
            report.warn(format!("{}: activity not in the configured map, skipped", adir.display()));
            continue;
        };
        let subject_dirs = sorted_entries(adir, true)?;
        let mut any = false;
        for sdir in subject_dirs {
            let Some(subject) = trailing_number(&name_of(&sdir)) else {
                report.warn(format!("{}: cannot derive a subject id, skipped", sdir.display()));
                continue;
            };
            if !cfg.subjects.is_empty() && !cfg.subjects.contains(&subject) {
                continue;
            }
            for seg in sorted_entries(&sdir, false)? {
                let text = fs::read_to_string(&seg).map_err(|e| Error::io(&seg, e))?;
                let stream = streams
                    .entry(subject)
                    .or_insert_with(|| RawStream::new(subject, names.clone()));
                for (lineno, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                    let parse_err = |msg: String| Error::Parse {
                        file: seg.clone(),
                        line: lineno + 1,
                        msg,
                    };
                    match &width {
                        None => width = Some((fields.len(), seg.clone())),
                        Some((w, first)) if *w != fields.len() => {
                            return Err(parse_err(format!(
                                "{} columns, but {} has {w}",
                                fields.len(),
                                first.display()
                            )))
                        }
                        _ => {}
                    }
                    for (slot, ch) in row.iter_mut().zip(&channels) {
                        let field = fields.get(ch.column).ok_or_else(|| {
                            parse_err(format!("column {} missing for {}", ch.column, ch.name))
                        })?;
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
                    any = true;
                }
            }
        }
        if !any {
            report.warn(format!("{}: no segments, activity absent", adir.display()));
        }
    }
    Ok((streams.into_values().collect(), report))
}
