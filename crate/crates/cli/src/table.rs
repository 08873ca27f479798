//! Versioned CSV files: a `# cladnet-<kind> v<N> key=value ...` line, a
//! header row, then records.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use cladnet::{Error, Result};

pub const VERSION: u32 = 1;

/// Creates `path`, writes the format line and returns a CSV writer
/// positioned for the header row.
pub fn writer(path: &Path, kind: &str, meta: &[(&str, &str)]) -> Result<csv::Writer<File>> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut line = format!("# cladnet-{kind} v{VERSION}");
    for (k, v) in meta {
        line.push_str(&format!(" {k}={v}"));
    }
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// A parsed versioned CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            file: path.to_path_buf(),
            line,
            msg,
        };
        let first = text.lines().next().unwrap_or_default();
        let mut words = first
            .strip_prefix("# cladnet-")
            .ok_or_else(|| parse_err(1, "missing format line".into()))?
            .split_whitespace();
        let kind = words.next().unwrap_or_default().to_string();
        let version = words.next().unwrap_or_default();
        if version != format!("v{VERSION}") {
            return Err(parse_err(1, format!("unsupported version {version:?}")));
        }
        let meta = words
            .filter_map(|w| w.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = reader.headers()?.iter().map(str::to_string).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, csv::Error>>()?;
        Ok(Self {
            kind,
            meta,
            header,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{} table has no column {name:?}", self.kind)))
    }
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut w = writer(&path, "demo", &[("mode", "x")]).unwrap();
        w.write_record(["a", "b"]).unwrap();
        w.write_record(["1", "two, quoted"]).unwrap();
        w.flush().unwrap();
        drop(w);
        let t = Table::read(&path).unwrap();
        assert_eq!(t.kind, "demo");
        assert_eq!(t.meta["mode"], "x");
        assert_eq!(t.header, ["a", "b"]);
        assert_eq!(t.rows, [vec!["1".to_string(), "two, quoted".to_string()]]);
    }

    #[test]
    fn rejects_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "# cladnet-demo v9\na\n1\n").unwrap();
        assert!(Table::read(&path).is_err());
    }

    #[test]
    fn single_value_has_zero_spread() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
