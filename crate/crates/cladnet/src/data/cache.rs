use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    generate_synthetic, mask_labels, parse_dsa, parse_pamap2, segment_windows, split_train_test,
    standardize_subject, BodyPartSpec, DatasetConfig, DatasetKind, ParseReport, RawStream,
    SubjectData,
};
use crate::error::{Error, Result};

/// Windowed, split and standardized dataset, in subject presentation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub format: String,
    pub version: u32,
    pub kind: DatasetKind,
    pub channel_names: Vec<String>,
    pub body_parts: Vec<BodyPartSpec>,
    pub query_part: String,
    pub num_classes: usize,
    pub window_len: usize,
    pub label_fraction: f64,
    pub subjects: Vec<SubjectData>,
}

/// Summary written next to the cache.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareStats {
    pub parse: ParseReport,
    pub subjects: Vec<SubjectStats>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectStats {
    pub subject: u32,
    pub train_windows: usize,
    pub test_windows: usize,
    pub labeled_train_windows: usize,
    /// Window count per class over train and test.
    pub class_counts: BTreeMap<usize, usize>,
}

impl PreparedDataset {
    pub const FORMAT: &'static str = "cladnet-cache";
    pub const VERSION: u32 = 1;

    pub fn window_count(&self) -> usize {
        self.subjects.iter().map(|s| s.train.len() + s.test.len()).sum()
    }

    /// Hex SHA-256 of the serialized cache; equal to the checksum of the
    /// file written by [`save`](Self::save).
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_string(self)?.as_bytes())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: Self = serde_json::from_str(&text)?;
        if ds.format != Self::FORMAT || ds.version != Self::VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported cache {} v{}",
                path.display(),
                ds.format,
                ds.version
            )));
        }
        Ok(ds)
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn load_raw(cfg: &DatasetConfig) -> Result<(Vec<RawStream>, ParseReport)> {
    let root = || {
        cfg.root
            .as_deref()
            .ok_or_else(|| Error::Config(format!("dataset.root is required for {}", cfg.kind.as_str())))
    };
    match cfg.kind {
        DatasetKind::Pamap2 => parse_pamap2(root()?, cfg),
        DatasetKind::Dsa => parse_dsa(root()?, cfg),
        DatasetKind::Synthetic => {
            let streams = generate_synthetic(cfg)?;
            let rows_kept = streams.iter().map(RawStream::len).sum();
            Ok((
                streams,
                ParseReport {
                    rows_kept,
                    ..ParseReport::default()
                },
            ))
        }
    }
}

/// Runs the full preprocessing pipeline described by `cfg`.
pub fn prepare_dataset(cfg: &DatasetConfig) -> Result<(PreparedDataset, PrepareStats)> {
    cfg.validate()?;
    let window_len = cfg.window_len()?;
    let (mut raw, mut report) = load_raw(cfg)?;

    raw.sort_by_key(|s| s.subject);
    if !cfg.subject_order.is_empty() {
        let mut ordered = Vec::with_capacity(cfg.subject_order.len());
        for id in &cfg.subject_order {
            let pos = raw
                .iter()
                .position(|s| s.subject == *id)
                .ok_or_else(|| Error::Config(format!("subject_order names unknown subject {id}")))?;
            ordered.push(raw.swap_remove(pos));
        }
        raw = ordered;
    }

    let mut subjects = Vec::with_capacity(raw.len());
    let mut stats = Vec::with_capacity(raw.len());
    let mut max_label = None;
    for stream in &raw {
        let windows = segment_windows(stream, window_len, cfg.overlap);
        if windows.len() < 2 {
            report.warn(format!(
                "subject {}: {} window(s), too few to split; skipped",
                stream.subject,
                windows.len()
            ));
            continue;
        }
        let (train, test) = split_train_test(windows, cfg.train_fraction, cfg.seed)?;
        let mut subject = SubjectData {
            subject: stream.subject,
            train,
            test,
            stats: None,
        };
        standardize_subject(&mut subject);

        let mut class_counts = BTreeMap::new();
        for w in subject.train.iter().chain(&subject.test) {
            if let Some(l) = w.label {
                *class_counts.entry(l).or_insert(0) += 1;
                max_label = max_label.max(Some(l));
            }
        }
        subject.train = mask_labels(&subject.train, cfg.label_fraction, cfg.seed);
        stats.push(SubjectStats {
            subject: subject.subject,
            train_windows: subject.train.len(),
            test_windows: subject.test.len(),
            labeled_train_windows: subject.train.iter().filter(|w| w.label.is_some()).count(),
            class_counts,
        });
        subjects.push(subject);
    }

    let mapped = cfg.activities();
    let num_classes = if mapped.is_empty() {
        max_label.map_or(0, |m| m + 1)
    } else {
        mapped.iter().map(|m| m.class + 1).max().unwrap_or(0)
    };

    let dataset = PreparedDataset {
        format: PreparedDataset::FORMAT.into(),
        version: PreparedDataset::VERSION,
        kind: cfg.kind,
        channel_names: cfg.channels().into_iter().map(|c| c.name).collect(),
        body_parts: cfg.body_parts(),
        query_part: cfg.query_part(),
        num_classes,
        window_len,
        label_fraction: cfg.label_fraction,
        subjects,
    };
    Ok((
        dataset,
        PrepareStats {
            parse: report,
            subjects: stats,
        },
    ))
}
