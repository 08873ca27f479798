//! Sensor data ingestion and preprocessing.
//!
//! Raw files become per-subject [`RawStream`]s, which are cut into
//! [`SensorWindow`]s, split into train/test, standardized with train-only
//! statistics and optionally label-masked.

mod cache;
mod config;
mod dsa;
mod pamap2;
mod synthetic;
mod window;

use cladnet_core::Tensor64;
use serde::{Deserialize, Serialize};

pub use cache::{file_checksum, prepare_dataset, PrepareStats, PreparedDataset, SubjectStats};
pub use config::{
    ActivityMapping, BodyPartSpec, ChannelSpec, DatasetConfig, DatasetKind, SyntheticConfig,
};
pub use dsa::parse_dsa;
pub use pamap2::parse_pamap2;
pub use synthetic::generate_synthetic;
pub use window::{
    fit_channel_stats, mask_labels, segment_windows, split_train_test, standardize_subject,
    window_stride,
};

/// One subject's unwindowed recording: `samples` is `[n × channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawStream {
    pub subject: u32,
    pub channel_names: Vec<String>,
    pub samples: Vec<f64>,
    pub labels: Vec<Option<usize>>,
}

impl RawStream {
    pub fn new(subject: u32, channel_names: Vec<String>) -> Self {
        Self {
            subject,
            channel_names,
            samples: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, row: &[f64], label: Option<usize>) {
        debug_assert_eq!(row.len(), self.channels());
        self.samples.extend_from_slice(row);
        self.labels.push(label);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.channels();
        &self.samples[i * d..(i + 1) * d]
    }
}

/// Fixed-length multichannel segment: `data` is `[len × channels]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorWindow {
    pub data: Tensor64,
    pub subject: u32,
    pub label: Option<usize>,
}

impl SensorWindow {
    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }
}

/// Per-channel standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A subject's windows after splitting; `stats` come from `train` only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectData {
    pub subject: u32,
    pub train: Vec<SensorWindow>,
    pub test: Vec<SensorWindow>,
    pub stats: Option<ChannelStats>,
}

/// Counters from parsing raw files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows_kept: usize,
    pub dropped_activity: usize,
    pub dropped_nan: usize,
    pub warnings: Vec<String>,
}

impl ParseReport {
    pub fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

/// Leading run of digits after the last non-digit prefix, e.g. `subject101` → 101.
pub(crate) fn trailing_number(s: &str) -> Option<u32> {
    let digits: String = s
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}
