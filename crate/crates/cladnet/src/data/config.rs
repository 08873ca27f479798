use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Pamap2,
    Dsa,
    #[default]
    Synthetic,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Pamap2 => "pamap2",
            DatasetKind::Dsa => "dsa",
            DatasetKind::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pamap2" => Ok(DatasetKind::Pamap2),
            "dsa" => Ok(DatasetKind::Dsa),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        }
    }
}

/// A named channel read from a 0-based column of the raw files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    pub column: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyPartSpec {
    pub name: String,
    pub channels: Vec<String>,
}

/// Raw activity identifier (as written in the files) mapped to a class index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityMapping {
    pub raw: String,
    pub class: usize,
}

/// Parameters of the synthetic stream generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub subjects: usize,
    pub classes: usize,
    pub parts: usize,
    pub channels_per_part: usize,
    pub windows_per_subject: usize,
    /// Activity segment length, in window strides.
    pub block_windows: usize,
    /// Per-class base frequencies in Hz; cycled if shorter than `classes`.
    pub class_frequencies: Vec<f64>,
    pub amplitude: f64,
    pub noise: f64,
    /// Largest per-subject sensor rotation, in radians.
    pub rotation: f64,
    /// Largest relative per-subject tempo change.
    pub tempo: f64,
    /// Largest per-subject channel offset and log-gain.
    pub offset: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            subjects: 4,
            classes: 3,
            parts: 2,
            channels_per_part: 3,
            windows_per_subject: 300,
            block_windows: 6,
            class_frequencies: vec![1.0, 2.0, 3.0],
            amplitude: 1.0,
            noise: 0.3,
            rotation: 1.2,
            tempo: 0.15,
            offset: 0.5,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub root: Option<PathBuf>,
    /// Samples per second; kind default when absent.
    pub sampling_rate: Option<f64>,
    pub window_seconds: f64,
    pub overlap: f64,
    /// Channel-to-column map; kind default when empty.
    pub channels: Vec<ChannelSpec>,
    /// Body-part grouping by channel name; kind default when empty.
    pub body_parts: Vec<BodyPartSpec>,
    /// Name of the query body part; kind default when absent.
    pub query_part: Option<String>,
    /// Activity remapping; kind default when empty.
    pub activities: Vec<ActivityMapping>,
    /// Expected row width of the raw files; kind default when absent.
    pub expected_columns: Option<usize>,
    pub train_fraction: f64,
    /// Fraction of training windows that keep their labels.
    pub label_fraction: f64,
    pub seed: u64,
    /// Only these subjects (all when empty).
    pub subjects: Vec<u32>,
    /// Presentation order (ascending id when empty).
    pub subject_order: Vec<u32>,
    pub synthetic: SyntheticConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            root: None,
            sampling_rate: None,
            window_seconds: 2.0,
            overlap: 0.5,
            channels: Vec::new(),
            body_parts: Vec::new(),
            query_part: None,
            activities: Vec::new(),
            expected_columns: None,
            train_fraction: 0.8,
            label_fraction: 1.0,
            seed: 0,
            subjects: Vec::new(),
            subject_order: Vec::new(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

const IMU_AXES: [(&str, usize); 9] = [
    ("acc_x", 0),
    ("acc_y", 1),
    ("acc_z", 2),
    ("gyro_x", 6),
    ("gyro_y", 7),
    ("gyro_z", 8),
    ("mag_x", 9),
    ("mag_y", 10),
    ("mag_z", 11),
];

const PAMAP2_PARTS: [(&str, usize); 3] = [("hand", 4), ("chest", 21), ("ankle", 38)];
const PAMAP2_ACTIVITIES: [u32; 12] = [1, 2, 3, 4, 5, 6, 7, 12, 13, 16, 17, 24];
const DSA_PARTS: [&str; 5] = ["torso", "right_arm", "left_arm", "right_leg", "left_leg"];
const DSA_AXES: [&str; 9] = [
    "acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "mag_x", "mag_y", "mag_z",
];

impl DatasetConfig {
    pub fn for_kind(kind: DatasetKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate.unwrap_or(match self.kind {
            DatasetKind::Pamap2 => 100.0,
            DatasetKind::Dsa => 25.0,
            DatasetKind::Synthetic => 16.0,
        })
    }

    pub fn expected_columns(&self) -> usize {
        self.expected_columns.unwrap_or(match self.kind {
            DatasetKind::Pamap2 => 54,
            DatasetKind::Dsa => 45,
            DatasetKind::Synthetic => self.synthetic.parts * self.synthetic.channels_per_part,
        })
    }

    /// Window length in samples.
    pub fn window_len(&self) -> Result<usize> {
        let raw = self.window_seconds * self.sampling_rate();
        let n = raw.round();
        if n < 1.0 || (raw - n).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "window_seconds × sampling_rate = {raw} is not a positive integer"
            )));
        }
        Ok(n as usize)
    }

    pub fn channels(&self) -> Vec<ChannelSpec> {
        if !self.channels.is_empty() {
            return self.channels.clone();
        }
        match self.kind {
            DatasetKind::Pamap2 => PAMAP2_PARTS
                .iter()
                .flat_map(|&(part, acc)| {
                    IMU_AXES.iter().map(move |&(axis, off)| ChannelSpec {
                        name: format!("{part}_{axis}"),
                        column: acc + off,
                    })
                })
                .collect(),
            DatasetKind::Dsa => DSA_PARTS
                .iter()
                .enumerate()
                .flat_map(|(u, part)| {
                    DSA_AXES.iter().enumerate().map(move |(a, axis)| ChannelSpec {
                        name: format!("{part}_{axis}"),
                        column: 9 * u + a,
                    })
                })
                .collect(),
            DatasetKind::Synthetic => {
                let s = &self.synthetic;
                (0..s.parts)
                    .flat_map(|p| {
                        (0..s.channels_per_part).map(move |c| ChannelSpec {
                            name: format!("part{p}_c{c}"),
                            column: p * s.channels_per_part + c,
                        })
                    })
                    .collect()
            }
        }
    }

    pub fn body_parts(&self) -> Vec<BodyPartSpec> {
        if !self.body_parts.is_empty() {
            return self.body_parts.clone();
        }
        if !self.channels.is_empty() {
            // Custom channels without a grouping: one part holding everything.
            return vec![BodyPartSpec {
                name: "all".into(),
                channels: self.channels.iter().map(|c| c.name.clone()).collect(),
            }];
        }
        let names: Vec<String> = match self.kind {
            DatasetKind::Pamap2 => PAMAP2_PARTS.iter().map(|p| p.0.to_string()).collect(),
            DatasetKind::Dsa => DSA_PARTS.iter().map(|p| p.to_string()).collect(),
            DatasetKind::Synthetic => (0..self.synthetic.parts).map(|p| format!("part{p}")).collect(),
        };
        names
            .into_iter()
            .map(|part| BodyPartSpec {
                channels: self
                    .channels()
                    .into_iter()
                    .filter(|c| c.name.starts_with(&format!("{part}_")))
                    .map(|c| c.name)
                    .collect(),
                name: part,
            })
            .collect()
    }

    pub fn query_part(&self) -> String {
        if let Some(q) = &self.query_part {
            return q.clone();
        }
        match self.kind {
            DatasetKind::Pamap2 => "hand".into(),
            DatasetKind::Dsa => "right_arm".into(),
            DatasetKind::Synthetic => self
                .body_parts()
                .first()
                .map(|p| p.name.clone())
                .unwrap_or_default(),
        }
    }

    /// Explicit activity remapping. Empty for DSA by default, in which case
    /// activity directories are numbered in sorted order.
    pub fn activities(&self) -> Vec<ActivityMapping> {
        if !self.activities.is_empty() {
            return self.activities.clone();
        }
        match self.kind {
            DatasetKind::Pamap2 => PAMAP2_ACTIVITIES
                .iter()
                .enumerate()
                .map(|(class, id)| ActivityMapping {
                    raw: id.to_string(),
                    class,
                })
                .collect(),
            DatasetKind::Dsa => Vec::new(),
            DatasetKind::Synthetic => (0..self.synthetic.classes)
                .map(|c| ActivityMapping {
                    raw: c.to_string(),
                    class: c,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label_fraction {} outside (0, 1]",
                self.label_fraction
            )));
        }
        let len = self.window_len()?;
        let stride = (len as f64 * (1.0 - self.overlap)).round() as usize;
        if stride == 0 {
            return Err(Error::Config("window stride rounds to zero".into()));
        }
        let channels = self.channels();
        let names: Vec<&str> = channels.iter().map(|c| c.name.as_str()).collect();
        for part in self.body_parts() {
            for ch in &part.channels {
                if !names.contains(&ch.as_str()) {
                    return Err(Error::Config(format!(
                        "body part {:?} names unknown channel {ch:?}",
                        part.name
                    )));
                }
            }
        }
        if !self.body_parts().iter().any(|p| p.name == self.query_part()) {
            return Err(Error::Config(format!(
                "query part {:?} is not a configured body part",
                self.query_part()
            )));
        }
        if self.kind == DatasetKind::Synthetic {
            let s = &self.synthetic;
            if s.subjects == 0 || s.classes == 0 || s.parts == 0 || s.channels_per_part == 0 {
                return Err(Error::Config("synthetic sizes must be positive".into()));
            }
            if s.class_frequencies.is_empty() {
                return Err(Error::Config("synthetic.class_frequencies is empty".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pamap2_defaults() {
        let cfg = DatasetConfig::for_kind(DatasetKind::Pamap2);
        assert_eq!(cfg.window_len().unwrap(), 200);
        assert_eq!(cfg.channels().len(), 27);
        let parts = cfg.body_parts();
        assert_eq!(
            parts.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(),
            ["hand", "chest", "ankle"]
        );
        assert!(parts.iter().all(|p| p.channels.len() == 9));
        assert_eq!(cfg.query_part(), "hand");
        assert_eq!(cfg.activities().len(), 12);
        // hand accelerometer (±16g) x axis is column 4, chest gyro x is 27
        let ch = cfg.channels();
        assert_eq!(ch[0].column, 4);
        assert_eq!(ch.iter().find(|c| c.name == "chest_gyro_x").unwrap().column, 27);
        cfg.validate().unwrap();
    }

    #[test]
    fn dsa_defaults() {
        let cfg = DatasetConfig::for_kind(DatasetKind::Dsa);
        assert_eq!(cfg.window_len().unwrap(), 50);
        assert_eq!(cfg.channels().len(), 45);
        assert_eq!(cfg.body_parts().len(), 5);
        cfg.validate().unwrap();
    }

    #[test]
    fn fractional_window_is_rejected() {
        let cfg = DatasetConfig {
            window_seconds: 0.33,
            sampling_rate: Some(10.0),
            ..DatasetConfig::default()
        };
        assert!(cfg.window_len().is_err());
    }

    #[test]
    fn overlap_range_checked() {
        let cfg = DatasetConfig {
            overlap: 1.0,
            ..DatasetConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<DatasetConfig>("kind = \"dsa\"\nbogus = 1\n");
        assert!(err.is_err());
    }
}
