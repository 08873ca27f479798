//! The `prepare`, `train` and `ablate` commands.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cladnet::augment::AugmentKind;
use cladnet::continual::{run_stream, AccuracyMatrix, RunSpec, StrategyKind, TaskLog};
use cladnet::data::{mask_labels, prepare_dataset, DatasetKind, PrepareStats, PreparedDataset};
use cladnet::ssl::SslLoss;
use cladnet::sslnet::{AttentionMode, BodyPartition};
use cladnet::{Error, Result};
use cladnet_core::{Checkpoint, Scalar};
use serde::Serialize;

use crate::config::{ExperimentConfig, Precision};
use crate::table::{self, mean_std};

pub const CACHE_FILE: &str = "cache.json";
pub const STATS_FILE: &str = "stats.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Flags that take precedence over the configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub dataset: Option<DatasetKind>,
    pub root: Option<PathBuf>,
    pub strategy: Option<StrategyKind>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(k) = self.dataset {
            cfg.dataset.kind = k;
        }
        if let Some(r) = &self.root {
            cfg.dataset.root = Some(r.clone());
        }
        if let Some(s) = self.strategy {
            cfg.strategy.kind = s;
        }
        if let Some(s) = self.seed {
            cfg.run.seeds = vec![s];
        }
        if let Some(e) = self.epochs {
            cfg.run.epochs = e;
        }
        if let Some(c) = &self.cache {
            cfg.run.cache = Some(c.clone());
        }
        if let Some(o) = &self.out {
            cfg.run.out_dir = o.clone();
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Windows, splits and standardizes the configured dataset and writes the
/// cache plus a statistics report into `out`. Returns the cache checksum.
pub fn cmd_prepare(cfg: &ExperimentConfig, out: &Path) -> Result<(String, PrepareStats)> {
    cfg.dataset.validate()?;
    let (ds, stats) = prepare_dataset(&cfg.dataset)?;
    create_dir(out)?;
    let cache = out.join(CACHE_FILE);
    ds.save(&cache)?;
    let stats_path = out.join(STATS_FILE);
    std::fs::write(&stats_path, serde_json::to_string_pretty(&stats)?).map_err(|e| Error::io(&stats_path, e))?;
    log::info!(
        "prepared {} subjects, {} windows into {}",
        ds.subjects.len(),
        ds.window_count(),
        cache.display()
    );
    Ok((ds.checksum()?, stats))
}

/// The cache named by `run.cache` (a file or a directory holding
/// `cache.json`), or a fresh in-memory preparation of `dataset`.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<PreparedDataset> {
    match &cfg.run.cache {
        Some(p) if p.is_dir() => PreparedDataset::load(&p.join(CACHE_FILE)),
        Some(p) => PreparedDataset::load(p),
        None => Ok(prepare_dataset(&cfg.dataset)?.0),
    }
}

/// Outcome of one stream run, independent of the scalar type.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub seed: u64,
    pub matrix: AccuracyMatrix,
    pub logs: Vec<TaskLog>,
    pub checkpoints: Vec<Checkpoint>,
}

fn spec_for(cfg: &ExperimentConfig, ds: &PreparedDataset) -> Result<RunSpec> {
    Ok(RunSpec {
        strategy: cfg.strategy.clone(),
        ssl: cfg.ssl.clone(),
        transformer: cfg.model.transformer.clone(),
        cnn: cfg.model.cnn.clone(),
        train: cfg.run.train(),
        partition: BodyPartition::from_specs(&ds.channel_names, &ds.body_parts, &ds.query_part)?,
        num_classes: ds.num_classes,
    })
}

fn run_typed<T: Scalar>(ds: &PreparedDataset, spec: &RunSpec, seed: u64) -> Result<RunRecord> {
    let res = run_stream::<T, _>(ds, spec, seed)?;
    Ok(RunRecord {
        seed,
        matrix: res.matrix,
        logs: res.logs,
        checkpoints: res.checkpoints,
    })
}

/// Runs every configured seed on `ds`.
pub fn run_seeds(cfg: &ExperimentConfig, ds: &PreparedDataset) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let spec = spec_for(cfg, ds)?;
    spec.validate()?;
    cfg.run
        .seeds
        .iter()
        .map(|&seed| {
            let rec = match cfg.run.precision {
                Precision::F32 => run_typed::<f32>(ds, &spec, seed)?,
                Precision::F64 => run_typed::<f64>(ds, &spec, seed)?,
            };
            let m = &rec.matrix;
            log::info!(
                "{} seed {seed}: FA {:.4} FM {:.4} LA {:.4}",
                cfg.strategy.kind,
                m.final_accuracy(),
                m.forgetting_measure(),
                m.learning_accuracy()
            );
            Ok(rec)
        })
        .collect()
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    label: &'a str,
    dataset_checksum: String,
    subjects: Vec<u32>,
    config: &'a ExperimentConfig,
    runs: Vec<ManifestRun<'a>>,
}

#[derive(Serialize)]
struct ManifestRun<'a> {
    seed: u64,
    final_accuracy: f64,
    forgetting_measure: f64,
    learning_accuracy: f64,
    tasks: &'a [TaskLog],
}

/// Writes results, summary, checkpoints and manifest for `runs` into `out`.
pub fn write_run_outputs(
    out: &Path,
    label: &str,
    cfg: &ExperimentConfig,
    ds: &PreparedDataset,
    runs: &[RunRecord],
) -> Result<()> {
    create_dir(out)?;
    let mode = cfg.strategy.distill_mode.as_str();

    let mut results = table::writer(&out.join(RESULTS_FILE), "results", &[("distill_mode", mode)])?;
    results.write_record(["strategy", "seed", "t", "t_prime", "accuracy"])?;
    let mut summary = table::writer(&out.join(SUMMARY_FILE), "summary", &[("distill_mode", mode)])?;
    summary.write_record(["strategy", "seed", "FA", "FM", "LA"])?;
    for rec in runs {
        let seed = rec.seed.to_string();
        for (t, row) in rec.matrix.rows().iter().enumerate() {
            for (tp, acc) in row.iter().enumerate() {
                results.write_record([label, &seed, &(t + 1).to_string(), &(tp + 1).to_string(), &acc.to_string()])?;
            }
        }
        let m = &rec.matrix;
        summary.write_record([
            label,
            &seed,
            &m.final_accuracy().to_string(),
            &m.forgetting_measure().to_string(),
            &m.learning_accuracy().to_string(),
        ])?;

        let dir = out.join("checkpoints").join(format!("seed_{}", rec.seed));
        create_dir(&dir)?;
        for (ck, log) in rec.checkpoints.iter().zip(&rec.logs) {
            let path = dir.join(format!("subject_{}.json", log.subject));
            ck.save(&path)?;
        }
    }
    results.flush().map_err(|e| Error::io(out.join(RESULTS_FILE), e))?;
    summary.flush().map_err(|e| Error::io(out.join(SUMMARY_FILE), e))?;

    let manifest = Manifest {
        format: "cladnet-manifest",
        version: 1,
        label,
        dataset_checksum: ds.checksum()?,
        subjects: ds.subjects.iter().map(|s| s.subject).collect(),
        config: cfg,
        runs: runs
            .iter()
            .map(|r| ManifestRun {
                seed: r.seed,
                final_accuracy: r.matrix.final_accuracy(),
                forgetting_measure: r.matrix.forgetting_measure(),
                learning_accuracy: r.matrix.learning_accuracy(),
                tasks: &r.logs,
            })
            .collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Trains the configured strategy for every seed and writes all outputs
/// into `run.out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let runs = run_seeds(cfg, &ds)?;
    write_run_outputs(&cfg.run.out_dir, cfg.strategy.kind.as_str(), cfg, &ds, &runs)?;
    Ok(runs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Components,
    SslLoss,
    Augmentation,
    Attention,
    Labels,
}

impl Axis {
    pub const ALL: [Axis; 5] = [Self::Components, Self::SslLoss, Self::Augmentation, Self::Attention, Self::Labels];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Components => "components",
            Self::SslLoss => "ssl_loss",
            Self::Augmentation => "augmentation",
            Self::Attention => "attention",
            Self::Labels => "labels",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown ablation axis {s:?} (expected components, ssl_loss, augmentation, attention or labels)"
            ))
        })
    }
}

/// Labeled-window fractions compared on the `labels` axis.
pub const LABEL_FRACTIONS: [f64; 3] = [0.1, 0.2, 1.0];

/// One grid cell: a name, the configuration it runs and, on the labels
/// axis, the fraction of training labels it keeps.
#[derive(Clone, Debug)]
pub struct Cell {
    pub name: String,
    pub config: ExperimentConfig,
    pub label_fraction: Option<f64>,
}

/// The cells of `axis`, each derived from `base` with the strategy set to
/// the full model unless the axis itself toggles components.
pub fn ablation_grid(base: &ExperimentConfig, axis: Axis) -> Vec<Cell> {
    let mut full = base.clone();
    full.strategy.kind = StrategyKind::Clad;
    full.strategy.transformer = None;
    full.strategy.distill = None;
    let cell = |name: &str, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut config = full.clone();
        f(&mut config);
        Cell {
            name: name.to_string(),
            config,
            label_fraction: None,
        }
    };
    match axis {
        Axis::Components => vec![
            cell("full", &|_| {}),
            cell("without_distill", &|c| c.strategy.distill = Some(false)),
            cell("without_transformer", &|c| c.strategy.transformer = Some(false)),
            cell("plain", &|c| {
                c.strategy.distill = Some(false);
                c.strategy.transformer = Some(false);
            }),
        ],
        Axis::SslLoss => SslLoss::ALL
            .into_iter()
            .map(|l| cell(l.as_str(), &|c| c.ssl.loss = l))
            .collect(),
        Axis::Augmentation => AugmentKind::ALL
            .into_iter()
            .map(|k| cell(k.as_str(), &|c| c.ssl.augment.kind = k))
            .collect(),
        Axis::Attention => [AttentionMode::Cross, AttentionMode::SelfAttention]
            .into_iter()
            .map(|m| cell(m.as_str(), &|c| c.model.transformer.attention = m))
            .collect(),
        Axis::Labels => LABEL_FRACTIONS
            .into_iter()
            .map(|phi| Cell {
                label_fraction: Some(phi),
                ..cell(&format!("phi_{phi}"), &|_| {})
            })
            .collect(),
    }
}

/// Copy of `ds` keeping `phi` of each subject's training labels.
pub fn relabel(ds: &PreparedDataset, phi: f64, seed: u64) -> Result<PreparedDataset> {
    if ds.label_fraction < 1.0 {
        return Err(Error::Config(format!(
            "the labels axis needs a fully labeled cache, this one keeps {} of its labels",
            ds.label_fraction
        )));
    }
    let mut out = ds.clone();
    out.label_fraction = phi;
    for s in &mut out.subjects {
        s.train = mask_labels(&s.train, phi, seed);
    }
    Ok(out)
}

/// Mean and sample standard deviation of FA, FM and LA over a cell's seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub name: String,
    pub seeds: usize,
    pub fa: (f64, f64),
    pub fm: (f64, f64),
    pub la: (f64, f64),
}

impl CellSummary {
    pub fn from_runs(name: &str, runs: &[RunRecord]) -> Self {
        let stat = |f: fn(&AccuracyMatrix) -> f64| mean_std(&runs.iter().map(|r| f(&r.matrix)).collect::<Vec<_>>());
        Self {
            name: name.to_string(),
            seeds: runs.len(),
            fa: stat(AccuracyMatrix::final_accuracy),
            fm: stat(AccuracyMatrix::forgetting_measure),
            la: stat(AccuracyMatrix::learning_accuracy),
        }
    }
}

/// Runs every cell of `axis` into its own subdirectory of `out` and writes
/// `ablation_<axis>.csv` with one row per cell.
pub fn cmd_ablate(base: &ExperimentConfig, axis: Axis, out: &Path) -> Result<Vec<CellSummary>> {
    base.validate()?;
    let cells = ablation_grid(base, axis);
    for c in &cells {
        c.config.validate()?;
    }
    let ds = load_dataset(base)?;
    create_dir(out)?;
    let mut rows = Vec::with_capacity(cells.len());
    for c in &cells {
        log::info!("ablation {axis}: cell {}", c.name);
        let cell_ds = match c.label_fraction {
            Some(phi) => relabel(&ds, phi, c.config.dataset.seed)?,
            None => ds.clone(),
        };
        let runs = run_seeds(&c.config, &cell_ds)?;
        let label = format!("{axis}={}", c.name);
        write_run_outputs(&out.join(&c.name), &label, &c.config, &cell_ds, &runs)?;
        rows.push(CellSummary::from_runs(&c.name, &runs));
    }

    let path = out.join(format!("ablation_{axis}.csv"));
    let mut w = table::writer(&path, "ablation", &[("axis", axis.as_str())])?;
    w.write_record(["axis", "cell", "seeds", "FA", "FA_std", "FM", "FM_std", "LA", "LA_std"])?;
    for r in &rows {
        w.write_record([
            axis.as_str(),
            &r.name,
            &r.seeds.to_string(),
            &r.fa.0.to_string(),
            &r.fa.1.to_string(),
            &r.fm.0.to_string(),
            &r.fm.1.to_string(),
            &r.la.0.to_string(),
            &r.la.1.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
