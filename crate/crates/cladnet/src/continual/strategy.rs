use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::classifier::DistillMode;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Transformer representation plus distillation from the previous snapshot.
    #[default]
    Clad,
    /// Distillation only, CNN path alone.
    Lwf,
    Ewc,
    Er,
    /// Plain fine-tuning.
    Naive,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [Self::Clad, Self::Lwf, Self::Ewc, Self::Er, Self::Naive];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clad => "clad",
            Self::Lwf => "lwf",
            Self::Ewc => "ewc",
            Self::Er => "er",
            Self::Naive => "naive",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            Error::Config(format!("unknown strategy {s:?} (expected clad, lwf, ewc, er or naive)"))
        })
    }
}

/// User-facing strategy settings. `transformer` and `distill` default to
/// what `kind` implies and may be overridden for ablations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub transformer: Option<bool>,
    pub distill: Option<bool>,
    pub lambda_distill: f64,
    pub distill_mode: DistillMode,
    pub ewc_lambda: f64,
    /// Batches drawn for each Fisher estimate.
    pub ewc_batches: usize,
    pub replay_capacity: usize,
    /// Replayed windows per step, as a fraction of the batch size.
    pub replay_fraction: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Clad,
            transformer: None,
            distill: None,
            lambda_distill: 1.0,
            distill_mode: DistillMode::L2Logits,
            ewc_lambda: 100.0,
            ewc_batches: 10,
            replay_capacity: 200,
            replay_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EwcSettings {
    pub lambda: f64,
    pub batches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySettings {
    pub capacity: usize,
    pub fraction: f64,
}

/// What a run actually does, after applying the kind's presets.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedStrategy {
    pub transformer: bool,
    /// `(λ, mode)` when distilling from the previous snapshot.
    pub distill: Option<(f64, DistillMode)>,
    pub ewc: Option<EwcSettings>,
    pub replay: Option<ReplaySettings>,
}

impl StrategyConfig {
    pub fn with_kind(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        nonneg("lambda_distill", self.lambda_distill)?;
        nonneg("ewc_lambda", self.ewc_lambda)?;
        if !(0.0..=1.0).contains(&self.replay_fraction) {
            return Err(Error::Config(format!("replay_fraction must be in [0, 1], got {}", self.replay_fraction)));
        }
        if self.kind == StrategyKind::Ewc && self.ewc_batches == 0 {
            return Err(Error::Config("ewc needs ewc_batches ≥ 1".into()));
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<ResolvedStrategy> {
        self.validate()?;
        let (transformer, distill) = match self.kind {
            StrategyKind::Clad => (true, true),
            StrategyKind::Lwf => (false, true),
            StrategyKind::Ewc | StrategyKind::Er | StrategyKind::Naive => (false, false),
        };
        let transformer = self.transformer.unwrap_or(transformer);
        let distill = self.distill.unwrap_or(distill);
        Ok(ResolvedStrategy {
            transformer,
            distill: distill.then_some((self.lambda_distill, self.distill_mode)),
            ewc: (self.kind == StrategyKind::Ewc).then(|| EwcSettings {
                lambda: self.ewc_lambda,
                batches: self.ewc_batches,
            }),
            replay: (self.kind == StrategyKind::Er).then(|| ReplaySettings {
                capacity: self.replay_capacity,
                fraction: self.replay_fraction,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let clad = StrategyConfig::default().resolve().unwrap();
        assert!(clad.transformer && clad.distill.is_some());
        let naive = StrategyConfig::with_kind(StrategyKind::Naive).resolve().unwrap();
        assert!(!naive.transformer && naive.distill.is_none() && naive.ewc.is_none() && naive.replay.is_none());
        assert!(StrategyConfig::with_kind(StrategyKind::Er).resolve().unwrap().replay.is_some());
    }

    #[test]
    fn parse_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("sgd".parse::<StrategyKind>().is_err());
    }
}
