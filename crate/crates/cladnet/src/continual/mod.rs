//! Subject-sequential training, baseline strategies and the accuracy
//! matrix with its summary metrics.

mod ewc;
mod metrics;
mod replay;
mod strategy;
mod stream;

pub use ewc::{ewc_penalty, ewc_prepare, FisherBatch, FisherInfo};
pub use metrics::AccuracyMatrix;
pub use replay::{ReplayBuffer, ReplayItem};
pub use strategy::{EwcSettings, ReplaySettings, ResolvedStrategy, StrategyConfig, StrategyKind};
pub use stream::{evaluate, run_stream, RunSpec, StreamResult, StreamSource, TaskLog, TrainConfig};
