use cladnet_core::{Checkpoint, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ewc::{ewc_penalty, ewc_prepare, FisherBatch, FisherInfo};
use super::metrics::AccuracyMatrix;
use super::replay::{ReplayBuffer, ReplayItem};
use super::strategy::{ResolvedStrategy, StrategyConfig};
use crate::classifier::{Classifier, CnnConfig, ModelSnapshot, Penalty, SupervisedConfig, SupervisedTrainer};
use crate::data::{PreparedDataset, SensorWindow};
use crate::error::{Error, Result};
use crate::ssl::{SslConfig, SslTrainer};
use crate::sslnet::{stack_windows, BodyPartition, Transformer, TransformerConfig};

/// Read access to a subject-ordered dataset. `begin_task` is called before
/// any data of task `i` is touched, which lets wrappers audit access.
pub trait StreamSource {
    fn num_subjects(&self) -> usize;
    fn subject_id(&self, i: usize) -> u32;
    fn train_windows(&self, i: usize) -> &[SensorWindow];
    fn test_windows(&self, i: usize) -> &[SensorWindow];
    fn begin_task(&self, _i: usize) {}
}

impl StreamSource for PreparedDataset {
    fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    fn subject_id(&self, i: usize) -> u32 {
        self.subjects[i].subject
    }

    fn train_windows(&self, i: usize) -> &[SensorWindow] {
        &self.subjects[i].train
    }

    fn test_windows(&self, i: usize) -> &[SensorWindow] {
        &self.subjects[i].test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Supervised epochs per subject.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate of the self-supervised phase; `lr` when unset.
    pub ssl_lr: Option<f64>,
    /// Windows per forward pass during evaluation.
    pub eval_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            ssl_lr: None,
            eval_chunk: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.eval_chunk == 0 {
            return Err(Error::Config("eval_chunk must be positive".into()));
        }
        for (name, lr) in [("lr", Some(self.lr)), ("ssl_lr", self.ssl_lr)] {
            if let Some(lr) = lr {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive, got {lr}")));
                }
            }
        }
        Ok(())
    }
}

/// Everything `run_stream` needs besides the data and the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub strategy: StrategyConfig,
    pub ssl: SslConfig,
    pub transformer: TransformerConfig,
    pub cnn: CnnConfig,
    pub train: TrainConfig,
    pub partition: BodyPartition,
    pub num_classes: usize,
}

impl RunSpec {
    pub fn validate(&self) -> Result<ResolvedStrategy> {
        let resolved = self.strategy.resolve()?;
        self.train.validate()?;
        self.cnn.validate()?;
        if resolved.transformer {
            self.transformer.validate()?;
            self.ssl.validate()?;
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        Ok(resolved)
    }
}

/// Training summary of one subject.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskLog {
    pub subject: u32,
    pub ssl_steps: usize,
    pub ssl_loss_first: Option<f64>,
    pub ssl_loss_last: Option<f64>,
    pub supervised_steps: usize,
    pub skipped_batches: usize,
    pub ce_last: Option<f64>,
    pub distill_last: Option<f64>,
}

pub struct StreamResult<T: Scalar> {
    pub matrix: AccuracyMatrix,
    pub logs: Vec<TaskLog>,
    /// Model state after each subject, namespaces `transformer` and `classifier`.
    pub checkpoints: Vec<Checkpoint>,
    pub transformer: Option<Transformer<T>>,
    pub classifier: Classifier<T>,
}

/// Independent random streams so that enabling one mechanism never shifts
/// the randomness seen by another.
struct Seeds {
    transformer: u64,
    classifier: u64,
    ssl: u64,
    shuffle: u64,
    replay: u64,
    fisher: u64,
}

impl Seeds {
    fn derive(seed: u64) -> Self {
        let mut m = ChaCha8Rng::seed_from_u64(seed);
        Self {
            transformer: m.random(),
            classifier: m.random(),
            ssl: m.random(),
            shuffle: m.random(),
            replay: m.random(),
            fisher: m.random(),
        }
    }
}

fn cast_windows<T: Scalar>(windows: &[SensorWindow]) -> Vec<Tensor<T>> {
    windows.iter().map(|w| w.data.cast()).collect()
}

fn select_rows<T: Scalar>(m: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let w = m.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * w);
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    Tensor::new([rows.len(), w], data).expect("row-aligned data")
}

fn stack_indexed<T: Scalar>(windows: &[Tensor<T>], idx: &[usize]) -> Result<Tensor<T>> {
    let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| &windows[i]).collect();
    stack_windows(&refs)
}

fn represent<T: Scalar>(net: Option<&Transformer<T>>, windows: &[&Tensor<T>], chunk: usize) -> Result<Option<Tensor<T>>> {
    net.map(|n| n.represent_windows(windows, chunk)).transpose()
}

/// Accuracy of the current models on labeled windows.
pub fn evaluate<T: Scalar>(
    net: Option<&Transformer<T>>,
    classifier: &Classifier<T>,
    windows: &[SensorWindow],
    chunk: usize,
) -> Result<f64> {
    let labeled: Vec<&SensorWindow> = windows.iter().filter(|w| w.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::Data("no labeled test windows to evaluate".into()));
    }
    let mut correct = 0usize;
    for part in labeled.chunks(chunk) {
        let xs: Vec<Tensor<T>> = part.iter().map(|w| w.data.cast()).collect();
        let refs: Vec<&Tensor<T>> = xs.iter().collect();
        let x = stack_windows(&refs)?;
        let r = represent(net, &refs, chunk)?;
        let pred = classifier.predict(&x, r.as_ref())?;
        correct += pred.iter().zip(part).filter(|(p, w)| Some(**p) == w.label).count();
    }
    Ok(correct as f64 / labeled.len() as f64)
}

/// Trains on the subjects in order and evaluates on every subject's test
/// set after each one. Only task `t`'s training windows are read while
/// training on task `t`; earlier data survives only inside the replay
/// buffer of the ER strategy.
pub fn run_stream<T: Scalar, S: StreamSource + ?Sized>(source: &S, spec: &RunSpec, seed: u64) -> Result<StreamResult<T>> {
    let resolved = spec.validate()?;
    let tasks = source.num_subjects();
    if tasks < 2 {
        return Err(Error::Config(format!("a continual stream needs at least 2 subjects, got {tasks}")));
    }
    let seeds = Seeds::derive(seed);
    let channels = spec.partition.channels;
    let chunk = spec.train.eval_chunk;
    let batch_size = spec.train.batch_size;

    let mut net = if resolved.transformer {
        Some(Transformer::<T>::new(spec.transformer.clone(), spec.partition.clone(), seeds.transformer)?)
    } else {
        None
    };
    let d_model = net.as_ref().map_or(0, Transformer::d_model);
    let mut classifier = Classifier::<T>::new(spec.cnn.clone(), channels, d_model, spec.num_classes, seeds.classifier)?;
    let mut ssl_trainer = match &net {
        Some(n) => Some(SslTrainer::new(spec.ssl.clone(), n, spec.train.ssl_lr.unwrap_or(spec.train.lr), seeds.ssl)?),
        None => None,
    };
    let (lambda, mode) = resolved.distill.unwrap_or((0.0, Default::default()));
    let mut sup = SupervisedTrainer::new(
        SupervisedConfig {
            lambda_distill: lambda,
            distill_mode: mode,
        },
        spec.train.lr,
    )?;
    let ssl_epochs = spec.ssl.epochs.unwrap_or(spec.train.epochs);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seeds.shuffle);
    let mut replay_rng = ChaCha8Rng::seed_from_u64(seeds.replay);
    let mut fisher_rng = ChaCha8Rng::seed_from_u64(seeds.fisher);
    let mut buffer = resolved.replay.as_ref().map(|r| ReplayBuffer::new(r.capacity));
    let mut fisher: Option<FisherInfo<T>> = None;
    let mut teacher: Option<ModelSnapshot<T>> = None;

    let mut matrix = AccuracyMatrix::new(tasks);
    let mut logs = Vec::with_capacity(tasks);
    let mut checkpoints = Vec::with_capacity(tasks);

    for t in 0..tasks {
        source.begin_task(t);
        let subject = source.subject_id(t);
        let train = source.train_windows(t);
        if train.iter().any(|w| w.channels() != channels) {
            return Err(Error::Data(format!("subject {subject}: window channel count differs from the partition")));
        }
        let xs = cast_windows::<T>(train);
        let mut log = TaskLog {
            subject,
            ..TaskLog::default()
        };

        if let (Some(net), Some(trainer)) = (net.as_mut(), ssl_trainer.as_mut()) {
            let mut order: Vec<usize> = (0..xs.len()).collect();
            for _ in 0..ssl_epochs {
                order.shuffle(&mut shuffle_rng);
                for batch in order.chunks(batch_size).filter(|b| b.len() >= 2) {
                    let refs: Vec<&Tensor<T>> = batch.iter().map(|&i| &xs[i]).collect();
                    let loss = trainer.step(net, &refs)?;
                    log.ssl_loss_first.get_or_insert(loss);
                    log.ssl_loss_last = Some(loss);
                    log.ssl_steps += 1;
                }
            }
        }

        let refs: Vec<&Tensor<T>> = xs.iter().collect();
        let r_all = represent(net.as_ref(), &refs, chunk)?;
        let labeled: Vec<usize> = (0..train.len()).filter(|&i| train[i].label.is_some()).collect();
        let replay_k = resolved
            .replay
            .as_ref()
            .map_or(0, |r| (r.fraction * batch_size as f64).round() as usize);

        let mut order = labeled.clone();
        for _ in 0..spec.train.epochs {
            order.shuffle(&mut shuffle_rng);
            for batch in order.chunks(batch_size) {
                let mut x = stack_indexed(&xs, batch)?;
                let mut r = r_all.as_ref().map(|r| select_rows(r, batch));
                let mut labels: Vec<usize> = batch.iter().map(|&i| train[i].label.expect("labeled")).collect();

                if let Some(buf) = &buffer {
                    let replayed = buf.sample(replay_k, &mut replay_rng);
                    if !replayed.is_empty() {
                        let rx: Vec<Tensor<T>> = replayed.iter().map(|it| it.data.cast()).collect();
                        let rrefs: Vec<&Tensor<T>> = rx.iter().collect();
                        let mut all: Vec<&Tensor<T>> = batch.iter().map(|&i| &xs[i]).collect();
                        all.extend(&rrefs);
                        x = stack_windows(&all)?;
                        if let (Some(r0), Some(rr)) = (r.as_ref(), represent(net.as_ref(), &rrefs, chunk)?) {
                            let mut data = r0.data().to_vec();
                            data.extend_from_slice(rr.data());
                            r = Some(Tensor::new([all.len(), r0.shape()[1]], data)?);
                        }
                        labels.extend(replayed.iter().map(|it| it.label));
                    }
                }

                let penalty_fn;
                let penalty: Option<Penalty<'_, T>> = match (&fisher, &resolved.ewc) {
                    (Some(info), Some(ewc)) => {
                        let lambda = ewc.lambda;
                        penalty_fn = move |tape: &mut cladnet_core::Tape<T>, bind: &cladnet_core::Binding| {
                            ewc_penalty(tape, bind, info, lambda)
                        };
                        Some(&penalty_fn)
                    }
                    _ => None,
                };
                match sup.step(&mut classifier, &x, r.as_ref(), &labels, teacher.as_ref(), penalty)? {
                    Some(report) => {
                        log.supervised_steps += 1;
                        log.ce_last = Some(report.ce);
                        log.distill_last = teacher.as_ref().map(|_| report.distill);
                    }
                    None => log.skipped_batches += 1,
                }
            }
        }
        if labeled.is_empty() {
            log::warn!("subject {subject}: no labeled training windows, supervised phase skipped");
        }

        if let Some(buf) = buffer.as_mut() {
            for &i in &labeled {
                buf.insert(
                    ReplayItem {
                        data: train[i].data.clone(),
                        label: train[i].label.expect("labeled"),
                        subject,
                    },
                    &mut replay_rng,
                );
            }
        }
        if let Some(ewc) = &resolved.ewc {
            if !labeled.is_empty() {
                let mut order = labeled.clone();
                order.shuffle(&mut fisher_rng);
                let batches = order
                    .chunks(batch_size)
                    .take(ewc.batches)
                    .map(|b| {
                        Ok(FisherBatch {
                            x: stack_indexed(&xs, b)?,
                            r: r_all.as_ref().map(|r| select_rows(r, b)),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let info = ewc_prepare(&classifier, &batches)?;
                match fisher.as_mut() {
                    Some(f) => f.accumulate(info),
                    None => fisher = Some(info),
                }
            }
        }
        if resolved.distill.is_some() {
            teacher = Some(ModelSnapshot::new(&classifier, subject));
        }

        for s in 0..tasks {
            let acc = evaluate(net.as_ref(), &classifier, source.test_windows(s), chunk)?;
            matrix.set(s, t, acc);
        }
        let mut ck = Checkpoint::new::<T>();
        if let Some(n) = &net {
            ck.insert("transformer", &n.params);
        }
        ck.insert("classifier", &classifier.params);
        checkpoints.push(ck);
        log::info!(
            "subject {subject} ({}/{tasks}): acc on it {:.3}, ssl steps {}, supervised steps {}",
            t + 1,
            matrix.get(t, t),
            log.ssl_steps,
            log.supervised_steps
        );
        logs.push(log);
    }

    Ok(StreamResult {
        matrix,
        logs,
        checkpoints,
        transformer: net,
        classifier,
    })
}
