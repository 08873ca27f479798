//! Supervised path: a residual 1-D CNN whose pooled features are
//! concatenated with the (detached) transformer representation and mapped
//! to class logits, trained with cross entropy plus optional distillation
//! towards a frozen snapshot of the previous model.

use cladnet_core::nn::{self, LAYER_NORM_EPS};
use cladnet_core::{Adam, Binding, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sslnet::{glorot, mean_over_time};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    /// Output channels of each residual block.
    pub widths: Vec<usize>,
    pub convs_per_block: usize,
    /// Odd kernel size; convolutions are padded to keep the length.
    pub kernel: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            widths: vec![32, 64, 128],
            convs_per_block: 4,
            kernel: 5,
            pool_window: 2,
            pool_stride: 2,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("cnn widths must be non-empty and positive".into()));
        }
        if self.convs_per_block == 0 {
            return Err(Error::Config("each cnn block needs at least one convolution".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("cnn kernel must be odd, got {}", self.kernel)));
        }
        if self.pool_window == 0 || self.pool_stride == 0 {
            return Err(Error::Config("pool window and stride must be positive".into()));
        }
        Ok(())
    }

    /// Temporal length after every block, or an error if pooling runs out
    /// of samples.
    pub fn output_len(&self, window_len: usize) -> Result<usize> {
        let mut len = window_len;
        for _ in &self.widths {
            if len < self.pool_window {
                return Err(Error::Config(format!(
                    "window length {window_len} is too short for {} pooled cnn blocks",
                    self.widths.len()
                )));
            }
            len = (len - self.pool_window) / self.pool_stride + 1;
        }
        Ok(len)
    }

    pub fn feature_width(&self) -> usize {
        *self.widths.last().expect("validated widths")
    }
}

/// Which outputs are compared against the teacher.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    /// Squared Euclidean distance between logit vectors.
    #[default]
    L2Logits,
    /// `KL(softmax(teacher) ‖ softmax(student))`.
    KlSoftmax,
}

impl DistillMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DistillMode::L2Logits => "l2_logits",
            DistillMode::KlSoftmax => "kl_softmax",
        }
    }
}

impl FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2_logits" => Ok(Self::L2Logits),
            "kl_softmax" => Ok(Self::KlSoftmax),
            other => Err(Error::Config(format!(
                "unknown distillation mode {other:?} (expected l2_logits or kl_softmax)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CnnBlockIds {
    pub convs: Vec<ConvIds>,
    /// 1×1 projection, present when the block changes the channel count.
    pub shortcut: Option<ParamId>,
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierIds {
    pub blocks: Vec<CnnBlockIds>,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

/// CNN feature extractor plus linear head over `concat(h, r)`. With
/// `d_model == 0` the head sees `h` alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T: Scalar> {
    pub config: CnnConfig,
    pub in_channels: usize,
    pub d_model: usize,
    pub num_classes: usize,
    pub params: ParamStore<T>,
    pub ids: ClassifierIds,
}

impl<T: Scalar> Classifier<T> {
    pub fn new(config: CnnConfig, in_channels: usize, d_model: usize, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if in_channels == 0 || num_classes == 0 {
            return Err(Error::Config("classifier needs at least one channel and one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let k = config.kernel;
        let mut c_in = in_channels;
        let mut blocks = Vec::with_capacity(config.widths.len());
        for (bi, &c_out) in config.widths.iter().enumerate() {
            let mut convs = Vec::with_capacity(config.convs_per_block);
            let mut c = c_in;
            for j in 0..config.convs_per_block {
                let w = glorot::<T>(c_out, c * k, &mut rng).reshape([c_out, c, k])?;
                convs.push(ConvIds {
                    w: params.add(format!("block.{bi}.conv.{j}.w"), w),
                    b: params.add(format!("block.{bi}.conv.{j}.b"), Tensor::zeros([c_out])),
                });
                c = c_out;
            }
            let shortcut = (c_in != c_out).then(|| {
                let w = glorot::<T>(c_out, c_in, &mut rng).reshape([c_out, c_in, 1]).expect("same length");
                params.add(format!("block.{bi}.shortcut.w"), w)
            });
            blocks.push(CnnBlockIds {
                convs,
                shortcut,
                gain: params.add(format!("block.{bi}.ln.gain"), Tensor::ones([c_out])),
                bias: params.add(format!("block.{bi}.ln.bias"), Tensor::zeros([c_out])),
            });
            c_in = c_out;
        }
        let fused = config.feature_width() + d_model;
        let head_w = params.add("head.w", glorot(fused, num_classes, &mut rng));
        let head_b = params.add("head.b", Tensor::zeros([num_classes]));
        Ok(Self {
            config,
            in_channels,
            d_model,
            num_classes,
            params,
            ids: ClassifierIds { blocks, head_w, head_b },
        })
    }

    /// Pooled CNN features `[B × feature_width]` for windows `x: [B × l × d]`.
    pub fn features(&self, tape: &mut Tape<T>, bind: &Binding, x: &Tensor<T>) -> Result<Var> {
        let (batch, _, d) = x.dims3("cnn")?;
        if d != self.in_channels {
            return Err(Error::Tensor(cladnet_core::TensorError::ShapeMismatch {
                op: "cnn",
                dim: "channels",
                expected: self.in_channels,
                got: d,
            }));
        }
        let cfg = &self.config;
        let pad = cfg.kernel / 2;
        let mut u = tape.constant(nn::batch_transpose(x)?);
        let mut rows = None;
        for block in &self.ids.blocks {
            let mut y = u;
            let last = block.convs.len() - 1;
            for (j, conv) in block.convs.iter().enumerate() {
                y = tape.conv1d(y, bind.var(conv.w), Some(bind.var(conv.b)), 1, pad)?;
                if j < last {
                    y = tape.relu(y);
                }
            }
            let y = tape.avg_pool1d(y, cfg.pool_window, cfg.pool_stride)?;
            let y = tape.relu(y);
            let s = match block.shortcut {
                Some(w) => tape.conv1d(u, bind.var(w), None, 1, 0)?,
                None => u,
            };
            let s = tape.avg_pool1d(s, cfg.pool_window, cfg.pool_stride)?;
            let sum = tape.add(y, s)?;

            let shape = tape.value(sum).shape().to_vec();
            let (c, len) = (shape[1], shape[2]);
            let t = tape.batch_transpose(sum)?;
            let flat = tape.reshape(t, &[batch * len, c])?;
            let normed = tape.layer_norm(flat, bind.var(block.gain), bind.var(block.bias), T::lit(LAYER_NORM_EPS))?;
            rows = Some((normed, len));
            let back = tape.reshape(normed, &[batch, len, c])?;
            u = tape.batch_transpose(back)?;
        }
        let (normed, len) = rows.expect("at least one block");
        mean_over_time(tape, normed, batch, len)
    }

    /// Logits `[B × C]`; `r` is detached before fusion.
    pub fn forward(&self, tape: &mut Tape<T>, bind: &Binding, x: &Tensor<T>, r: Option<Var>) -> Result<Var> {
        let h = self.features(tape, bind, x)?;
        fuse_and_classify(tape, h, r, bind.var(self.ids.head_w), bind.var(self.ids.head_b))
    }

    /// Evaluation-mode logits with no gradient bookkeeping.
    pub fn logits(&self, x: &Tensor<T>, r: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bind = self.params.bind_frozen(&mut tape);
        let rv = r.map(|r| tape.constant(r.clone()));
        let out = self.forward(&mut tape, &bind, x, rv)?;
        Ok(tape.value(out).clone())
    }

    /// Arg-max class per window.
    pub fn predict(&self, x: &Tensor<T>, r: Option<&Tensor<T>>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x, r)?))
    }
}

pub fn argmax_rows<T: Scalar>(m: &Tensor<T>) -> Vec<usize> {
    let c = m.shape()[m.rank() - 1];
    m.data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// `concat(h, detach(r)) · W + b`, or `h · W + b` without `r`.
pub fn fuse_and_classify<T: Scalar>(tape: &mut Tape<T>, h: Var, r: Option<Var>, w: Var, b: Var) -> Result<Var> {
    let (hb, hw) = tape.value(h).dims2("fuse")?;
    let (rb, rw) = match r {
        Some(r) => tape.value(r).dims2("fuse")?,
        None => (hb, 0),
    };
    if hb != rb {
        return Err(Error::Tensor(cladnet_core::TensorError::ShapeMismatch {
            op: "fuse",
            dim: "batch",
            expected: hb,
            got: rb,
        }));
    }
    let (win, _) = tape.value(w).dims2("fuse")?;
    if win != hw + rw {
        return Err(Error::Config(format!(
            "head expects {win} inputs but |h| + |r| = {hw} + {rw}"
        )));
    }
    let o = match r {
        Some(r) => {
            let r = tape.detach(r);
            tape.concat_cols(&[h, r])?
        }
        None => h,
    };
    let z = tape.matmul(o, w)?;
    Ok(tape.add_row(z, b)?)
}

/// Mean cross entropy of `logits: [B × C]` against integer labels.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let logp = tape.log_softmax_rows(logits)?;
    let picked = tape.gather(logp, labels)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -T::one()))
}

/// Batch mean of the per-window distillation distance. The teacher side is
/// a fixed target.
pub fn distillation_loss<T: Scalar>(tape: &mut Tape<T>, student: Var, teacher: &Tensor<T>, mode: DistillMode) -> Result<Var> {
    let (b, _) = tape.value(student).dims2("distill")?;
    tape.value(student).same_shape(teacher, "distill")?;
    let per_batch = T::lit(1.0 / b as f64);
    match mode {
        DistillMode::L2Logits => {
            let diff = tape.add_const(student, &teacher.scale(-T::one()))?;
            let sq = tape.square(diff);
            let s = tape.sum(sq);
            Ok(tape.scale(s, per_batch))
        }
        DistillMode::KlSoftmax => {
            let p = nn::softmax_rows(teacher)?;
            let log_p = nn::log_softmax_rows(teacher)?;
            let entropy_term = p.zip_map(&log_p, "distill", |a, l| a * l)?.sum();
            let log_q = tape.log_softmax_rows(student)?;
            let cross = tape.mul_const(log_q, p)?;
            let cross = tape.sum(cross);
            let kl = tape.scale(cross, -T::one());
            let kl = tape.add_scalar(kl, entropy_term);
            Ok(tape.scale(kl, per_batch))
        }
    }
}

/// Frozen copy of a classifier taken after finishing a subject.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSnapshot<T: Scalar> {
    model: Classifier<T>,
    subject: u32,
}

impl<T: Scalar> ModelSnapshot<T> {
    pub fn new(model: &Classifier<T>, subject: u32) -> Self {
        Self {
            model: model.clone(),
            subject,
        }
    }

    pub fn subject(&self) -> u32 {
        self.subject
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.model.params
    }

    pub fn checksum(&self) -> u64 {
        self.model.params.fingerprint()
    }

    pub fn logits(&self, x: &Tensor<T>, r: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.model.logits(x, r)
    }
}

/// Graph handles of one supervised objective.
pub struct Objective {
    pub total: Var,
    pub ce: Var,
    pub distill: Option<Var>,
}

/// Extra differentiable penalty on the classifier parameters.
pub type Penalty<'a, T> = &'a dyn Fn(&mut Tape<T>, &Binding) -> Result<Var>;

/// Builds `CE + λ·distill (+ penalty)` on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn supervised_objective<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Classifier<T>,
    bind: &Binding,
    x: &Tensor<T>,
    r: Option<Var>,
    labels: &[usize],
    teacher: Option<&ModelSnapshot<T>>,
    lambda: f64,
    mode: DistillMode,
    penalty: Option<Penalty<'_, T>>,
) -> Result<Objective> {
    let logits = model.forward(tape, bind, x, r)?;
    let ce = cross_entropy(tape, logits, labels)?;
    let mut total = ce;
    let mut distill = None;
    if let Some(teacher) = teacher {
        let target = teacher.logits(x, r.map(|r| tape.value(r)))?;
        let d = distillation_loss(tape, logits, &target, mode)?;
        distill = Some(d);
        if lambda != 0.0 {
            let weighted = tape.scale(d, T::lit(lambda));
            total = tape.add(total, weighted)?;
        }
    }
    if let Some(p) = penalty {
        let extra = p(tape, bind)?;
        total = tape.add(total, extra)?;
    }
    Ok(Objective { total, ce, distill })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub total: f64,
    pub ce: f64,
    pub distill: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub lambda_distill: f64,
    pub distill_mode: DistillMode,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            lambda_distill: 1.0,
            distill_mode: DistillMode::L2Logits,
        }
    }
}

impl SupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_distill >= 0.0 && self.lambda_distill.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_distill must be finite and non-negative, got {}",
                self.lambda_distill
            )));
        }
        Ok(())
    }
}

/// Adam state for the classifier. The transformer is never touched.
pub struct SupervisedTrainer<T: Scalar> {
    pub config: SupervisedConfig,
    pub optimizer: Adam<T>,
}

impl<T: Scalar> SupervisedTrainer<T> {
    pub fn new(config: SupervisedConfig, lr: f64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            optimizer: Adam::new(lr),
        })
    }

    /// One update on labeled windows `x: [B × l × d]` with representations
    /// `r: [B × d_model]`. Returns `None` without touching the model when
    /// the batch is empty.
    pub fn step(
        &mut self,
        model: &mut Classifier<T>,
        x: &Tensor<T>,
        r: Option<&Tensor<T>>,
        labels: &[usize],
        teacher: Option<&ModelSnapshot<T>>,
        penalty: Option<Penalty<'_, T>>,
    ) -> Result<Option<StepReport>> {
        if labels.is_empty() {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape);
        let rv = r.map(|r| tape.constant(r.clone()));
        let obj = supervised_objective(
            &mut tape,
            model,
            &bind,
            x,
            rv,
            labels,
            teacher,
            self.config.lambda_distill,
            self.config.distill_mode,
            penalty,
        )?;
        let report = StepReport {
            total: tape.value(obj.total).item().as_f64(),
            ce: tape.value(obj.ce).item().as_f64(),
            distill: obj.distill.map_or(0.0, |d| tape.value(d).item().as_f64()),
        };
        if !report.total.is_finite() {
            return Err(Error::Tensor(cladnet_core::TensorError::NonFinite("supervised loss".into())));
        }
        let grads = tape.backward(obj.total)?;
        let g = bind.grads(&grads, &model.params);
        self.optimizer.step(&mut model.params, &g);
        Ok(Some(report))
    }
}
