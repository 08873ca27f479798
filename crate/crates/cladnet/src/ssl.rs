//! Self-supervised objectives on pooled transformer representations and the
//! training step that drives them. Nothing in this module sees labels or
//! subject ids: every entry point takes bare window tensors.

use cladnet_core::{Adam, ParamStore, Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::error::{Error, Result};
use crate::sslnet::{stack_windows, Mode, Transformer};

/// Guard added under the square roots of correlation and cosine
/// denominators.
pub const NORM_EPS: f64 = 1e-12;

/// Additive mask that removes self-similarity from the contrastive softmax.
const SELF_MASK: f64 = -1e9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SslLoss {
    #[default]
    BarlowTwins,
    Ntxent,
    Byol,
}

impl SslLoss {
    pub const ALL: [SslLoss; 3] = [Self::BarlowTwins, Self::Ntxent, Self::Byol];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BarlowTwins => "barlow_twins",
            Self::Ntxent => "ntxent",
            Self::Byol => "byol",
        }
    }
}

impl std::str::FromStr for SslLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ssl loss {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    pub loss: SslLoss,
    pub lambda_bt: f64,
    pub temperature: f64,
    pub momentum: f64,
    /// Passes over each subject's windows; falls back to the run's epoch
    /// count when unset.
    pub epochs: Option<usize>,
    pub augment: AugmentSpec,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            loss: SslLoss::BarlowTwins,
            lambda_bt: 1.0,
            temperature: 0.5,
            momentum: 0.99,
            epochs: None,
            augment: AugmentSpec::default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_bt >= 0.0) {
            return Err(Error::Config("ssl.lambda_bt must be >= 0".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("ssl.temperature must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("ssl.momentum must lie in [0, 1)".into()));
        }
        self.augment.validate()
    }
}

fn identity<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::from_fn([n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
}

fn batch_dims<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, op: &str) -> Result<(usize, usize)> {
    let (ba, da) = tape.value(a).dims2("ssl")?;
    let (bb, db) = tape.value(b).dims2("ssl")?;
    if (ba, da) != (bb, db) {
        return Err(Error::Config(format!("{op}: view shapes [{ba}x{da}] and [{bb}x{db}] differ")));
    }
    if ba < 2 {
        return Err(Error::Config(format!("{op} needs a batch of at least 2, got {ba}")));
    }
    Ok((ba, da))
}

/// `√(Σ_b a_bi² + eps)` per feature, `[B × D] → [D]`.
fn column_norms<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    let sq = tape.square(a);
    let s = tape.sum_rows(sq)?;
    let s = tape.add_scalar(s, T::lit(NORM_EPS));
    Ok(tape.sqrt(s))
}

/// `C_ij = Σ_b r̄_bi r̂_bj / (√Σ_b r̄_bi² · √Σ_b r̂_bj²)`.
pub fn cross_correlation<T: Scalar>(tape: &mut Tape<T>, r1: Var, r2: Var) -> Result<Var> {
    let (_, d) = batch_dims(tape, r1, r2, "cross_correlation")?;
    let num = {
        let t = tape.transpose(r1)?;
        tape.matmul(t, r2)?
    };
    let n1 = column_norms(tape, r1)?;
    let n2 = column_norms(tape, r2)?;
    let n1 = tape.reshape(n1, &[d, 1])?;
    let n2 = tape.reshape(n2, &[1, d])?;
    let denom = tape.matmul(n1, n2)?;
    Ok(tape.div(num, denom)?)
}

/// `Σ_i (1 − C_ii)² + λ Σ_{i≠j} C_ij²`.
pub fn barlow_twins_loss<T: Scalar>(tape: &mut Tape<T>, r1: Var, r2: Var, lambda: f64) -> Result<Var> {
    let c = cross_correlation(tape, r1, r2)?;
    let d = tape.value(c).shape()[0];
    let eye = identity::<T>(d);
    let off_mask = eye.map(|v| T::one() - v);
    let centered = tape.add_const(c, &eye.map(|v| -v))?;
    let sq = tape.square(centered);
    let on = tape.mul_const(sq, eye)?;
    let on = tape.sum(on);
    let csq = tape.square(c);
    let off = tape.mul_const(csq, off_mask)?;
    let off = tape.sum(off);
    let off = tape.scale(off, T::lit(lambda));
    Ok(tape.add(on, off)?)
}

/// Divides every row of `[n × d]` by its eps-guarded Euclidean norm.
pub fn normalize_rows<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    let (n, d) = tape.value(a).dims2("normalize_rows")?;
    let sq = tape.square(a);
    let ones_col = tape.constant(Tensor::ones([d, 1]));
    let s = tape.matmul(sq, ones_col)?;
    let s = tape.add_scalar(s, T::lit(NORM_EPS));
    let norms = tape.sqrt(s);
    let ones_row = tape.constant(Tensor::ones([1, d]));
    let spread = tape.matmul(norms, ones_row)?;
    debug_assert_eq!(tape.value(spread).shape(), [n, d]);
    Ok(tape.div(a, spread)?)
}

/// Normalized-temperature cross entropy over the `2B` stacked views; the
/// positive for row `i` is its counterpart view and self-similarity is
/// excluded from the softmax.
pub fn ntxent_loss<T: Scalar>(tape: &mut Tape<T>, r1: Var, r2: Var, temperature: f64) -> Result<Var> {
    let (b, d) = batch_dims(tape, r1, r2, "ntxent_loss")?;
    let z = tape.stack_rows(&[r1, r2])?;
    let z = tape.reshape(z, &[2 * b, d])?;
    let zn = normalize_rows(tape, z)?;
    let zt = tape.transpose(zn)?;
    let sim = tape.matmul(zn, zt)?;
    ntxent_from_similarities(tape, sim, b, temperature)
}

/// The NT-Xent objective given a `[2B × 2B]` cosine-similarity matrix.
pub fn ntxent_from_similarities<T: Scalar>(tape: &mut Tape<T>, sim: Var, b: usize, temperature: f64) -> Result<Var> {
    let sim = tape.scale(sim, T::lit(1.0 / temperature));
    let n = 2 * b;
    let mask = Tensor::from_fn([n, n], |i| if i / n == i % n { T::lit(SELF_MASK) } else { T::zero() });
    let sim = tape.add_const(sim, &mask)?;
    let logp = tape.log_softmax_rows(sim)?;
    let positives: Vec<usize> = (0..n).map(|i| (i + b) % n).collect();
    let picked = tape.gather(logp, &positives)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -T::one()))
}

/// `mean_b (2 − 2 cos(p_b, z_b))` with `z` treated as given.
pub fn byol_pair_loss<T: Scalar>(tape: &mut Tape<T>, p: Var, z: Var) -> Result<Var> {
    batch_dims(tape, p, z, "byol_loss")?;
    let pn = normalize_rows(tape, p)?;
    let zn = normalize_rows(tape, z)?;
    let prod = tape.mul(pn, zn)?;
    let cos_sum = tape.sum(prod);
    let b = tape.value(p).shape()[0];
    let mean_cos = tape.scale(cos_sum, T::lit(-2.0 / b as f64));
    Ok(tape.add_scalar(mean_cos, T::lit(2.0)))
}

/// Linear predictor head and momentum target for BYOL.
#[derive(Clone, Debug, PartialEq)]
pub struct ByolState<T: Scalar> {
    /// `w: [D × D]`, `b: [D]`; initialized to the identity map.
    pub predictor: ParamStore<T>,
    /// Momentum copy of the online transformer's parameters.
    pub target: ParamStore<T>,
    pub momentum: f64,
}

impl<T: Scalar> ByolState<T> {
    pub fn new(online: &Transformer<T>, momentum: f64) -> Self {
        let d = online.d_model();
        let mut predictor = ParamStore::new();
        predictor.add("predictor.w", identity(d));
        predictor.add("predictor.b", Tensor::zeros([d]));
        Self {
            predictor,
            target: online.params.clone(),
            momentum,
        }
    }

    pub fn predict(&self, tape: &mut Tape<T>, bind: &cladnet_core::Binding, r: Var) -> Result<Var> {
        let ids: Vec<_> = self.predictor.ids().collect();
        let y = tape.matmul(r, bind.var(ids[0]))?;
        Ok(tape.add_row(y, bind.var(ids[1]))?)
    }

    /// `target ← m · target + (1 − m) · online`.
    pub fn update_target(&mut self, online: &ParamStore<T>) {
        let m = T::lit(self.momentum);
        let one_m = T::lit(1.0 - self.momentum);
        for (t, o) in self.target.tensors_mut().iter_mut().zip(online.tensors()) {
            for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
                *tv = m * *tv + one_m * ov;
            }
        }
    }
}

/// Two augmented views of every window, stacked as `[B × l × d]` each.
pub fn make_views<T: Scalar>(
    spec: &AugmentSpec,
    windows: &[&Tensor<T>],
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut v1 = Vec::with_capacity(windows.len());
    let mut v2 = Vec::with_capacity(windows.len());
    for w in windows {
        v1.push(spec.apply(w, rng));
        v2.push(spec.apply(w, rng));
    }
    let r1: Vec<&Tensor<T>> = v1.iter().collect();
    let r2: Vec<&Tensor<T>> = v2.iter().collect();
    Ok((stack_windows(&r1)?, stack_windows(&r2)?))
}

/// Optimizer state and randomness for transformer self-supervision.
pub struct SslTrainer<T: Scalar> {
    pub config: SslConfig,
    pub optimizer: Adam<T>,
    pub byol: Option<(ByolState<T>, Adam<T>)>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> SslTrainer<T> {
    pub fn new(config: SslConfig, net: &Transformer<T>, lr: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let byol = (config.loss == SslLoss::Byol).then(|| (ByolState::new(net, config.momentum), Adam::new(lr)));
        Ok(Self {
            config,
            optimizer: Adam::new(lr),
            byol,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Augments each window twice, computes the configured loss on both
    /// views, and applies one optimizer update. Returns the loss measured
    /// before the update.
    pub fn step(&mut self, net: &mut Transformer<T>, windows: &[&Tensor<T>]) -> Result<f64> {
        if windows.len() < 2 {
            return Err(Error::Config(format!(
                "self-supervised steps need at least 2 windows, got {}",
                windows.len()
            )));
        }
        let (x1, x2) = make_views(&self.config.augment, windows, &mut self.rng)?;
        self.step_on_views(net, &x1, &x2)
    }

    /// One update on already augmented views.
    pub fn step_on_views(&mut self, net: &mut Transformer<T>, x1: &Tensor<T>, x2: &Tensor<T>) -> Result<f64> {
        let mut tape = Tape::new();
        let bind = net.params.bind(&mut tape);
        let r1 = net.forward(&mut tape, &bind, x1, Mode::Train(&mut self.rng))?.r;
        let r2 = net.forward(&mut tape, &bind, x2, Mode::Train(&mut self.rng))?.r;

        let Some((state, pred_opt)) = self.byol.as_mut() else {
            let loss = match self.config.loss {
                SslLoss::BarlowTwins => barlow_twins_loss(&mut tape, r1, r2, self.config.lambda_bt)?,
                SslLoss::Ntxent => ntxent_loss(&mut tape, r1, r2, self.config.temperature)?,
                SslLoss::Byol => unreachable!("byol state exists for the byol loss"),
            };
            let value = tape.value(loss).item().as_f64();
            check_finite(value)?;
            let grads = tape.backward(loss)?;
            let g = bind.grads(&grads, &net.params);
            self.optimizer.step(&mut net.params, &g);
            return Ok(value);
        };

        let pbind = state.predictor.bind(&mut tape);
        let p1 = state.predict(&mut tape, &pbind, r1)?;
        let p2 = state.predict(&mut tape, &pbind, r2)?;
        let target = Transformer {
            config: net.config.clone(),
            partition: net.partition.clone(),
            params: state.target.clone(),
            ids: net.ids.clone(),
        };
        let z1 = tape.constant(target.represent(x1)?);
        let z2 = tape.constant(target.represent(x2)?);
        let l12 = byol_pair_loss(&mut tape, p1, z2)?;
        let l21 = byol_pair_loss(&mut tape, p2, z1)?;
        let loss = tape.add(l12, l21)?;
        let value = tape.value(loss).item().as_f64();
        check_finite(value)?;
        let grads = tape.backward(loss)?;
        let g = bind.grads(&grads, &net.params);
        let pg = pbind.grads(&grads, &state.predictor);
        self.optimizer.step(&mut net.params, &g);
        pred_opt.step(&mut state.predictor, &pg);
        state.update_target(&net.params);
        Ok(value)
    }
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Tensor(cladnet_core::TensorError::NonFinite(
            "self-supervised loss".into(),
        )))
    }
}
