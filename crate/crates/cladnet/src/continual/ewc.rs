use cladnet_core::{Binding, Scalar, Tape, Tensor, Var};

use crate::classifier::{argmax_rows, Classifier};
use crate::error::{Error, Result};

/// Diagonal Fisher estimate and the parameters it was taken at, both
/// aligned with the classifier's parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherInfo<T: Scalar> {
    pub fisher: Vec<Tensor<T>>,
    pub anchor: Vec<Tensor<T>>,
}

impl<T: Scalar> FisherInfo<T> {
    /// Online consolidation: importances add up, the anchor moves to the
    /// most recent parameters.
    pub fn accumulate(&mut self, newer: FisherInfo<T>) {
        for (f, g) in self.fisher.iter_mut().zip(&newer.fisher) {
            f.add_assign(g);
        }
        self.anchor = newer.anchor;
    }
}

/// One batch for the Fisher estimate: windows `[B × l × d]` and their
/// optional representations `[B × d_model]`.
pub struct FisherBatch<T: Scalar> {
    pub x: Tensor<T>,
    pub r: Option<Tensor<T>>,
}

/// Mean over batches of the squared gradient of the batch-mean
/// log-likelihood of the model's own predicted labels.
pub fn ewc_prepare<T: Scalar>(model: &Classifier<T>, batches: &[FisherBatch<T>]) -> Result<FisherInfo<T>> {
    if batches.is_empty() {
        return Err(Error::Data("fisher estimate needs at least one batch".into()));
    }
    let mut fisher: Vec<Tensor<T>> = model.params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
    for batch in batches {
        let mut tape = Tape::new();
        let bind = model.params.bind(&mut tape);
        let r = batch.r.as_ref().map(|r| tape.constant(r.clone()));
        let logits = model.forward(&mut tape, &bind, &batch.x, r)?;
        let predicted = argmax_rows(tape.value(logits));
        let logp = tape.log_softmax_rows(logits)?;
        let picked = tape.gather(logp, &predicted)?;
        let ll = tape.mean(picked);
        let grads = tape.backward(ll)?;
        for (f, g) in fisher.iter_mut().zip(bind.grads(&grads, &model.params)) {
            f.add_assign(&g.map(|v| v * v));
        }
    }
    let inv = T::lit(1.0 / batches.len() as f64);
    Ok(FisherInfo {
        fisher: fisher.into_iter().map(|f| f.scale(inv)).collect(),
        anchor: model.params.tensors().to_vec(),
    })
}

/// `(λ/2) Σ_k F_k (θ_k − θ*_k)²` over the parameters bound in `bind`.
pub fn ewc_penalty<T: Scalar>(tape: &mut Tape<T>, bind: &Binding, info: &FisherInfo<T>, lambda: f64) -> Result<Var> {
    if bind.vars().len() != info.fisher.len() {
        return Err(Error::Config(format!(
            "fisher covers {} tensors but the model has {}",
            info.fisher.len(),
            bind.vars().len()
        )));
    }
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for ((&v, f), anchor) in bind.vars().iter().zip(&info.fisher).zip(&info.anchor) {
        let diff = tape.add_const(v, &anchor.scale(-T::one()))?;
        let sq = tape.square(diff);
        let weighted = tape.mul_const(sq, f.clone())?;
        let s = tape.sum(weighted);
        total = tape.add(total, s)?;
    }
    Ok(tape.scale(total, T::lit(lambda / 2.0)))
}
