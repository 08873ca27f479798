use std::hash::{DefaultHasher, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        Binding {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Registers every parameter as a constant: no gradient reaches it.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Binding {
        Binding {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    /// Hash of names, shapes and exact bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in self.iter() {
            h.write(name.as_bytes());
            for &d in t.shape() {
                h.write_usize(d);
            }
            for v in t.data() {
                h.write_u64(v.as_f64().to_bits());
            }
        }
        h.finish()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Tape variables for each parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Wraps vars already on a tape, one per store entry in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients aligned with the store; zeros for unreached parameters.
    pub fn grads<T: Scalar>(&self, grads: &Gradients<T>, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(store.tensors())
            .map(|(&v, t)| grads.or_zeros(v, t))
            .collect()
    }
}

/// Versioned on-disk container of named tensors.
///
/// Stored as JSON; values are widened to `f64`, which is exact for both
/// supported scalar types, and JSON floats round-trip bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "cladnet-checkpoint";
    pub const VERSION: u32 = 1;

    pub fn new<T: Scalar>() -> Self {
        Self {
            format: Self::FORMAT.into(),
            version: Self::VERSION,
            scalar: T::NAME.into(),
            tensors: Vec::new(),
        }
    }

    /// Adds every parameter of `store` under `namespace.`.
    pub fn insert<T: Scalar>(&mut self, namespace: &str, store: &ParamStore<T>) {
        for (name, t) in store.iter() {
            self.tensors.push(NamedTensor {
                name: format!("{namespace}.{name}"),
                shape: t.shape().to_vec(),
                values: t.to_f64_vec(),
            });
        }
    }

    pub fn has_namespace(&self, namespace: &str) -> bool {
        let prefix = format!("{namespace}.");
        self.tensors.iter().any(|t| t.name.starts_with(&prefix))
    }

    /// Overwrites `store`'s tensors with the ones saved under `namespace`.
    /// Every parameter must be present with a matching shape.
    pub fn restore<T: Scalar>(&self, namespace: &str, store: &mut ParamStore<T>) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let full = format!("{namespace}.{}", store.name(id));
            let saved = self
                .tensors
                .iter()
                .find(|t| t.name == full)
                .ok_or_else(|| TensorError::Checkpoint(format!("missing tensor {full}")))?;
            if saved.shape != store.get(id).shape() {
                return Err(TensorError::Checkpoint(format!(
                    "{full}: shape {:?} does not match {:?}",
                    saved.shape,
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = Tensor::from_f64(saved.shape.clone(), &saved.values)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| TensorError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        if ck.format != Self::FORMAT {
            return Err(TensorError::Checkpoint(format!("unknown format {:?}", ck.format)));
        }
        if ck.version != Self::VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported version {} (expected {})",
                ck.version,
                Self::VERSION
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_rows(&[vec![0.1, 1.0 / 3.0], vec![-2.5e-17, 1e300]]));
        s.add("b", Tensor::from_f64([2], &[std::f64::consts::PI, -0.0]).unwrap());
        s
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let s = store();
        let mut ck = Checkpoint::new::<f64>();
        ck.insert("net", &s);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        let mut restored = s.clone();
        for t in restored.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        back.restore("net", &mut restored).unwrap();
        for (a, b) in s.tensors().iter().zip(restored.tensors()) {
            let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(s.fingerprint(), restored.fingerprint());
    }

    #[test]
    fn restore_rejects_missing_and_misshapen() {
        let s = store();
        let mut ck = Checkpoint::new::<f64>();
        ck.insert("net", &s);
        let mut other = ParamStore::<f64>::new();
        other.add("w", Tensor::zeros([3]));
        assert!(ck.restore("net", &mut other).is_err());
        assert!(ck.restore("missing", &mut store()).is_err());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut ck = Checkpoint::new::<f64>();
        ck.version = 99;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }

    #[test]
    fn fingerprint_sees_single_bit_changes() {
        let s = store();
        let mut t = s.clone();
        let v = &mut t.tensors_mut()[0].data_mut()[0];
        *v = f64::from_bits(v.to_bits() + 1);
        assert_ne!(s.fingerprint(), t.fingerprint());
    }
}
