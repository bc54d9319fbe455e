use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
}

/// Ordered, named parameter tensors. Order is part of the checkpoint format.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<S> {
    entries: Vec<ParamEntry<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<S>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "shape/value length");
        self.entries.push(ParamEntry { name: name.into(), shape: shape.to_vec(), value });
        ParamId(self.entries.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[S] {
        &self.entries[id.0].value
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Vec<S> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<S> {
        Grads(self.entries.iter().map(|e| vec![S::zero(); e.value.len()]).collect())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            for d in &e.shape {
                h.update((*d as u64).to_le_bytes());
            }
            buf.clear();
            for v in &e.value {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    value: e.value.iter().map(|v| T::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Replaces values from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamSet<S>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            if mine.name != theirs.name || mine.shape != theirs.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: {} {:?} vs {} {:?}",
                    mine.name, mine.shape, theirs.name, theirs.shape
                )));
            }
            mine.value.clone_from(&theirs.value);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.iter().all(|v| v.is_finite()))
    }
}

/// Gradients aligned with a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<S>(pub Vec<Vec<S>>);

impl<S: Scalar> Grads<S> {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Vec<S> {
        &mut self.0[id.0]
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[S] {
        &self.0[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, delta: &[S]) {
        for (g, d) in self.0[id.0].iter_mut().zip(delta) {
            *g += *d;
        }
    }

    pub fn scale(&mut self, k: S) {
        for g in self.0.iter_mut().flatten() {
            *g *= k;
        }
    }

    pub fn norm(&self) -> S {
        self.0.iter().flatten().map(|g| *g * *g).sum::<S>().sqrt()
    }
}
