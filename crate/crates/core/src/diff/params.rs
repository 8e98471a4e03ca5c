//! Named parameter registry with gradient and optimizer-state buffers.

use alloc::string::String;
use alloc::vec::Vec;

use super::DiffError;
use crate::mat::{Mat, Scalar};

/// Handle to one parameter inside a [`ParamSet`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One learnable tensor: its value, accumulated gradient, and the first/second
/// moment estimates the optimizer maintains.
#[derive(Clone)]
pub struct ParamEntry<F> {
    pub name: String,
    pub value: Mat<F>,
    pub grad: Mat<F>,
    pub m: Mat<F>,
    pub v: Mat<F>,
}

/// Ordered collection of uniquely named parameters. Iteration order is
/// insertion order, which keeps optimizer sweeps and serialization
/// deterministic.
#[derive(Clone)]
pub struct ParamSet<F: Scalar> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    /// Registers a parameter. Names must be unique and values finite.
    pub fn add(&mut self, name: impl Into<String>, value: Mat<F>) -> Result<ParamId, DiffError> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(DiffError::DuplicateParam(name));
        }
        if !value.is_finite() {
            return Err(DiffError::NumericalError { op: "param" });
        }
        let (r, c) = value.shape();
        self.entries.push(ParamEntry {
            name,
            value,
            grad: Mat::zeros(r, c),
            m: Mat::zeros(r, c),
            v: Mat::zeros(r, c),
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.as_slice().len()).sum()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry<F> {
        &mut self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<F>] {
        &mut self.entries
    }

    pub fn value(&self, id: ParamId) -> &Mat<F> {
        &self.entries[id.0].value
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in e.grad.as_mut_slice() {
                *g = F::zero();
            }
        }
    }

    /// Adds `delta` into the gradient accumulator of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Mat<F>) -> Result<(), DiffError> {
        let e = &mut self.entries[id.0];
        if e.grad.shape() != delta.shape() {
            return Err(DiffError::ShapeError {
                op: "accumulate_grad",
                msg: alloc::format!(
                    "gradient shape {:?} does not match parameter `{}` shape {:?}",
                    delta.shape(),
                    e.name,
                    e.grad.shape()
                ),
            });
        }
        e.grad.add_assign(delta);
        Ok(())
    }

    /// Copies values into another precision; gradient and optimizer buffers
    /// start at zero in the copy.
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                let (r, c) = e.value.shape();
                ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: Mat::zeros(r, c),
                    m: Mat::zeros(r, c),
                    v: Mat::zeros(r, c),
                }
            })
            .collect();
        ParamSet { entries }
    }
}
