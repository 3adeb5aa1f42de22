use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Real, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique identity of a parameter, used to route gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        Self(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A named-by-position learnable (or buffered) tensor owned by a layer.
#[derive(Debug)]
pub struct Param<T: Real> {
    id: ParamId,
    pub value: Tensor<T>,
    trainable: bool,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Self { id: ParamId::fresh(), value, trainable: true }
    }

    /// Non-learnable state that still travels with checkpoints (e.g. running
    /// batch statistics).
    pub fn buffer(value: Tensor<T>) -> Self {
        Self { id: ParamId::fresh(), value, trainable: false }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn zero_(&mut self) {
        self.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn fill_(&mut self, value: T) {
        self.value.data_mut().iter_mut().for_each(|v| *v = value);
    }
}

impl<T: Real> Clone for Param<T> {
    /// Clones get a fresh identity so gradients of the copy never alias the
    /// original.
    fn clone(&self) -> Self {
        Self { id: ParamId::fresh(), value: self.value.clone(), trainable: self.trainable }
    }
}
