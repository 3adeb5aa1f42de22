use std::cell::RefCell;

use skinmamba_tensor::{Param, ParamId, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One instrumentation record: a tag and the `(B, C, H, W)` shape seen there.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub tag: String,
    pub shape: Vec<usize>,
}

/// Per-forward state: the tape, train/eval mode, an optional shape trace and
/// the batch statistics produced by training-mode batch norm.
pub struct Ctx<'t, T: Real> {
    pub tape: &'t Tape<T>,
    pub mode: Mode,
    trace: Option<RefCell<Vec<TraceEvent>>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'t, T: Real> Ctx<'t, T> {
    pub fn new(tape: &'t Tape<T>, mode: Mode) -> Self {
        Self { tape, mode, trace: None, buffer_updates: RefCell::new(Vec::new()) }
    }

    pub fn train(tape: &'t Tape<T>) -> Self {
        Self::new(tape, Mode::Train)
    }

    pub fn eval(tape: &'t Tape<T>) -> Self {
        Self::new(tape, Mode::Eval)
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(RefCell::new(Vec::new()));
        self
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn param(&self, p: &Param<T>) -> Var<'t, T> {
        self.tape.param(p)
    }

    pub fn trace(&self, tag: impl Into<String>, shape: &[usize]) {
        if let Some(events) = &self.trace {
            events.borrow_mut().push(TraceEvent { tag: tag.into(), shape: shape.to_vec() });
        }
    }

    pub fn events(&self) -> Vec<TraceEvent> {
        self.trace.as_ref().map(|e| e.borrow().clone()).unwrap_or_default()
    }

    pub fn find(&self, tag: &str) -> Option<Vec<usize>> {
        self.trace.as_ref()?.borrow().iter().find(|e| e.tag == tag).map(|e| e.shape.clone())
    }

    pub(crate) fn push_buffer_update(&self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    /// Batch statistics to fold into running buffers after the step.
    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut *self.buffer_updates.borrow_mut())
    }
}
