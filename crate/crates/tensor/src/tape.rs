use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::{Param, ParamId, Real, Tensor};

/// Maps the gradient of an operation's output to gradients of its inputs.
///
/// The second argument says which inputs are tracked; untracked slots may be
/// returned as `None` to skip their computation.
pub type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

#[derive(Clone, Copy, Debug)]
enum Leaf {
    Param(ParamId),
    Input,
}

struct Node<T: Real> {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
    leaf: Option<Leaf>,
}

/// Records differentiable operations for one forward pass.
///
/// A tape built with [`Tape::no_grad`] records nothing: operations still
/// compute values, but intermediate tensors are freed as soon as the last
/// [`Var`] referencing them is dropped.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, (usize, Rc<Tensor<T>>)>>,
    recording: bool,
}

/// A value flowing through the tape.
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    value: Rc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Real> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        Self { tape: self.tape, value: Rc::clone(&self.value), node: self.node }
    }
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("node", &self.node).field("value", &self.value).finish()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), params: RefCell::new(HashMap::new()), recording: true }
    }

    pub fn no_grad() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var { tape: self, value: Rc::new(value), node: None }
    }

    /// A value whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let node =
            self.recording.then(|| self.push(Node { inputs: Vec::new(), backward: None, leaf: Some(Leaf::Input) }));
        Var { tape: self, value: Rc::new(value), node }
    }

    /// Brings a parameter onto the tape. Repeated calls for the same
    /// parameter share one node, so shared weights accumulate gradients.
    pub fn param(&self, p: &Param<T>) -> Var<'_, T> {
        if !self.recording || !p.is_trainable() {
            return self.constant(p.value.clone());
        }
        if let Some((node, value)) = self.params.borrow().get(&p.id()) {
            return Var { tape: self, value: Rc::clone(value), node: Some(*node) };
        }
        let node = self.push(Node { inputs: Vec::new(), backward: None, leaf: Some(Leaf::Param(p.id())) });
        let value = Rc::new(p.value.clone());
        self.params.borrow_mut().insert(p.id(), (node, Rc::clone(&value)));
        Var { tape: self, value, node: Some(node) }
    }

    /// Registers the result of an operation. The closure runs at most once,
    /// during [`Tape::backward`], and only if some input is tracked.
    pub fn record<'t, F>(&'t self, value: impl Into<Rc<Tensor<T>>>, inputs: &[&Var<'t, T>], backward: F) -> Var<'t, T>
    where
        F: FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let tracked = self.recording && inputs.iter().any(|v| v.node.is_some());
        let node = tracked.then(|| {
            self.push(Node {
                inputs: inputs.iter().map(|v| v.node).collect(),
                backward: Some(Box::new(backward)),
                leaf: None,
            })
        });
        Var { tape: self, value: value.into(), node }
    }

    /// Reverse sweep seeded with ones at `root` (the usual case: a scalar
    /// loss).
    pub fn backward(&self, root: &Var<'_, T>) -> Gradients<T> {
        let seed = Tensor::ones(root.value.shape().to_vec());
        self.backward_with(root, seed)
    }

    /// Reverse sweep with an explicit output cotangent.
    pub fn backward_with(&self, root: &Var<'_, T>, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), root.value.shape(), "seed shape must match root");
        let mut out = Gradients { by_node: HashMap::new(), by_param: HashMap::new() };
        let Some(root_id) = root.node else {
            return out;
        };
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root_id).map(|_| None).collect();
        grads[root_id] = Some(seed);
        for id in (0..=root_id).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let (inputs, backward, leaf) = {
                let mut nodes = self.nodes.borrow_mut();
                let node = &mut nodes[id];
                (std::mem::take(&mut node.inputs), node.backward.take(), node.leaf)
            };
            match leaf {
                Some(Leaf::Param(pid)) => {
                    out.by_param.insert(pid, grad);
                    continue;
                }
                Some(Leaf::Input) => {
                    out.by_node.insert(id, grad);
                    continue;
                }
                None => {}
            }
            let Some(backward) = backward else { continue };
            let needs: Vec<bool> = inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&grad, &needs);
            assert_eq!(input_grads.len(), inputs.len(), "backward returned the wrong number of gradients");
            for (slot, g) in inputs.into_iter().zip(input_grads) {
                if let (Some(j), Some(g)) = (slot, g) {
                    match &mut grads[j] {
                        Some(acc) => acc.add_assign(&g),
                        empty => *empty = Some(g),
                    }
                }
            }
        }
        out
    }
}

/// Gradients produced by one reverse sweep.
#[derive(Debug)]
pub struct Gradients<T: Real> {
    by_node: HashMap<usize, Tensor<T>>,
    by_param: HashMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a [`Tape::leaf`] input.
    pub fn wrt(&self, v: &Var<'_, T>) -> Option<&Tensor<T>> {
        v.node.and_then(|id| self.by_node.get(&id))
    }

    pub fn param(&self, p: &Param<T>) -> Option<&Tensor<T>> {
        self.by_param.get(&p.id())
    }

    pub fn param_count(&self) -> usize {
        self.by_param.len()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        Var { tape: self.tape, value: Rc::clone(&self.value), node: None }
    }
}
