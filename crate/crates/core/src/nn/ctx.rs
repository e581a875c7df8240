use std::cell::RefCell;
use std::collections::HashMap;

use super::{Module, Param};
use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in norms, gradients tracked.
    Train,
    /// Running statistics, no gradients.
    Eval,
}

/// Per-forward state: the tape, parameter bindings and pending running-stat
/// updates from training-mode batch norms.
pub struct Ctx<'t, E: Element> {
    tape: &'t Tape<E>,
    mode: Mode,
    bindings: RefCell<HashMap<String, Var<'t, E>>>,
    order: RefCell<Vec<String>>,
    updates: RefCell<HashMap<String, Tensor<E>>>,
}

impl<'t, E: Element> Ctx<'t, E> {
    pub fn new(tape: &'t Tape<E>, mode: Mode) -> Self {
        Self {
            tape,
            mode,
            bindings: RefCell::new(HashMap::new()),
            order: RefCell::new(Vec::new()),
            updates: RefCell::new(HashMap::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<E> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Leaf for `p`, created on first use. Learnable parameters require grad
    /// in training mode.
    pub fn param(&self, p: &Param<E>) -> Var<'t, E> {
        if let Some(v) = self.bindings.borrow().get(&p.name) {
            return *v;
        }
        let var = self.tape.leaf(p.value.clone(), self.training() && p.is_learnable());
        self.bind(&p.name, var);
        var
    }

    /// Makes every later `param(name)` resolve to `var`.
    pub fn bind(&self, name: &str, var: Var<'t, E>) {
        if self.bindings.borrow_mut().insert(name.to_string(), var).is_none() {
            self.order.borrow_mut().push(name.to_string());
        }
    }

    /// Parameter names bound so far, in first-use order.
    pub fn bound_names(&self) -> Vec<String> {
        self.order.borrow().clone()
    }

    pub(crate) fn stage_update(&self, name: String, value: Tensor<E>) {
        self.updates.borrow_mut().insert(name, value);
    }

    /// Adds the tape's leaf gradients into the matching parameters and
    /// applies pending running-stat updates.
    pub fn commit<M: Module<E> + ?Sized>(&self, module: &mut M) -> Result<()> {
        let bindings = self.bindings.borrow();
        let updates = self.updates.borrow();
        let mut result = Ok(());
        module.visit_mut(&mut |p| {
            if let Some(v) = updates.get(&p.name) {
                p.value = v.clone();
            }
            if let Some(g) = bindings.get(&p.name).and_then(|v| v.grad()) {
                if let Err(e) = p.accumulate_grad(&g) {
                    result = Err(e);
                }
            }
        });
        result
    }
}
