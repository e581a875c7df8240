use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Learnable,
    /// State such as running statistics; persisted but never optimized.
    Buffer,
}

/// A named tensor owned by a layer, plus its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<E: Element> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Option<Tensor<E>>,
    pub kind: ParamKind,
}

impl<E: Element> Param<E> {
    pub fn learnable(name: impl Into<String>, value: Tensor<E>) -> Self {
        Self { name: name.into(), value, grad: None, kind: ParamKind::Learnable }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor<E>) -> Self {
        Self { name: name.into(), value, grad: None, kind: ParamKind::Buffer }
    }

    pub fn is_learnable(&self) -> bool {
        self.kind == ParamKind::Learnable
    }

    /// Adds `g` into the accumulator.
    pub fn accumulate_grad(&mut self, g: &Tensor<E>) -> Result<()> {
        self.grad = Some(match self.grad.take() {
            Some(acc) => acc.zip_map(g, |a, b| a + b)?,
            None => g.clone(),
        });
        Ok(())
    }
}

/// Normal(0, std) samples, redrawn until they fall within two standard deviations.
pub fn trunc_normal<E: Element>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<E> {
    let normal = Normal::new(0.0, std).expect("std must be finite and positive");
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break E::from_f64(v);
        }
    })
}
