//! Parameters, the forward context, and the generic layers everything else
//! is assembled from.

mod conv;
mod ctx;
mod linear;
mod norm;
mod param;

pub use conv::{Conv2d, ConvNormAct};
pub use ctx::{Ctx, Mode};
pub use linear::Linear;
pub use norm::{BatchNorm2d, LayerNorm2d, Norm2d, NormKind, BN_EPS, BN_MOMENTUM, LN_EPS};
pub use param::{trunc_normal, Param, ParamKind};

use crate::autograd::Var;
use crate::error::Result;
use crate::model::cost::{CostReport, FeatureShape};
use crate::tensor::Element;

/// A differentiable layer with named parameters and an analytic cost.
pub trait Module<E: Element> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>>;

    /// Visits parameters and buffers in a fixed order.
    fn visit(&self, f: &mut dyn FnMut(&Param<E>));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>));

    /// Appends this layer's rows to `report` and returns the output shape.
    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape>;
}

/// Number of learnable scalars.
pub fn count_params<E: Element, M: Module<E> + ?Sized>(m: &M) -> usize {
    let mut n = 0;
    m.visit(&mut |p| {
        if p.is_learnable() {
            n += p.value.numel();
        }
    });
    n
}

/// Drops every accumulated gradient.
pub fn zero_grads<E: Element, M: Module<E> + ?Sized>(m: &mut M) {
    m.visit_mut(&mut |p| p.grad = None);
}
