use rand::Rng;

use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::model::cost::{CostReport, FeatureShape};
use crate::nn::{Conv2d, Ctx, Module, Param};
use crate::tensor::Element;

/// Channel gate `x ⊙ sigmoid(expand(relu(reduce(gap(x)))))`.
#[derive(Debug, Clone)]
pub struct SqueezeExcite<E: Element> {
    pub reduce: Conv2d<E>,
    pub expand: Conv2d<E>,
}

impl<E: Element> SqueezeExcite<E> {
    pub fn new(name: &str, channels: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!("{name}: SE reduction {reduction} does not divide {channels} channels")));
        }
        let hidden = channels / reduction;
        Ok(Self {
            reduce: Conv2d::pointwise(&format!("{name}.reduce"), channels, hidden, true, rng)?,
            expand: Conv2d::pointwise(&format!("{name}.expand"), hidden, channels, true, rng)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.reduce.in_channels
    }

    /// The `[N, C, 1, 1]` gate for `x`.
    pub fn gate<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let s = self.reduce.forward(ctx, x.gap()?)?.activation(Activation::Relu)?;
        self.expand.forward(ctx, s)?.activation(Activation::Sigmoid)
    }
}

impl<E: Element> Module<E> for SqueezeExcite<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let (_, c, _, _) = x.value().dims4("squeeze_excite")?;
        if c != self.channels() {
            return Err(Error::shape("squeeze_excite", format!("expected {} channels, got {c}", self.channels())));
        }
        x.mul(self.gate(ctx, x)?)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.reduce.visit(f);
        self.expand.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.reduce.visit_mut(f);
        self.expand.visit_mut(f);
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let pooled = FeatureShape::new(input.c, 1, 1);
        let hidden = self.reduce.cost(pooled, report)?;
        self.expand.cost(hidden, report)?;
        Ok(input)
    }
}
