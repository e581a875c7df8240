use rand::Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::model::cost::{CostReport, FeatureShape};
use crate::nn::{Conv2d, Ctx, Module, Param};
use crate::tensor::{Element, Tensor};

/// `y = proj(x)`, then `y + γ ⊙ (y − gap(y))`.
#[derive(Debug, Clone)]
pub struct FeatureDecompose<E: Element> {
    pub proj: Conv2d<E>,
    pub gamma: Param<E>,
}

impl<E: Element> FeatureDecompose<E> {
    pub fn new(name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            proj: Conv2d::pointwise(&format!("{name}.proj"), channels, channels, true, rng)?,
            gamma: Param::learnable(format!("{name}.gamma_fd"), Tensor::zeros(vec![channels])),
        })
    }
}

impl<E: Element> Module<E> for FeatureDecompose<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let y = self.proj.forward(ctx, x)?;
        let c = self.proj.out_channels;
        let gamma = ctx.param(&self.gamma).reshape(vec![c, 1, 1])?;
        let detail = y.sub(y.gap()?)?;
        y.add(detail.mul(gamma)?)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.proj.visit(f);
        f(&self.gamma);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.proj.visit_mut(f);
        f(&mut self.gamma);
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let out = self.proj.cost(input, report)?;
        let name = self.gamma.name.trim_end_matches(".gamma_fd");
        report.elementwise(&format!("{name}.reweight"), out, 1, out.c as u64, vec![self.gamma.name.clone()]);
        Ok(out)
    }
}
