use rand::Rng;

use super::conv::INIT_STD;
use super::{trunc_normal, Ctx, Module, Param};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::model::cost::{CostReport, CostRow, FeatureShape};
use crate::tensor::{Element, Tensor};

/// Fully connected layer on `[N, F]` inputs.
#[derive(Debug, Clone)]
pub struct Linear<E: Element> {
    pub weight: Param<E>,
    pub bias: Param<E>,
}

impl<E: Element> Linear<E> {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::learnable(
                format!("{name}.weight"),
                trunc_normal(&[out_features, in_features], INIT_STD, rng),
            ),
            bias: Param::learnable(format!("{name}.bias"), Tensor::zeros(vec![out_features])),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<E: Element> Module<E> for Linear<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        x.linear(ctx.param(&self.weight), Some(ctx.param(&self.bias)))
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    /// Input is the pooled `[C, 1, 1]` feature.
    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let (fi, fo) = (self.in_features(), self.out_features());
        if input.numel() as usize != fi {
            return Err(Error::shape("linear", format!("expects {fi} features, got {}", input.numel())));
        }
        let weights = (fi * fo) as u64;
        report.push(CostRow {
            name: self.weight.name.trim_end_matches(".weight").to_string(),
            params: weights + fo as u64,
            macs: weights,
            mem_access: weights + fo as u64 + fi as u64 + fo as u64,
            spatial: false,
            tensors: vec![self.weight.name.clone(), self.bias.name.clone()],
        });
        Ok(FeatureShape::new(fo, 1, 1))
    }
}
