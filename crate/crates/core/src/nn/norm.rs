use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Ctx, Module, Param};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::model::cost::{CostReport, FeatureShape};
use crate::tensor::{Element, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the new batch statistic in the running average.
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    BatchNorm,
    LayerNorm,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::BatchNorm => "batchnorm",
            NormKind::LayerNorm => "layernorm",
        })
    }
}

impl FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batchnorm" => Ok(NormKind::BatchNorm),
            "layernorm" => Ok(NormKind::LayerNorm),
            other => Err(Error::Config(format!("unknown norm `{other}`"))),
        }
    }
}

/// Batch normalization over `(N, H, W)` with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<E: Element> {
    pub gamma: Param<E>,
    pub beta: Param<E>,
    pub running_mean: Param<E>,
    pub running_var: Param<E>,
    pub eps: f64,
    pub momentum: f64,
}

impl<E: Element> BatchNorm2d<E> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::learnable(format!("{name}.gamma"), Tensor::ones(vec![channels])),
            beta: Param::learnable(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            running_mean: Param::buffer(format!("{name}.running_mean"), Tensor::zeros(vec![channels])),
            running_var: Param::buffer(format!("{name}.running_var"), Tensor::ones(vec![channels])),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    fn name(&self) -> &str {
        self.gamma.name.trim_end_matches(".gamma")
    }
}

impl<E: Element> Module<E> for BatchNorm2d<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let (gamma, beta) = (ctx.param(&self.gamma), ctx.param(&self.beta));
        let (y, stats) = x.batch_norm(
            gamma,
            beta,
            &self.running_mean.value,
            &self.running_var.value,
            E::from_f64(self.eps),
            ctx.training(),
        )?;
        if let Some(stats) = stats {
            let m = E::from_f64(self.momentum);
            let blend = |old: &Tensor<E>, new: &Tensor<E>| old.zip_map(new, |o, n| (E::one() - m) * o + m * n);
            ctx.stage_update(self.running_mean.name.clone(), blend(&self.running_mean.value, &stats.mean)?);
            ctx.stage_update(self.running_var.name.clone(), blend(&self.running_var.value, &stats.var)?);
        }
        Ok(y)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let tensors = vec![self.gamma.name.clone(), self.beta.name.clone()];
        report.elementwise(self.name(), input, 1, 2 * input.c as u64, tensors);
        Ok(input)
    }
}

/// Layer normalization of the channel vector at each spatial position.
#[derive(Debug, Clone)]
pub struct LayerNorm2d<E: Element> {
    pub gamma: Param<E>,
    pub beta: Param<E>,
    pub eps: f64,
}

impl<E: Element> LayerNorm2d<E> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::learnable(format!("{name}.gamma"), Tensor::ones(vec![channels])),
            beta: Param::learnable(format!("{name}.beta"), Tensor::zeros(vec![channels])),
            eps: LN_EPS,
        }
    }
}

impl<E: Element> Module<E> for LayerNorm2d<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        x.layer_norm_channels(ctx.param(&self.gamma), ctx.param(&self.beta), E::from_f64(self.eps))
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        f(&self.gamma);
        f(&self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let tensors = vec![self.gamma.name.clone(), self.beta.name.clone()];
        report.elementwise(self.gamma.name.trim_end_matches(".gamma"), input, 1, 2 * input.c as u64, tensors);
        Ok(input)
    }
}

/// Either normalization, selected by [`NormKind`].
#[derive(Debug, Clone)]
pub enum Norm2d<E: Element> {
    Batch(BatchNorm2d<E>),
    Layer(LayerNorm2d<E>),
}

impl<E: Element> Norm2d<E> {
    pub fn new(name: &str, channels: usize, kind: NormKind) -> Self {
        match kind {
            NormKind::BatchNorm => Norm2d::Batch(BatchNorm2d::new(name, channels)),
            NormKind::LayerNorm => Norm2d::Layer(LayerNorm2d::new(name, channels)),
        }
    }

    fn inner(&self) -> &dyn Module<E> {
        match self {
            Norm2d::Batch(n) => n,
            Norm2d::Layer(n) => n,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Module<E> {
        match self {
            Norm2d::Batch(n) => n,
            Norm2d::Layer(n) => n,
        }
    }
}

impl<E: Element> Module<E> for Norm2d<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        match self {
            Norm2d::Batch(n) => n.forward(ctx, x),
            Norm2d::Layer(n) => n.forward(ctx, x),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.inner().visit(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.inner_mut().visit_mut(f)
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        self.inner().cost(input, report)
    }
}
