use rand::Rng;

use super::{trunc_normal, Ctx, Module, Norm2d, NormKind, Param};
use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::model::cost::{CostReport, FeatureShape};
use crate::tensor::kernels::ConvSpec;
use crate::tensor::{Element, Tensor};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Conv2d<E: Element> {
    pub weight: Param<E>,
    pub bias: Option<Param<E>>,
    pub spec: ConvSpec,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl<E: Element> Conv2d<E> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if spec.groups == 0 || !in_channels.is_multiple_of(spec.groups) || !out_channels.is_multiple_of(spec.groups) {
            return Err(Error::Config(format!(
                "{name}: groups={} must divide in={in_channels} and out={out_channels}",
                spec.groups
            )));
        }
        let shape = [out_channels, in_channels / spec.groups, kernel, kernel];
        Ok(Self {
            weight: Param::learnable(format!("{name}.weight"), trunc_normal(&shape, INIT_STD, rng)),
            bias: bias.then(|| Param::learnable(format!("{name}.bias"), Tensor::zeros(vec![out_channels]))),
            spec,
            in_channels,
            out_channels,
            kernel,
        })
    }

    /// 1×1, stride 1, full.
    pub fn pointwise(name: &str, cin: usize, cout: usize, bias: bool, rng: &mut impl Rng) -> Result<Self> {
        Self::new(name, cin, cout, 1, ConvSpec::default(), bias, rng)
    }

    pub fn name(&self) -> &str {
        self.weight.name.strip_suffix(".weight").unwrap_or(&self.weight.name)
    }

    /// Zeroes weight and bias.
    pub fn zero_(&mut self) {
        self.weight.value = Tensor::zeros(self.weight.value.shape().to_vec());
        if let Some(b) = &mut self.bias {
            b.value = Tensor::zeros(b.value.shape().to_vec());
        }
    }

    pub fn output_shape(&self, input: FeatureShape) -> Result<FeatureShape> {
        let err = || Error::shape("conv2d", format!("{}: kernel does not fit {}x{}", self.name(), input.h, input.w));
        Ok(FeatureShape::new(
            self.out_channels,
            self.spec.output_len(input.h, self.kernel).ok_or_else(err)?,
            self.spec.output_len(input.w, self.kernel).ok_or_else(err)?,
        ))
    }
}

impl<E: Element> Module<E> for Conv2d<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let w = ctx.param(&self.weight);
        let b = self.bias.as_ref().map(|b| ctx.param(b));
        x.conv2d(w, b, self.spec)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        if input.c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("{} expects {} channels, got {}", self.name(), self.in_channels, input.c),
            ));
        }
        let out = self.output_shape(input)?;
        let mut params = self.weight.value.numel() as u64;
        let mut tensors = vec![self.weight.name.clone()];
        if let Some(b) = &self.bias {
            params += b.value.numel() as u64;
            tensors.push(b.name.clone());
        }
        report.conv(self.name(), input, out, self.kernel, self.spec.groups, params, tensors);
        Ok(out)
    }
}

/// Convolution (without bias) → normalization → optional activation.
#[derive(Debug, Clone)]
pub struct ConvNormAct<E: Element> {
    pub conv: Conv2d<E>,
    pub norm: Norm2d<E>,
    pub act: Option<Activation>,
}

impl<E: Element> ConvNormAct<E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: ConvSpec,
        norm: NormKind,
        act: Option<Activation>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&format!("{name}.conv"), cin, cout, kernel, spec, false, rng)?,
            norm: Norm2d::new(&format!("{name}.norm"), cout, norm),
            act,
        })
    }
}

impl<E: Element> Module<E> for ConvNormAct<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let y = self.norm.forward(ctx, self.conv.forward(ctx, x)?)?;
        match self.act {
            Some(a) => y.activation(a),
            None => Ok(y),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.conv.visit(f);
        self.norm.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.conv.visit_mut(f);
        self.norm.visit_mut(f);
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let out = self.conv.cost(input, report)?;
        let out = self.norm.cost(out, report)?;
        if let Some(a) = self.act {
            report.elementwise(&format!("{}.{a}", self.conv.name().trim_end_matches(".conv")), out, 1, 0, vec![]);
        }
        Ok(out)
    }
}
