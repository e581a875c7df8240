use rand::Rng;

use super::{CMixer, ConvType, KernelVariant, SMixer};
use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::model::cost::{CostReport, FeatureShape};
use crate::nn::{Ctx, Module, Norm2d, NormKind, Param};
use crate::tensor::Element;

/// Everything needed to build one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub channels: usize,
    pub expand_ratio: usize,
    pub conv_type: ConvType,
    pub kernel_variant: KernelVariant,
    pub se_reduction: usize,
    pub activation: Activation,
    /// Norm after convolutions inside the mixers.
    pub conv_norm: NormKind,
    /// Pre-mixer norm.
    pub mixer_norm: NormKind,
}

impl BlockSpec {
    /// Hybrid-stage defaults for `channels` wide blocks.
    pub fn new(channels: usize, expand_ratio: usize) -> Self {
        Self {
            channels,
            expand_ratio,
            conv_type: ConvType::Full,
            kernel_variant: KernelVariant::Stacked3,
            se_reduction: 4,
            activation: Activation::Gelu,
            conv_norm: NormKind::BatchNorm,
            mixer_norm: NormKind::LayerNorm,
        }
    }
}

/// `y = x + SMixer(norm1(x))`, `z = y + CMixer(norm2(y))`.
#[derive(Debug, Clone)]
pub struct Block<E: Element> {
    pub norm1: Norm2d<E>,
    pub smixer: SMixer<E>,
    pub norm2: Norm2d<E>,
    pub cmixer: CMixer<E>,
}

impl<E: Element> Block<E> {
    pub fn new(name: &str, spec: &BlockSpec, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            norm1: Norm2d::new(&format!("{name}.norm1"), spec.channels, spec.mixer_norm),
            smixer: SMixer::new(&format!("{name}.smixer"), spec, rng)?,
            norm2: Norm2d::new(&format!("{name}.norm2"), spec.channels, spec.mixer_norm),
            cmixer: CMixer::new(&format!("{name}.cmixer"), spec, rng)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.smixer.fuse.out_channels
    }

    /// Zeroes the last projection of both mixers, making the block the
    /// identity map.
    pub fn zero_output_projections(&mut self) {
        self.smixer.fuse.zero_();
        self.cmixer.project.zero_();
    }
}

impl<E: Element> Module<E> for Block<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let (_, c, _, _) = x.value().dims4("block")?;
        if c != self.channels() {
            return Err(Error::shape("block", format!("expected {} channels, got {c}", self.channels())));
        }
        let y = x.add(self.smixer.forward(ctx, self.norm1.forward(ctx, x)?)?)?;
        y.add(self.cmixer.forward(ctx, self.norm2.forward(ctx, y)?)?)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.norm1.visit(f);
        self.smixer.visit(f);
        self.norm2.visit(f);
        self.cmixer.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.norm1.visit_mut(f);
        self.smixer.visit_mut(f);
        self.norm2.visit_mut(f);
        self.cmixer.visit_mut(f);
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let s = self.norm1.cost(input, report)?;
        let y = self.smixer.cost(s, report)?;
        let s = self.norm2.cost(y, report)?;
        self.cmixer.cost(s, report)
    }
}
