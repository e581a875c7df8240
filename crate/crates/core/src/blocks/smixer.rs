use rand::Rng;

use super::{BlockSpec, KernelVariant};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::{FeatureDecompose, SqueezeExcite};
use crate::model::cost::{CostReport, FeatureShape};
use crate::nn::{Conv2d, ConvNormAct, Ctx, Module, Param};
use crate::tensor::kernels::ConvSpec;
use crate::tensor::Element;

/// Two-branch spatial mixer. The decomposed input is split in half: the
/// first half goes through a dilation-1 3×3 conv (high frequency), the
/// second through dilation-2 convs spanning 9×9 (low frequency). Each branch
/// is gated by its own SE before the 1×1 fusion.
#[derive(Debug, Clone)]
pub struct SMixer<E: Element> {
    pub fd: FeatureDecompose<E>,
    pub high: ConvNormAct<E>,
    pub low: Vec<ConvNormAct<E>>,
    pub se_high: SqueezeExcite<E>,
    pub se_low: SqueezeExcite<E>,
    pub fuse: Conv2d<E>,
}

impl<E: Element> SMixer<E> {
    pub fn new(name: &str, spec: &BlockSpec, rng: &mut impl Rng) -> Result<Self> {
        let c = spec.channels;
        if !c.is_multiple_of(2) {
            return Err(Error::Config(format!("{name}: SMixer needs an even channel count, got {c}")));
        }
        let half = c / 2;
        let groups = spec.conv_type.groups(half);
        let act = Some(spec.activation);
        let fd = FeatureDecompose::new(&format!("{name}.fd"), c, rng)?;
        let high = ConvNormAct::new(
            &format!("{name}.high"),
            half,
            half,
            3,
            ConvSpec::same(3, 1, groups),
            spec.conv_norm,
            act,
            rng,
        )?;
        let low = match spec.kernel_variant {
            KernelVariant::Stacked3 => (0..2)
                .map(|i| {
                    let s = ConvSpec::same(3, 2, groups);
                    ConvNormAct::new(&format!("{name}.low.{i}"), half, half, 3, s, spec.conv_norm, act, rng)
                })
                .collect::<Result<Vec<_>>>()?,
            KernelVariant::Single5 => {
                let s = ConvSpec::same(5, 2, groups);
                vec![ConvNormAct::new(&format!("{name}.low.0"), half, half, 5, s, spec.conv_norm, act, rng)?]
            }
        };
        Ok(Self {
            fd,
            high,
            low,
            se_high: SqueezeExcite::new(&format!("{name}.se_high"), half, spec.se_reduction, rng)?,
            se_low: SqueezeExcite::new(&format!("{name}.se_low"), half, spec.se_reduction, rng)?,
            fuse: Conv2d::pointwise(&format!("{name}.fuse"), c, c, true, rng)?,
        })
    }

    /// Output of the low-frequency branch alone, before its SE.
    pub fn low_branch<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        self.low.iter().try_fold(x, |x, l| l.forward(ctx, x))
    }
}

impl<E: Element> Module<E> for SMixer<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let d = self.fd.forward(ctx, x)?;
        let (dh, dl) = d.split_channels(self.fuse.in_channels / 2)?;
        let fh = self.se_high.forward(ctx, self.high.forward(ctx, dh)?)?;
        let fl = self.se_low.forward(ctx, self.low_branch(ctx, dl)?)?;
        self.fuse.forward(ctx, fh.concat_channels(fl)?)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.fd.visit(f);
        self.high.visit(f);
        self.low.iter().for_each(|l| l.visit(f));
        self.se_high.visit(f);
        self.se_low.visit(f);
        self.fuse.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.fd.visit_mut(f);
        self.high.visit_mut(f);
        self.low.iter_mut().for_each(|l| l.visit_mut(f));
        self.se_high.visit_mut(f);
        self.se_low.visit_mut(f);
        self.fuse.visit_mut(f);
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let d = self.fd.cost(input, report)?;
        let half = d.with_channels(d.c / 2);
        let fh = self.high.cost(half, report)?;
        let fl = self.low.iter().try_fold(half, |s, l| l.cost(s, report))?;
        self.se_high.cost(fh, report)?;
        self.se_low.cost(fl, report)?;
        self.fuse.cost(d, report)
    }
}
