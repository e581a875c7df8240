use rand::Rng;

use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::model::cost::{CostReport, FeatureShape};
use crate::nn::{Conv2d, Ctx, Module, Param};
use crate::tensor::{Element, Tensor};

/// Complex multiply of `(re, im)` by `a + bi`, with `a`, `b` of shape
/// `[C, 1, 1]` broadcast over batch and space.
pub fn modulate<'t, E: Element>(
    re: Var<'t, E>,
    im: Var<'t, E>,
    a: Var<'t, E>,
    b: Var<'t, E>,
) -> Result<(Var<'t, E>, Var<'t, E>)> {
    let re2 = re.mul(a)?.sub(im.mul(b)?)?;
    let im2 = im.mul(a)?.add(re.mul(b)?)?;
    Ok((re2, im2))
}

/// Wave-based channel aggregation.
///
/// The channel-wise maximum is first superposed onto every channel. Amplitude
/// (linear) and phase (activated) projections then widen to `width` channels;
/// their product is split into real (first half) and imaginary (second half)
/// parts, which are rotated and scaled by the learnable complex weight
/// `a + bi` before being concatenated back.
#[derive(Debug, Clone)]
pub struct WaveAggregate<E: Element> {
    pub amp: Conv2d<E>,
    pub phase: Conv2d<E>,
    pub weight_re: Param<E>,
    pub weight_im: Param<E>,
    pub activation: Activation,
}

impl<E: Element> WaveAggregate<E> {
    pub fn new(name: &str, channels: usize, width: usize, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if !width.is_multiple_of(2) {
            return Err(Error::Config(format!("{name}: wave width must be even, got {width}")));
        }
        Ok(Self {
            amp: Conv2d::pointwise(&format!("{name}.amp"), channels, width, true, rng)?,
            phase: Conv2d::pointwise(&format!("{name}.phase"), channels, width, true, rng)?,
            weight_re: Param::learnable(format!("{name}.weight_re"), Tensor::ones(vec![width / 2])),
            weight_im: Param::learnable(format!("{name}.weight_im"), Tensor::zeros(vec![width / 2])),
            activation,
        })
    }

    pub fn width(&self) -> usize {
        self.amp.out_channels
    }

    fn name(&self) -> &str {
        self.weight_re.name.trim_end_matches(".weight_re")
    }
}

impl<E: Element> Module<E> for WaveAggregate<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let x = x.add(x.channel_max()?)?;
        let amp = self.amp.forward(ctx, x)?;
        let phase = self.phase.forward(ctx, x)?.activation(self.activation)?;
        let half = self.width() / 2;
        let (re, im) = amp.mul(phase)?.split_channels(half)?;
        let a = ctx.param(&self.weight_re).reshape(vec![half, 1, 1])?;
        let b = ctx.param(&self.weight_im).reshape(vec![half, 1, 1])?;
        let (re, im) = modulate(re, im, a, b)?;
        re.concat_channels(im)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.amp.visit(f);
        self.phase.visit(f);
        f(&self.weight_re);
        f(&self.weight_im);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.amp.visit_mut(f);
        self.phase.visit_mut(f);
        f(&mut self.weight_re);
        f(&mut self.weight_im);
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let out = self.amp.cost(input, report)?;
        self.phase.cost(input, report)?;
        report.elementwise(&format!("{}.{}", self.name(), self.activation), out, 1, 0, vec![]);
        let tensors = vec![self.weight_re.name.clone(), self.weight_im.name.clone()];
        report.elementwise(&format!("{}.modulate", self.name()), out, 3, out.c as u64, tensors);
        Ok(out)
    }
}
