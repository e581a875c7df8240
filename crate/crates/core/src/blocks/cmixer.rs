use rand::Rng;

use super::{BlockSpec, WaveAggregate};
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::SqueezeExcite;
use crate::model::cost::{CostReport, FeatureShape};
use crate::nn::{Conv2d, ConvNormAct, Ctx, Module, Param};
use crate::tensor::kernels::ConvSpec;
use crate::tensor::Element;

/// Channel mixer: wave aggregation widening to `r·C`, a depthwise 3×3
/// refinement, SE over the wide features and a 1×1 projection back to `C`.
#[derive(Debug, Clone)]
pub struct CMixer<E: Element> {
    pub wave: WaveAggregate<E>,
    pub spatial: ConvNormAct<E>,
    pub se: SqueezeExcite<E>,
    pub project: Conv2d<E>,
}

impl<E: Element> CMixer<E> {
    pub fn new(name: &str, spec: &BlockSpec, rng: &mut impl Rng) -> Result<Self> {
        let c = spec.channels;
        if spec.expand_ratio == 0 {
            return Err(Error::Config(format!("{name}: expand ratio must be positive")));
        }
        let width = spec.expand_ratio * c;
        Ok(Self {
            wave: WaveAggregate::new(&format!("{name}.wave"), c, width, spec.activation, rng)?,
            spatial: ConvNormAct::new(
                &format!("{name}.spatial"),
                width,
                width,
                3,
                ConvSpec::same(3, 1, width),
                spec.conv_norm,
                Some(spec.activation),
                rng,
            )?,
            se: SqueezeExcite::new(&format!("{name}.se"), width, spec.se_reduction, rng)?,
            project: Conv2d::pointwise(&format!("{name}.project"), width, c, true, rng)?,
        })
    }

    pub fn width(&self) -> usize {
        self.wave.width()
    }
}

impl<E: Element> Module<E> for CMixer<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let w = self.wave.forward(ctx, x)?;
        let s = self.se.forward(ctx, self.spatial.forward(ctx, w)?)?;
        self.project.forward(ctx, s)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.wave.visit(f);
        self.spatial.visit(f);
        self.se.visit(f);
        self.project.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.wave.visit_mut(f);
        self.spatial.visit_mut(f);
        self.se.visit_mut(f);
        self.project.visit_mut(f);
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let w = self.wave.cost(input, report)?;
        let s = self.spatial.cost(w, report)?;
        self.se.cost(s, report)?;
        self.project.cost(s, report)
    }
}
