use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Activation, Var};
use crate::error::{Error, Result};
use crate::model::cost::{CostReport, FeatureShape};
use crate::nn::{ConvNormAct, Ctx, Module, NormKind, Param};
use crate::tensor::kernels::ConvSpec;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedVariant {
    /// Two stride-2 3×3 convolutions, net stride 4.
    Overlapping,
    /// One stride-2 2×2 convolution.
    Nonoverlapping,
}

impl EmbedVariant {
    pub fn stride(self) -> usize {
        match self {
            EmbedVariant::Overlapping => 4,
            EmbedVariant::Nonoverlapping => 2,
        }
    }
}

impl fmt::Display for EmbedVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedVariant::Overlapping => "overlapping",
            EmbedVariant::Nonoverlapping => "nonoverlapping",
        })
    }
}

impl FromStr for EmbedVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlapping" => Ok(EmbedVariant::Overlapping),
            "nonoverlapping" => Ok(EmbedVariant::Nonoverlapping),
            other => Err(Error::Config(format!("unknown embed variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchEmbed<E: Element> {
    pub variant: EmbedVariant,
    pub layers: Vec<ConvNormAct<E>>,
}

impl<E: Element> PatchEmbed<E> {
    /// Overlapping: `cin → cout/2 → cout`, each conv followed by norm and
    /// `act`. Nonoverlapping: `cin → cout` followed by norm only.
    pub fn new(
        name: &str,
        variant: EmbedVariant,
        cin: usize,
        cout: usize,
        norm: NormKind,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layers = match variant {
            EmbedVariant::Overlapping => {
                if !cout.is_multiple_of(2) {
                    return Err(Error::Config(format!("{name}: overlapping embed needs even width, got {cout}")));
                }
                let spec = ConvSpec { stride: 2, padding: 1, ..ConvSpec::default() };
                vec![
                    ConvNormAct::new(&format!("{name}.0"), cin, cout / 2, 3, spec, norm, Some(act), rng)?,
                    ConvNormAct::new(&format!("{name}.1"), cout / 2, cout, 3, spec, norm, Some(act), rng)?,
                ]
            }
            EmbedVariant::Nonoverlapping => {
                let spec = ConvSpec { stride: 2, ..ConvSpec::default() };
                vec![ConvNormAct::new(&format!("{name}.0"), cin, cout, 2, spec, norm, None, rng)?]
            }
        };
        Ok(Self { variant, layers })
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        let s = self.variant.stride();
        if !h.is_multiple_of(s) || !w.is_multiple_of(s) {
            return Err(Error::Config(format!("{} embed needs H and W divisible by {s}, got {h}x{w}", self.variant)));
        }
        Ok(())
    }
}

impl<E: Element> Module<E> for PatchEmbed<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let (_, _, h, w) = x.value().dims4("patch_embed")?;
        self.check(h, w)?;
        self.layers.iter().try_fold(x, |x, l| l.forward(ctx, x))
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.layers.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        self.check(input.h, input.w)?;
        self.layers.iter().try_fold(input, |s, l| l.cost(s, report))
    }
}
