use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::cost::{CostReport, FeatureShape};
use crate::autograd::{Tape, Var};
use crate::blocks::Block;
use crate::error::{Error, Result};
use crate::layers::PatchEmbed;
use crate::nn::{Ctx, Linear, Mode, Module, Norm2d, Param};
use crate::tensor::{Element, Tensor};

/// Patch embedding followed by a run of blocks.
#[derive(Debug, Clone)]
pub struct Stage<E: Element> {
    pub embed: PatchEmbed<E>,
    pub blocks: Vec<Block<E>>,
}

impl<E: Element> Module<E> for Stage<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let x = self.embed.forward(ctx, x)?;
        self.blocks.iter().try_fold(x, |x, b| b.forward(ctx, x))
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.embed.visit(f);
        self.blocks.iter().for_each(|b| b.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.embed.visit_mut(f);
        self.blocks.iter_mut().for_each(|b| b.visit_mut(f));
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let x = self.embed.cost(input, report)?;
        self.blocks.iter().try_fold(x, |x, b| b.cost(x, report))
    }
}

/// Four stages, a final norm, global average pooling and a linear
/// classifier. `forward` maps `[N, in_channels, H, W]` to `[N, classes]`.
#[derive(Debug, Clone)]
pub struct Model<E: Element = f32> {
    pub config: ModelConfig,
    pub stages: Vec<Stage<E>>,
    pub norm: Norm2d<E>,
    pub head: Linear<E>,
}

impl<E: Element> Model<E> {
    /// Builds and initializes a model. The same config and seed always give
    /// the same parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::with_capacity(config.stages.len());
        let mut cin = config.in_channels;
        for (i, sc) in config.stages.iter().enumerate() {
            let embed = PatchEmbed::new(
                &format!("stages.{i}.embed"),
                sc.embed_variant,
                cin,
                sc.channels,
                config.conv_norm,
                config.embed_activation,
                &mut rng,
            )?;
            let spec = config.block_spec(i);
            let blocks = (0..sc.num_blocks)
                .map(|b| Block::new(&format!("stages.{i}.blocks.{b}"), &spec, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            stages.push(Stage { embed, blocks });
            cin = sc.channels;
        }
        Ok(Self {
            config: config.clone(),
            stages,
            norm: Norm2d::new("head.norm", cin, config.mixer_norm),
            head: Linear::new("head.fc", cin, config.num_classes, &mut rng),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_features()
    }

    /// Feature maps after each stage.
    pub fn stage_outputs<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Vec<Var<'t, E>>> {
        self.check_input(&x.shape())?;
        let mut outs = Vec::with_capacity(self.stages.len());
        let mut x = x;
        for s in &self.stages {
            x = s.forward(ctx, x)?;
            outs.push(x);
        }
        Ok(outs)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        match *shape {
            [_, c, h, w] if c == self.config.in_channels => self.config.check_resolution(h, w).map_err(|_| {
                Error::shape(
                    "model",
                    format!("input {h}x{w} must be a multiple of {}", self.config.total_stride().max(32)),
                )
            }),
            _ => Err(Error::shape(
                "model",
                format!("expected [N, {}, H, W] input, got {shape:?}", self.config.in_channels),
            )),
        }
    }

    /// Eval-mode logits for a batch, without tracking gradients.
    pub fn predict(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, Mode::Eval);
        let input = tape.constant(x.clone());
        Ok(self.forward(&ctx, input)?.value())
    }

    /// Cost report at `resolution × resolution`.
    pub fn costs(&self, resolution: usize) -> Result<CostReport> {
        self.config.check_resolution(resolution, resolution)?;
        let mut report = CostReport::new();
        self.cost(FeatureShape::new(self.config.in_channels, resolution, resolution), &mut report)?;
        Ok(report)
    }

    /// Parameters and buffers in checkpoint order. Values share storage
    /// with the model.
    pub fn params(&self) -> Vec<Param<E>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p.clone()));
        out
    }

    /// Names of learnable tensors, in checkpoint order.
    pub fn learnable_names(&self) -> Vec<String> {
        self.params().into_iter().filter(|p| p.is_learnable()).map(|p| p.name.clone()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.is_finite())
    }

    /// Order-sensitive hash of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params() {
            for v in p.value.data() {
                h = (h ^ Element::to_f64(*v).to_bits()).wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

impl<E: Element> Module<E> for Model<E> {
    fn forward<'t>(&self, ctx: &Ctx<'t, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let feats = self.stage_outputs(ctx, x)?;
        let last = *feats.last().expect("four stages");
        let pooled = self.norm.forward(ctx, last)?.gap()?.flatten()?;
        self.head.forward(ctx, pooled)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<E>)) {
        self.stages.iter().for_each(|s| s.visit(f));
        self.norm.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<E>)) {
        self.stages.iter_mut().for_each(|s| s.visit_mut(f));
        self.norm.visit_mut(f);
        self.head.visit_mut(f);
    }

    fn cost(&self, input: FeatureShape, report: &mut CostReport) -> Result<FeatureShape> {
        let x = self.stages.iter().try_fold(input, |x, s| s.cost(x, report))?;
        let x = self.norm.cost(x, report)?;
        self.head.cost(FeatureShape::new(x.c, 1, 1), report)
    }
}
