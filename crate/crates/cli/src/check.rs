use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spartan::blocks::{Block, CMixer, ConvType, KernelVariant, SMixer, WaveAggregate};
use spartan::gradcheck::{gradcheck_module, gradcheck_named, randomize_learnable, GradcheckOptions, GradcheckReport};
use spartan::layers::{EmbedVariant, FeatureDecompose, PatchEmbed, SqueezeExcite};
use spartan::model::ModelConfig;
use spartan::nn::{BatchNorm2d, Conv2d, LayerNorm2d, Linear, Mode, Module};
use spartan::{Activation, ConvSpec, Result, Tensor};

const PARAM_STD: f64 = 0.5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
}

/// Every layer type plus full blocks, sized from `cfg`'s first stage.
/// Prints one row per component and returns whether all passed.
pub fn run(cfg: &ModelConfig, tolerance: f64, seed: u64) -> Result<bool> {
    let opts = GradcheckOptions { tol: tolerance, ..GradcheckOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.stages[0].channels;
    let (n, hw) = (2, 6);
    let x = random(&[n, c, hw, hw], &mut rng);
    let mut results: Vec<(String, GradcheckReport)> = Vec::new();
    let module = |name: &str,
                  mut m: Box<dyn Module<f64>>,
                  input: &Tensor<f64>,
                  rng: &mut ChaCha8Rng|
     -> Result<(String, GradcheckReport)> {
        randomize_learnable(m.as_mut(), PARAM_STD, rng.random());
        Ok((name.to_string(), gradcheck_module(m.as_ref(), input, Mode::Train, rng.random(), opts)?))
    };

    let conv = Conv2d::new("conv", c, c, 3, ConvSpec::same(3, 1, 1), true, &mut rng)?;
    results.push(module("conv2d", Box::new(conv), &x, &mut rng)?);
    let spec = ConvSpec { stride: 2, padding: 2, dilation: 2, groups: 2 };
    let conv = Conv2d::new("conv_grouped", c, c, 3, spec, true, &mut rng)?;
    results.push(module("conv2d strided dilated grouped", Box::new(conv), &x, &mut rng)?);
    let conv = Conv2d::new("conv_dw", c, c, 3, ConvSpec::same(3, 1, c), false, &mut rng)?;
    results.push(module("conv2d depthwise", Box::new(conv), &x, &mut rng)?);
    let bn = BatchNorm2d::new("bn", c);
    results.push(module("batchnorm2d", Box::new(bn), &x, &mut rng)?);
    let ln = LayerNorm2d::new("ln", c);
    results.push(module("layernorm_channels", Box::new(ln), &x, &mut rng)?);

    for act in [Activation::Gelu, Activation::Silu, Activation::Sigmoid, Activation::Relu] {
        let r = gradcheck_named(
            |_, v| v[0].activation(act)?.mul(v[1])?.sum(),
            &[("input".into(), x.clone()), ("probe".into(), random(x.shape(), &mut rng))],
            opts,
        )?;
        results.push((format!("activation {act}"), r));
    }
    let feats = random(&[n, c], &mut rng);
    let lin = Linear::new("linear", c, 5, &mut rng);
    let probe = random(&[n, 5], &mut rng);
    let inputs = [
        ("input".to_string(), feats),
        ("linear.weight".to_string(), lin.weight.value.clone()),
        ("linear.bias".to_string(), random(&[5], &mut rng)),
        ("probe".to_string(), probe),
    ];
    results.push((
        "linear".into(),
        gradcheck_named(|_, v| v[0].linear(v[1], Some(v[2]))?.mul(v[3])?.sum(), &inputs, opts)?,
    ));
    let other = random(&[n, 3, hw, hw], &mut rng);
    let inputs = [
        ("a".to_string(), x.clone()),
        ("b".to_string(), other),
        ("probe".to_string(), random(&[n, c + 3, hw, hw], &mut rng)),
    ];
    let r = gradcheck_named(
        |_, v| {
            let cat = v[0].concat_channels(v[1])?;
            let mixed = cat.add(cat.channel_max()?)?.sub(cat.gap()?)?;
            mixed.mul(v[2])?.sum()
        },
        &inputs,
        opts,
    )?;
    results.push(("concat / channel_max / gap / add / sub".into(), r));

    let half = c / 2;
    let se_red = if half.is_multiple_of(cfg.se_reduction) { cfg.se_reduction } else { 2 };
    let se = SqueezeExcite::new("se", c, se_red, &mut rng)?;
    results.push(module("squeeze_excite", Box::new(se), &x, &mut rng)?);
    let fd = FeatureDecompose::new("fd", c, &mut rng)?;
    results.push(module("feature_decompose", Box::new(fd), &x, &mut rng)?);
    let image = random(&[n, cfg.in_channels, 8, 8], &mut rng);
    let embed = PatchEmbed::new(
        "embed",
        EmbedVariant::Overlapping,
        cfg.in_channels,
        c,
        cfg.conv_norm,
        cfg.embed_activation,
        &mut rng,
    )?;
    results.push(module("patch_embed overlapping", Box::new(embed), &image, &mut rng)?);
    let embed = PatchEmbed::new(
        "embed",
        EmbedVariant::Nonoverlapping,
        c,
        2 * c,
        cfg.conv_norm,
        cfg.embed_activation,
        &mut rng,
    )?;
    results.push(module("patch_embed nonoverlapping", Box::new(embed), &x, &mut rng)?);
    let wave = WaveAggregate::new("wave", c, 2 * c, cfg.block_activation, &mut rng)?;
    results.push(module("wave_aggregate", Box::new(wave), &x, &mut rng)?);

    let mut spec = cfg.block_spec(0);
    spec.se_reduction = se_red;
    for kv in [KernelVariant::Stacked3, KernelVariant::Single5] {
        let s = spartan::blocks::BlockSpec { kernel_variant: kv, ..spec.clone() };
        results.push(module(&format!("smixer {kv}"), Box::new(SMixer::new("smixer", &s, &mut rng)?), &x, &mut rng)?);
    }
    results.push(module("cmixer", Box::new(CMixer::new("cmixer", &spec, &mut rng)?), &x, &mut rng)?);
    for ct in [ConvType::Full, ConvType::Depthwise] {
        let s = spartan::blocks::BlockSpec { conv_type: ct, ..spec.clone() };
        results.push(module(&format!("block {ct}"), Box::new(Block::new("block", &s, &mut rng)?), &x, &mut rng)?);
    }

    let width = results.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
    println!("{:<width$}  {:>8}  {:>13}  status", "component", "checked", "max_rel_error");
    let mut ok = true;
    for (name, r) in &results {
        let status = if r.passed { "ok" } else { "FAIL" };
        println!("{name:<width$}  {:>8}  {:>13.3e}  {status}", r.checked, r.max_rel_error);
        ok &= r.passed;
    }
    for (name, r) in results.iter().filter(|(_, r)| !r.passed) {
        if let Some(w) = &r.worst {
            println!("{name}: worst at {w}");
        }
    }
    println!("tolerance {tolerance:e}: {}", if ok { "all passed" } else { "FAILED" });
    Ok(ok)
}
