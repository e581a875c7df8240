use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spartan::gradcheck::{gradcheck_module, randomize_learnable, GradcheckOptions};
use spartan::layers::{EmbedVariant, FeatureDecompose, PatchEmbed, SqueezeExcite};
use spartan::model::{CostReport, FeatureShape};
use spartan::nn::{Ctx, Mode, Module, NormKind};
use spartan::{Activation, Error, Tape, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(&mut rng))
}

fn run<M: Module<f64>>(m: &M, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>, Error> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, mode);
    Ok(m.forward(&ctx, tape.constant(x.clone()))?.value())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn se_never_grows_magnitudes(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut se = SqueezeExcite::<f64>::new("se", 8, 4, &mut rng(seed)).unwrap();
        randomize_learnable(&mut se, 2.0, seed ^ 3);
        let x = random(&[2, 8, 4, 4], seed ^ 5).map(|v| v * scale);
        let y = run(&se, &x, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            prop_assert!(a.abs() <= b.abs());
        }
    }

    #[test]
    fn fd_preserves_channel_means(seed in any::<u64>()) {
        let mut fd = FeatureDecompose::<f64>::new("fd", 6, &mut rng(seed)).unwrap();
        fd.gamma.value = random(&[6], seed ^ 7).map(|v| 3.0 * v);
        let x = random(&[2, 6, 5, 5], seed ^ 11);
        let y = run(&fd.proj, &x, Mode::Eval).unwrap();
        let out = run(&fd, &x, Mode::Eval).unwrap();
        for (py, po) in y.data().chunks(25).zip(out.data().chunks(25)) {
            let (my, mo) = (py.iter().sum::<f64>() / 25.0, po.iter().sum::<f64>() / 25.0);
            prop_assert!((my - mo).abs() < 1e-6, "{} vs {}", my, mo);
        }
    }
}

#[test]
fn se_zero_expand_halves_input() {
    let mut se = SqueezeExcite::<f64>::new("se", 8, 4, &mut rng(1)).unwrap();
    se.expand.zero_();
    let x = random(&[2, 8, 3, 3], 2);
    let y = run(&se, &x, Mode::Train).unwrap();
    assert_eq!(y, x.map(|v| v / 2.0));
}

#[test]
fn se_gate_is_spatially_constant() {
    let se = SqueezeExcite::<f64>::new("se", 4, 2, &mut rng(3)).unwrap();
    let per_channel = random(&[1, 4, 1, 1], 4);
    let x = Tensor::from_fn(vec![1, 4, 3, 3], |i| per_channel.data()[i / 9]);
    let y = run(&se, &x, Mode::Eval).unwrap();
    for plane in y.data().chunks(9) {
        assert!(plane.iter().all(|&v| v == plane[0]));
    }
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, Mode::Eval);
    let gate = se.gate(&ctx, tape.constant(random(&[2, 4, 3, 3], 5))).unwrap().value();
    assert_eq!(gate.shape(), &[2, 4, 1, 1]);
    assert!(gate.data().iter().all(|&g| g > 0.0 && g < 1.0));
}

#[test]
fn se_reduction_must_divide() {
    let err = SqueezeExcite::<f64>::new("stage.se", 12, 5, &mut rng(0)).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("stage.se")), "{err}");
}

#[test]
fn fd_identities() {
    let fd = FeatureDecompose::<f64>::new("fd", 4, &mut rng(6)).unwrap();
    let x = random(&[2, 4, 5, 5], 7);
    assert_eq!(run(&fd, &x, Mode::Train).unwrap(), run(&fd.proj, &x, Mode::Train).unwrap());

    let mut fd = fd;
    fd.gamma.value = random(&[4], 8);
    let per_channel = random(&[2, 4, 1, 1], 9);
    let flat = Tensor::from_fn(vec![2, 4, 5, 5], |i| per_channel.data()[i / 25]);
    let y = run(&fd.proj, &flat, Mode::Eval).unwrap();
    assert!(run(&fd, &flat, Mode::Eval).unwrap().max_abs_diff(&y) < 1e-12);

    fd.gamma.value = Tensor::ones(vec![4]);
    let y = run(&fd.proj, &x, Mode::Eval).unwrap();
    let out = run(&fd, &x, Mode::Eval).unwrap();
    for (py, po) in y.data().chunks(25).zip(out.data().chunks(25)) {
        let m = py.iter().sum::<f64>() / 25.0;
        for (a, b) in py.iter().zip(po) {
            assert!((2.0 * a - m - b).abs() < 1e-6);
        }
    }
}

#[test]
fn patch_embed_shapes() {
    let overlap = PatchEmbed::<f32>::new(
        "e",
        EmbedVariant::Overlapping,
        3,
        32,
        NormKind::BatchNorm,
        Activation::Silu,
        &mut rng(0),
    )
    .unwrap();
    let mut report = CostReport::new();
    let out = overlap.cost(FeatureShape::new(3, 224, 224), &mut report).unwrap();
    assert_eq!(out, FeatureShape::new(32, 56, 56));
    let weights: Vec<Vec<usize>> = {
        let mut v = Vec::new();
        overlap.visit(&mut |p| {
            if p.name.ends_with(".weight") {
                v.push(p.value.shape().to_vec());
            }
        });
        v
    };
    assert_eq!(weights, vec![vec![16, 3, 3, 3], vec![32, 16, 3, 3]]);

    let tape = Tape::new();
    let ctx = Ctx::new(&tape, Mode::Eval);
    let x = Tensor::<f32>::zeros(vec![1, 3, 224, 224]);
    assert_eq!(overlap.forward(&ctx, tape.constant(x)).unwrap().shape(), vec![1, 32, 56, 56]);

    let down = PatchEmbed::<f32>::new(
        "d",
        EmbedVariant::Nonoverlapping,
        32,
        64,
        NormKind::BatchNorm,
        Activation::Silu,
        &mut rng(0),
    )
    .unwrap();
    let x = Tensor::<f32>::zeros(vec![1, 32, 56, 56]);
    assert_eq!(down.forward(&ctx, tape.constant(x)).unwrap().shape(), vec![1, 64, 28, 28]);
    assert_eq!(down.cost(FeatureShape::new(32, 56, 56), &mut report).unwrap(), FeatureShape::new(64, 28, 28));

    let odd = Tensor::<f32>::zeros(vec![1, 3, 30, 30]);
    assert!(matches!(overlap.forward(&ctx, tape.constant(odd)), Err(Error::Config(_))));
    assert!(matches!(down.cost(FeatureShape::new(32, 7, 7), &mut report), Err(Error::Config(_))));
    assert_eq!(EmbedVariant::Overlapping.stride(), 4);
    assert_eq!(EmbedVariant::Nonoverlapping.stride(), 2);
}

#[test]
fn layers_pass_gradcheck() {
    let opts = GradcheckOptions::default();
    let x = random(&[2, 8, 4, 4], 10);
    let mut se = SqueezeExcite::<f64>::new("se", 8, 4, &mut rng(11)).unwrap();
    randomize_learnable(&mut se, 0.5, 12);
    let r = gradcheck_module(&se, &x, Mode::Train, 13, opts).unwrap();
    assert!(r.passed, "se {r:?}");

    let mut fd = FeatureDecompose::<f64>::new("fd", 8, &mut rng(14)).unwrap();
    randomize_learnable(&mut fd, 0.5, 15);
    let r = gradcheck_module(&fd, &x, Mode::Train, 16, opts).unwrap();
    assert!(r.passed, "fd {r:?}");

    for (variant, cin, size) in [(EmbedVariant::Overlapping, 3, 8), (EmbedVariant::Nonoverlapping, 8, 4)] {
        let mut e =
            PatchEmbed::<f64>::new("e", variant, cin, 8, NormKind::BatchNorm, Activation::Silu, &mut rng(17)).unwrap();
        randomize_learnable(&mut e, 0.5, 18);
        let input = random(&[2, cin, size, size], 19);
        let r = gradcheck_module(&e, &input, Mode::Train, 20, opts).unwrap();
        assert!(r.passed, "{variant} {r:?}");
    }
}
