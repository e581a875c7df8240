//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::path::Path;
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spartan::blocks::{modulate, Block, BlockSpec, ConvType, KernelVariant};
use spartan::model::cost::{conv_macs, FeatureShape};
use spartan::model::{Model, ModelConfig};
use spartan::nn::{Ctx, Mode, Module};
use spartan::tensor::kernels::{conv2d_forward, ConvGeometry};
use spartan::train::{evaluate, Dataset};
use spartan::{ConvSpec, Tape, Tensor};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn spartan(args: &[&str]) -> (Output, Duration) {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_spartan")).args(args).output().expect("binary runs");
    (o, start.elapsed())
}

fn ok_stdout(o: &Output) -> Result<String, String> {
    if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    } else {
        Err(format!("exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr).lines().last().unwrap_or("")))
    }
}

fn check(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn within(value: f64, target: f64) -> bool {
    (value - target).abs() <= 0.10 * target
}

/// Total `(params, macs)` from `spartan costs --format csv`.
fn totals(config: &str, extra: &[&str]) -> Result<((u64, u64), Duration), String> {
    let mut args = vec!["costs", "--config", config, "--format", "csv"];
    args.extend_from_slice(extra);
    let (o, t) = spartan(&args);
    let out = ok_stdout(&o)?;
    let total = out.lines().find(|l| l.starts_with("total,")).ok_or("no total row")?;
    let v: Vec<u64> = total
        .split(',')
        .skip(1)
        .map(|x| x.parse().map_err(|_| format!("bad total row `{total}`")))
        .collect::<Result<_, _>>()?;
    Ok(((v[0], v[1]), t))
}

fn param_counts() -> Outcome {
    let ((xt, _), t1) = totals("spartan-xt", &[])?;
    let ((t, _), t2) = totals("spartan-t", &[])?;
    check(within(xt as f64, 2.07e6), format!("spartan-xt params {xt}"))?;
    check(within(t as f64, 3.8e6), format!("spartan-t params {t}"))?;
    let slowest = t1.max(t2);
    check(slowest < Duration::from_secs(5), format!("costs took {slowest:?}"))?;
    Ok(format!("xt {:.3}M, t {:.3}M, slowest run {:.2}s", xt as f64 / 1e6, t as f64 / 1e6, slowest.as_secs_f64()))
}

fn flops() -> Outcome {
    let ((_, xt), _) = totals("spartan-xt", &[])?;
    let ((_, t224), _) = totals("spartan-t", &[])?;
    let ((_, t256), _) = totals("spartan-t", &["--resolution", "256"])?;
    check(within(xt as f64, 0.64e9), format!("xt {xt}"))?;
    check(within(t224 as f64, 0.83e9), format!("t@224 {t224}"))?;
    check(within(t256 as f64, 1.08e9), format!("t@256 {t256}"))?;
    // every resolution-dependent MAC scales by exactly (256/224)²; the
    // head and the squeeze-excite FCs act on pooled vectors and do not
    let cfg = ModelConfig::spartan_t();
    let model = Model::<f32>::build(&cfg, 0).map_err(|e| e.to_string())?;
    let (a, b) = (model.costs(224).map_err(|e| e.to_string())?, model.costs(256).map_err(|e| e.to_string())?);
    check(a.totals().macs == t224 && b.totals().macs == t256, "library and CLI totals differ".into())?;
    check(
        b.spatial_macs() * 49 == a.spatial_macs() * 64,
        format!("spatial {} vs {}", b.spatial_macs(), a.spatial_macs()),
    )?;
    let fixed = a.totals().macs - a.spatial_macs();
    check(fixed == b.totals().macs - b.spatial_macs(), "resolution-independent MACs changed".into())?;
    Ok(format!(
        "xt {:.3}G, t@224 {:.3}G, t@256 {:.3}G; spatial MACs scale by (256/224)^2 exactly, {fixed} resolution-independent",
        xt as f64 / 1e9,
        t224 as f64 / 1e9,
        t256 as f64 / 1e9
    ))
}

fn kernel_ablation() -> Outcome {
    let ((p3, f3), _) = totals("spartan-xt", &[])?;
    let ((p5, f5), _) = totals("spartan-xt", &["--set", "kernel_variant=single5"])?;
    let df = 1.0 - f3 as f64 / f5 as f64;
    let dp = 1.0 - p3 as f64 / p5 as f64;
    check((df - 0.06).abs() <= 0.02, format!("FLOPs delta {:.2}%", 100.0 * df))?;
    check((dp - 0.014).abs() <= 0.01, format!("params delta {:.2}%", 100.0 * dp))?;
    Ok(format!("FLOPs -{:.2}%, params -{:.2}%", 100.0 * df, 100.0 * dp))
}

fn conv_type_ablation() -> Outcome {
    let all = |t: &str| (0..4).map(|i| format!("stages.{i}.conv_type={t}")).collect::<Vec<_>>();
    let mut lines = Vec::new();
    for (label, sets, p, f) in [
        ("full", all("full"), 3.3e6, 0.78e9),
        ("depthwise", all("depthwise"), 2.2e6, 0.57e9),
        ("hybrid", vec![], 2.2e6, 0.64e9),
    ] {
        let mut extra = Vec::new();
        for s in &sets {
            extra.extend(["--set", s.as_str()]);
        }
        let ((params, macs), _) = totals("spartan-xt", &extra)?;
        check(within(params as f64, p) && within(macs as f64, f), format!("{label}: {params} params, {macs} MACs"))?;
        lines.push(format!("{label} {:.2}M/{:.3}G", params as f64 / 1e6, macs as f64 / 1e9));
    }
    Ok(lines.join(", "))
}

fn gradcheck() -> Outcome {
    let (o, t) = spartan(&["gradcheck", "--config", "spartan-tiny"]);
    let out = ok_stdout(&o)?;
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for line in out.lines().skip(1).take_while(|l| !l.starts_with("tolerance")) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err: f64 = fields[fields.len() - 2].parse().map_err(|_| format!("bad row `{line}`"))?;
        check(err < 1e-4 && fields[fields.len() - 1] == "ok", format!("row `{line}`"))?;
        worst = worst.max(err);
        rows += 1;
    }
    check(out.contains("block full") && out.contains("block depthwise"), "no full-block rows".into())?;
    check(t < Duration::from_secs(120), format!("took {t:?}"))?;
    Ok(format!("{rows} components, worst relative error {worst:.2e}, {:.1}s", t.as_secs_f64()))
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut cases, mut worst) = (0, 0.0f64);
    while cases < 200 {
        let groups = rng.random_range(1..=3);
        let (cin, cout) = (groups * rng.random_range(1..=2), groups * rng.random_range(1..=3));
        let k = rng.random_range(1..=3);
        let spec = ConvSpec {
            stride: rng.random_range(1..=2),
            padding: rng.random_range(0..=2),
            dilation: rng.random_range(1..=2),
            groups,
        };
        let (n, h, w) = (rng.random_range(1..=2), rng.random_range(1..=7), rng.random_range(1..=7));
        let span = spec.dilation * (k - 1) + 1;
        if h + 2 * spec.padding < span || w + 2 * spec.padding < span {
            continue;
        }
        let x: Vec<f64> = (0..n * cin * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..cout * (cin / groups) * k * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let geo = ConvGeometry::new(&[n, cin, h, w], &[cout, cin / groups, k, k], spec).map_err(|e| e.to_string())?;
        let [_, _, oh, ow] = geo.output_shape();
        let got = conv2d_forward(&geo, &x, &wt, None);

        let (cin_g, cout_g) = (cin / groups, cout / groups);
        let mut count = 0u64;
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin_g {
                            for ky in 0..k {
                                for kx in 0..k {
                                    count += 1;
                                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx * spec.dilation) as isize - spec.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        let c = (co / cout_g) * cin_g + ci;
                                        acc += x[((b * cin + c) * h + iy as usize) * w + ix as usize]
                                            * wt[((co * cin_g + ci) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        let g = got[((b * cout + co) * oh + oy) * ow + ox];
                        worst = worst.max((g - acc).abs());
                    }
                }
            }
        }
        let counted = conv_macs(cin, groups, k, FeatureShape::new(cout, oh, ow)) * n as u64;
        check(count == counted && count == geo.macs(), format!("MAC count {counted}/{} vs {count}", geo.macs()))?;
        check(worst <= 1e-6, format!("value error {worst:e}"))?;
        cases += 1;
    }
    Ok(format!("{cases} randomized cases, counts exact, max |error| {worst:.1e}"))
}

fn identity_at_zero() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for ct in [ConvType::Full, ConvType::Depthwise] {
        for kv in [KernelVariant::Stacked3, KernelVariant::Single5] {
            let spec = BlockSpec { conv_type: ct, kernel_variant: kv, se_reduction: 4, ..BlockSpec::new(16, 2) };
            let mut b64 = Block::<f64>::new("b", &spec, &mut rng).map_err(|e| e.to_string())?;
            let mut b32 = Block::<f32>::new("b", &spec, &mut rng).map_err(|e| e.to_string())?;
            b64.zero_output_projections();
            b32.zero_output_projections();
            for trial in 0..5 {
                let x = Tensor::<f64>::from_fn(vec![2, 16, 7, 7], |_| 4.0 * rng.random::<f64>() - 2.0);
                for mode in [Mode::Train, Mode::Eval] {
                    let tape = Tape::new();
                    let y = b64
                        .forward(&Ctx::new(&tape, mode), tape.constant(x.clone()))
                        .map_err(|e| e.to_string())?
                        .value();
                    let same = y.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                    check(same, format!("{ct} {kv} f64 trial {trial} {mode:?}"))?;
                    let x32 = x.cast::<f32>();
                    let tape = Tape::new();
                    let y = b32
                        .forward(&Ctx::new(&tape, mode), tape.constant(x32.clone()))
                        .map_err(|e| e.to_string())?
                        .value();
                    let same = y.data().iter().zip(x32.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                    check(same, format!("{ct} {kv} f32 trial {trial} {mode:?}"))?;
                    checked += 2;
                }
            }
        }
    }
    Ok(format!("{checked} block forwards bitwise equal to their input"))
}

fn wave_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let half = rng.random_range(1..=8);
        let shape = vec![2, half, 4, 4];
        let re = Tensor::<f64>::from_fn(shape.clone(), |_| rng.random_range(-3.0..3.0));
        let im = Tensor::<f64>::from_fn(shape, |_| rng.random_range(-3.0..3.0));
        let apply = |re: &Tensor<f64>, im: &Tensor<f64>, a: &Tensor<f64>, b: &Tensor<f64>| {
            let tape = Tape::new();
            let c = |t: &Tensor<f64>| tape.constant(t.clone());
            let (r, i) = modulate(c(re), c(im), c(a), c(b)).expect("modulate");
            (r.value(), i.value())
        };
        let (ones, zeros) = (Tensor::ones(vec![half, 1, 1]), Tensor::zeros(vec![half, 1, 1]));
        check(apply(&re, &im, &ones, &zeros) == (re.clone(), im.clone()), format!("trial {trial}: unit weight"))?;
        let (mut r, mut i) = (re.clone(), im.clone());
        for _ in 0..4 {
            (r, i) = apply(&r, &i, &zeros, &ones);
        }
        check(r == re && i == im, format!("trial {trial}: (0,1) four times"))?;
        let phi: Vec<f64> = (0..half).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
        let a = Tensor::new(vec![half, 1, 1], phi.iter().map(|p| p.cos()).collect()).map_err(|e| e.to_string())?;
        let b = Tensor::new(vec![half, 1, 1], phi.iter().map(|p| p.sin()).collect()).map_err(|e| e.to_string())?;
        let (r, i) = apply(&re, &im, &a, &b);
        for k in 0..re.numel() {
            let before = re.data()[k].hypot(im.data()[k]);
            let after = r.data()[k].hypot(i.data()[k]);
            worst = worst.max((before - after).abs());
        }
        check(worst <= 1e-6, format!("trial {trial}: modulus drift {worst:e}"))?;
    }
    Ok(format!("50 random tensors, max modulus drift {worst:.1e}"))
}

struct Trained {
    dir: tempfile::TempDir,
}

impl Trained {
    fn data(&self) -> String {
        self.dir.path().join("train.sprt").display().to_string()
    }

    fn checkpoint(&self) -> String {
        self.dir.path().join("tiny.sprt").display().to_string()
    }
}

fn desk_training(run: &Trained) -> Outcome {
    let start = Instant::now();
    let (o, _) = spartan(&["synth-data", "--out", &run.data(), "--count", "512"]);
    ok_stdout(&o)?;
    let metrics = run.dir.path().join("metrics.csv");
    let (o, _) = spartan(&[
        "train",
        "--config",
        "spartan-tiny",
        "--data",
        &run.data(),
        "--epochs",
        "5",
        "--out",
        &run.checkpoint(),
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    let out = ok_stdout(&o)?;
    let elapsed = start.elapsed();
    let mut epochs = Vec::new();
    for line in out.lines().filter(|l| l.contains(": train loss=")) {
        let field = |key: &str| -> Result<f64, String> {
            line.split(key)
                .nth(1)
                .and_then(|s| s.split_whitespace().next())
                .and_then(|s| s.parse().ok())
                .ok_or(format!("bad line `{line}`"))
        };
        epochs.push((field("loss=")?, field("top1=")?));
    }
    check(epochs.len() == 5, format!("{} epochs logged", epochs.len()))?;
    check(epochs.iter().all(|(l, _)| l.is_finite()), "non-finite loss".into())?;
    check(epochs[0].0 > epochs[1].0 && epochs[1].0 > epochs[2].0, format!("losses {epochs:?}"))?;
    check(epochs[4].1 >= 0.95, format!("final top1 {}", epochs[4].1))?;
    check(elapsed < Duration::from_secs(600), format!("took {elapsed:?}"))?;
    let losses: Vec<String> = epochs.iter().map(|(l, _)| format!("{l:.4}")).collect();
    Ok(format!("losses {}, final top1 {:.3}, {:.1}s", losses.join(" > "), epochs[4].1, elapsed.as_secs_f64()))
}

fn persistence(run: &Trained) -> Outcome {
    let cfg = ModelConfig::spartan_tiny();
    let err = |e: spartan::Error| e.to_string();
    let ds = Dataset::load(Path::new(&run.data())).map_err(err)?;
    let first = Path::new(&run.checkpoint()).to_path_buf();
    let second = run.dir.path().join("resaved.sprt");
    let model = Model::<f32>::load(&cfg, &first).map_err(err)?;
    let before = evaluate(&model, &ds, 64).map_err(err)?;
    model.save(&second).map_err(err)?;
    let bytes = (std::fs::read(&first).map_err(|e| e.to_string())?, std::fs::read(&second).map_err(|e| e.to_string())?);
    check(bytes.0 == bytes.1, "re-saved checkpoint differs".into())?;
    let reloaded = Model::<f32>::load(&cfg, &second).map_err(err)?;
    let after = evaluate(&reloaded, &ds, 64).map_err(err)?;
    let diff = (before.loss - after.loss).abs().max((before.top1 - after.top1).abs());
    check(diff <= 1e-6, format!("eval moved by {diff:e}"))?;

    let eval = |path: &str| {
        let (o, _) = spartan(&["eval", "--config", "spartan-tiny", "--checkpoint", path, "--data", &run.data()]);
        ok_stdout(&o)
    };
    let cli = (eval(&run.checkpoint())?, eval(second.to_str().unwrap())?);
    check(cli.0 == cli.1, format!("CLI eval `{}` vs `{}`", cli.0.trim(), cli.1.trim()))?;
    Ok(format!(
        "{} bytes identical, eval loss {:.6} top1 {:.4} before and after",
        bytes.0.len(),
        after.loss,
        after.top1
    ))
}

fn main() -> ExitCode {
    let run = Trained { dir: tempfile::tempdir().expect("temp dir") };
    let criteria: Vec<Criterion> = vec![
        ("parameter counts", Box::new(param_counts)),
        ("FLOPs", Box::new(flops)),
        ("kernel ablation", Box::new(kernel_ablation)),
        ("conv-type ablation", Box::new(conv_type_ablation)),
        ("gradient verification", Box::new(gradcheck)),
        ("oracle equivalence", Box::new(conv_oracle)),
        ("identity at zero", Box::new(identity_at_zero)),
        ("wave algebra", Box::new(wave_algebra)),
        ("desk-scale learning", Box::new(|| desk_training(&run))),
        ("persistence", Box::new(|| persistence(&run))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
