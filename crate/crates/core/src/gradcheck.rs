//! Central finite-difference verification of autodiff gradients (f64 only).

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Mode, Module};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Finite-difference half step.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Denominator floor: errors are `|a - n| / max(|a|, |n|, floor)`, so
    /// gradients far below `floor` are judged on absolute error.
    pub floor: f64,
    /// Check at most this many evenly spaced coordinates per input.
    pub max_per_input: Option<usize>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, tol: 1e-4, floor: 1e-3, max_per_input: None }
    }
}

/// Worst coordinate found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{}]: analytic {:.6e} vs numeric {:.6e} (rel {:.3e})",
            self.input, self.index, self.analytic, self.numeric, self.rel_error
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub checked: usize,
    pub passed: bool,
}

fn sample_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(k) if k < n => (0..k).map(|i| i * n / k + (n / k) / 2).collect(),
        _ => (0..n).collect(),
    }
}

/// Checks `f`'s autodiff gradient against central differences for every
/// named input. `f` must return a one-element tensor and be deterministic.
pub fn gradcheck_named<F>(f: F, inputs: &[(String, Tensor<f64>)], opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|(_, t)| tape.leaf(t.clone(), true)).collect();
        let loss = f(&tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .zip(inputs)
            .map(|(v, (_, t))| v.grad().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect::<Vec<_>>()
    };
    let eval = |which: usize, index: usize, delta: f64| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(i, (_, t))| {
                if i == which {
                    let mut data = t.to_vec();
                    data[index] += delta;
                    tape.constant(Tensor::from_parts(t.shape().to_vec(), data))
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Ok(f(&tape, &vars)?.value().item())
    };

    let mut report = GradcheckReport { max_rel_error: 0.0, worst: None, checked: 0, passed: true };
    for (which, (name, t)) in inputs.iter().enumerate() {
        for index in sample_indices(t.numel(), opts.max_per_input) {
            let numeric = (eval(which, index, opts.eps)? - eval(which, index, -opts.eps)?) / (2.0 * opts.eps);
            let a = analytic[which].data()[index];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}[{index}]: analytic {a}, numeric {numeric}")));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(Mismatch { input: name.clone(), index, analytic: a, numeric, rel_error: rel });
            }
        }
    }
    report.passed = report.max_rel_error < opts.tol;
    Ok(report)
}

/// [`gradcheck_named`] with inputs named `input0`, `input1`, ...
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], opts: GradcheckOptions) -> Result<GradcheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let named: Vec<_> = inputs.iter().enumerate().map(|(i, t)| (format!("input{i}"), t.clone())).collect();
    gradcheck_named(f, &named, opts)
}

/// Redraws every learnable parameter of `m` from `N(0, std²)`, keeping
/// ReLU inputs away from their kink.
pub fn randomize_learnable<M: Module<f64> + ?Sized>(m: &mut M, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    m.visit_mut(&mut |p| {
        if p.is_learnable() {
            p.value = Tensor::from_fn(p.value.shape().to_vec(), |_| {
                std * Distribution::<f64>::sample(&StandardNormal, &mut rng)
            });
        }
    });
}

/// Checks a module's gradients with respect to its input and every learnable
/// parameter. The scalar under test is `sum(forward(x) ⊙ r)` for a fixed
/// random `r` drawn from `seed`.
pub fn gradcheck_module<M: Module<f64> + ?Sized>(
    module: &M,
    input: &Tensor<f64>,
    mode: Mode,
    seed: u64,
    opts: GradcheckOptions,
) -> Result<GradcheckReport> {
    let mut inputs = vec![("input".to_string(), input.clone())];
    module.visit(&mut |p| {
        if p.is_learnable() {
            inputs.push((p.name.clone(), p.value.clone()));
        }
    });
    let probe = {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, mode);
        module.forward(&ctx, tape.constant(input.clone()))?.value()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Tensor::from_fn(probe.shape().to_vec(), |_| StandardNormal.sample(&mut rng));
    let names: Vec<String> = inputs.iter().map(|(n, _)| n.clone()).collect();
    gradcheck_named(
        |tape, vars| {
            let ctx = Ctx::new(tape, mode);
            for (name, &v) in names.iter().zip(vars).skip(1) {
                ctx.bind(name, v);
            }
            module.forward(&ctx, vars[0])?.mul(tape.constant(weights.clone()))?.sum()
        },
        &inputs,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_spread_and_bounded() {
        assert_eq!(sample_indices(5, None), vec![0, 1, 2, 3, 4]);
        let s = sample_indices(1000, Some(10));
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|&i| i < 1000));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn square_passes() {
        let x = Tensor::new(vec![3], vec![0.5, -1.25, 2.0]).unwrap();
        let report = gradcheck(|_, v| v[0].mul(v[0])?.sum(), &[x], GradcheckOptions::default()).unwrap();
        assert!(report.passed, "{report:?}");
        assert_eq!(report.checked, 3);
    }
}
