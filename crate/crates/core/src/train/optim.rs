use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.03 }
    }
}

/// Adam with decoupled weight decay. Moments are keyed by parameter name.
#[derive(Debug, Clone)]
pub struct AdamW<E: Element> {
    pub config: AdamWConfig,
    step: u64,
    moments: HashMap<String, (Vec<E>, Vec<E>)>,
}

impl<E: Element> AdamW<E> {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, moments: HashMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every learnable parameter that has a gradient:
    /// `p -= lr·wd·p`, then the bias-corrected Adam step.
    pub fn step<M: Module<E> + ?Sized>(&mut self, model: &mut M, lr: f64) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (E::from_f64(c.beta1), E::from_f64(c.beta2));
        let (lr_e, eps) = (E::from_f64(lr), E::from_f64(c.eps));
        let decay = E::one() - E::from_f64(lr * c.weight_decay);
        let (bc1, bc2) = (E::from_f64(bc1), E::from_f64(bc2));
        let mut result = Ok(());
        model.visit_mut(&mut |p| {
            if result.is_err() || !p.is_learnable() {
                return;
            }
            let Some(g) = &p.grad else { return };
            if g.shape() != p.value.shape() {
                result = Err(Error::shape(
                    "adamw",
                    format!("{}: grad {:?} vs param {:?}", p.name, g.shape(), p.value.shape()),
                ));
                return;
            }
            let n = p.value.numel();
            let (m, v) = self.moments.entry(p.name.clone()).or_insert_with(|| (vec![E::zero(); n], vec![E::zero(); n]));
            if m.len() != n {
                result = Err(Error::shape("adamw", format!("{}: moment size {} vs param {n}", p.name, m.len())));
                return;
            }
            let mut w = p.value.to_vec();
            for i in 0..n {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (E::one() - b1) * gi;
                v[i] = b2 * v[i] + (E::one() - b2) * gi * gi;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                w[i] = w[i] * decay - lr_e * update;
            }
            p.value = Tensor::from_parts(p.value.shape().to_vec(), w);
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv2d, Param};
    use crate::tensor::kernels::ConvSpec;
    use rand::SeedableRng;

    fn conv() -> Conv2d<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        Conv2d::new("c", 2, 2, 1, ConvSpec::default(), true, &mut rng).unwrap()
    }

    fn set_grads(m: &mut Conv2d<f64>, g: f64) {
        m.visit_mut(&mut |p: &mut Param<f64>| p.grad = Some(Tensor::full(p.value.shape().to_vec(), g)));
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut m = conv();
        let before = m.weight.value.clone();
        set_grads(&mut m, 0.0);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..5 {
            opt.step(&mut m, 0.1).unwrap();
        }
        assert_eq!(m.weight.value, before);
    }

    #[test]
    fn pure_decay_shrinks_geometrically() {
        let mut m = conv();
        let before = m.weight.value.clone();
        set_grads(&mut m, 0.0);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.5, ..Default::default() });
        for _ in 0..3 {
            opt.step(&mut m, 0.1).unwrap();
        }
        let expect = before.map(|w| w * 0.95f64.powi(3));
        assert!(m.weight.value.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn constant_grad_moves_by_lr() {
        let mut m = conv();
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let mut prev = m.weight.value.clone();
        for _ in 0..50 {
            set_grads(&mut m, 0.3);
            opt.step(&mut m, 1e-3).unwrap();
            let step = prev.zip_map(&m.weight.value, |a, b| a - b).unwrap();
            assert!(step.data().iter().all(|&d| (d - 1e-3).abs() < 1e-9), "{step:?}");
            prev = m.weight.value.clone();
        }
    }
}
