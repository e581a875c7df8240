//! Forward ops recorded on the tape and their backward rules.

use super::{Activation, BinaryKind, Node, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::kernels::{self, ConvGeometry, ConvSpec};
use crate::tensor::{Element, Tensor};

impl<E: Element> Tape<E> {
    /// Appends a non-leaf node. In debug builds, rejects a non-finite output
    /// produced from finite inputs.
    fn record(&self, value: Tensor<E>, op: Op<E>, inputs: &[usize]) -> Result<Var<'_, E>> {
        if cfg!(debug_assertions) && !value.is_finite() {
            let nodes = self.nodes.borrow();
            if inputs.iter().all(|&i| nodes[i].value.is_finite()) {
                return Err(Error::NonFinite(format!("output of {}", op.name())));
            }
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push(value, op, requires_grad))
    }

    /// Records `value = f(input)` with a caller-supplied backward rule
    /// `(grad_out, input_value) -> grad_in`.
    pub fn custom_unary<'t>(
        &'t self,
        input: Var<'t, E>,
        value: Tensor<E>,
        backward: impl Fn(&Tensor<E>, &Tensor<E>) -> Tensor<E> + 'static,
    ) -> Result<Var<'t, E>> {
        self.record(value, Op::Custom { input: input.id, backward: Box::new(backward) }, &[input.id])
    }
}

/// Batch statistics observed by a training-mode batch norm: per-channel
/// mean and unbiased variance.
#[derive(Debug, Clone)]
pub struct BatchStats<E: Element> {
    pub mean: Tensor<E>,
    pub var: Tensor<E>,
}

#[allow(clippy::should_implement_trait)]
impl<'t, E: Element> Var<'t, E> {
    fn binary(self, other: Var<'t, E>, kind: BinaryKind) -> Result<Var<'t, E>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let f = match kind {
            BinaryKind::Add => |x: E, y: E| x + y,
            BinaryKind::Sub => |x: E, y: E| x - y,
            BinaryKind::Mul => |x: E, y: E| x * y,
        };
        let (shape, data) = kernels::broadcast_binary(a.data(), a.shape(), b.data(), b.shape(), f)?;
        self.tape.record(
            Tensor::from_parts(shape, data),
            Op::Binary { kind, a: self.id, b: other.id },
            &[self.id, other.id],
        )
    }

    /// Elementwise sum with singleton broadcasting.
    pub fn add(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        self.binary(other, BinaryKind::Mul)
    }

    /// Cross-correlation of an NCHW input with `[Cout, Cin/groups, K, K]` weights.
    pub fn conv2d(self, weight: Var<'t, E>, bias: Option<Var<'t, E>>, spec: ConvSpec) -> Result<Var<'t, E>> {
        self.same_tape(&weight)?;
        let (x, w) = (self.value(), weight.value());
        let geo = ConvGeometry::new(x.shape(), w.shape(), spec)?;
        let b = match bias {
            Some(b) => {
                self.same_tape(&b)?;
                let bv = b.value();
                if bv.shape() != [geo.cout] {
                    return Err(Error::shape("conv2d", format!("bias must be [{}], got {:?}", geo.cout, bv.shape())));
                }
                Some(bv)
            }
            None => None,
        };
        let out = kernels::conv2d_forward(&geo, x.data(), w.data(), b.as_ref().map(|b| b.data()));
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        self.tape.record(
            Tensor::from_parts(geo.output_shape().to_vec(), out),
            Op::Conv { input: self.id, weight: weight.id, bias: bias.map(|b| b.id), geo },
            &inputs,
        )
    }

    /// Global average pool to `[N, C, 1, 1]`.
    pub fn gap(self) -> Result<Var<'t, E>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4("gap")?;
        let hw = h * w;
        if hw == 0 {
            return Err(Error::shape("gap", "empty spatial extent"));
        }
        let inv = E::one() / E::from_usize(hw);
        let data = x.data().chunks(hw).map(|p| p.iter().copied().sum::<E>() * inv).collect();
        self.tape.record(Tensor::from_parts(vec![n, c, 1, 1], data), Op::Gap { input: self.id }, &[self.id])
    }

    /// Per-channel batch normalization over `(N, H, W)`.
    ///
    /// With `batch_stats` the input is normalized with its own statistics,
    /// which are returned for the caller's running-average update; otherwise
    /// the supplied running mean/variance are used.
    pub fn batch_norm(
        self,
        gamma: Var<'t, E>,
        beta: Var<'t, E>,
        running_mean: &Tensor<E>,
        running_var: &Tensor<E>,
        eps: E,
        batch_stats: bool,
    ) -> Result<(Var<'t, E>, Option<BatchStats<E>>)> {
        let x = self.value();
        let (n, c, h, w) = x.dims4("batchnorm2d")?;
        check_affine("batchnorm2d", c, &gamma, &beta)?;
        let hw = h * w;
        let count = n * hw;
        let (mean, var, stats) = if batch_stats {
            if count < 2 {
                return Err(Error::DegenerateBatch { op: "batchnorm2d", count });
            }
            let moments: Vec<(E, E)> = par::map_range(c, |ch| {
                let it = || (0..n).flat_map(|i| x.data()[(i * c + ch) * hw..][..hw].iter().copied());
                let mean = it().sum::<E>() / E::from_usize(count);
                let ss = it().map(|v| (v - mean) * (v - mean)).sum::<E>();
                (mean, ss)
            });
            let mean: Vec<E> = moments.iter().map(|m| m.0).collect();
            let var: Vec<E> = moments.iter().map(|m| m.1 / E::from_usize(count)).collect();
            let unbiased = moments.iter().map(|m| m.1 / E::from_usize(count - 1)).collect();
            let stats = BatchStats {
                mean: Tensor::from_parts(vec![c], mean.clone()),
                var: Tensor::from_parts(vec![c], unbiased),
            };
            (mean, var, Some(stats))
        } else {
            if running_mean.shape() != [c] || running_var.shape() != [c] {
                return Err(Error::shape("batchnorm2d", format!("running stats must be [{c}]")));
            }
            (running_mean.to_vec(), running_var.to_vec(), None)
        };
        let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let (g, b) = (gamma.value(), beta.value());
        let mut xhat = vec![E::zero(); x.numel()];
        let mut out = vec![E::zero(); x.numel()];
        for (i, (plane, xh)) in x.data().chunks(hw).zip(xhat.chunks_mut(hw)).enumerate() {
            let ch = i % c;
            let (m, s, gc, bc) = (mean[ch], inv_std[ch], g.data()[ch], b.data()[ch]);
            for (j, &v) in plane.iter().enumerate() {
                xh[j] = (v - m) * s;
                out[i * hw + j] = gc * xh[j] + bc;
            }
        }
        let var_out = self.tape.record(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::BatchNorm { input: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std, batch_stats },
            &[self.id, gamma.id, beta.id],
        )?;
        Ok((var_out, stats))
    }

    /// Normalizes the channel vector at every `(n, h, w)` position.
    pub fn layer_norm_channels(self, gamma: Var<'t, E>, beta: Var<'t, E>, eps: E) -> Result<Var<'t, E>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4("layernorm_channels")?;
        if c < 2 {
            return Err(Error::shape("layernorm_channels", format!("need at least 2 channels, got {c}")));
        }
        check_affine("layernorm_channels", c, &gamma, &beta)?;
        let hw = h * w;
        let (g, b) = (gamma.value(), beta.value());
        let inv_c = E::one() / E::from_usize(c);
        let mut xhat = vec![E::zero(); x.numel()];
        let mut inv_std = vec![E::zero(); n * hw];
        for i in 0..n {
            let item = &x.data()[i * c * hw..(i + 1) * c * hw];
            let mut mean = vec![E::zero(); hw];
            for plane in item.chunks(hw) {
                mean.iter_mut().zip(plane).for_each(|(m, &v)| *m = *m + v);
            }
            mean.iter_mut().for_each(|m| *m = *m * inv_c);
            let mut var = vec![E::zero(); hw];
            for plane in item.chunks(hw) {
                for p in 0..hw {
                    let d = plane[p] - mean[p];
                    var[p] = var[p] + d * d;
                }
            }
            let s = &mut inv_std[i * hw..(i + 1) * hw];
            for p in 0..hw {
                s[p] = E::one() / (var[p] * inv_c + eps).sqrt();
            }
            let xh = &mut xhat[i * c * hw..(i + 1) * c * hw];
            for (plane, dst) in item.chunks(hw).zip(xh.chunks_mut(hw)) {
                for p in 0..hw {
                    dst[p] = (plane[p] - mean[p]) * s[p];
                }
            }
        }
        let out = xhat
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let ch = (k / hw) % c;
                g.data()[ch] * v + b.data()[ch]
            })
            .collect();
        self.tape.record(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::LayerNorm { input: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std },
            &[self.id, gamma.id, beta.id],
        )
    }

    pub fn activation(self, kind: Activation) -> Result<Var<'t, E>> {
        let value = self.value().map(|v| kind.apply(v));
        self.tape.record(value, Op::Activation { input: self.id, kind }, &[self.id])
    }

    /// `x · Wᵀ + b` for `x: [N, F]`, `W: [F_out, F]`.
    pub fn linear(self, weight: Var<'t, E>, bias: Option<Var<'t, E>>) -> Result<Var<'t, E>> {
        self.same_tape(&weight)?;
        let (x, w) = (self.value(), weight.value());
        let (n, f) = x.dims2("linear")?;
        let (fo, fi) = w.dims2("linear")?;
        if fi != f {
            return Err(Error::shape("linear", format!("input has {f} features, weight expects {fi}")));
        }
        let mut out = vec![E::zero(); n * fo];
        E::gemm(n, f, fo, E::one(), x.data(), false, w.data(), true, E::zero(), &mut out);
        let mut inputs = vec![self.id, weight.id];
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [fo] {
                return Err(Error::shape("linear", format!("bias must be [{fo}], got {:?}", bv.shape())));
            }
            for row in out.chunks_mut(fo) {
                row.iter_mut().zip(bv.data()).for_each(|(o, &bb)| *o = *o + bb);
            }
            inputs.push(b.id);
        }
        self.tape.record(
            Tensor::from_parts(vec![n, fo], out),
            Op::Linear { input: self.id, weight: weight.id, bias: bias.map(|b| b.id) },
            &inputs,
        )
    }

    /// Stacks `other`'s channels after `self`'s.
    pub fn concat_channels(self, other: Var<'t, E>) -> Result<Var<'t, E>> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (n, ca, h, w) = a.dims4("channel_concat")?;
        let (nb, cb, hb, wb) = b.dims4("channel_concat")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape("channel_concat", format!("N/H/W differ: {:?} vs {:?}", a.shape(), b.shape())));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for i in 0..n {
            out.extend_from_slice(&a.data()[i * sa..(i + 1) * sa]);
            out.extend_from_slice(&b.data()[i * sb..(i + 1) * sb]);
        }
        self.tape.record(
            Tensor::from_parts(vec![n, ca + cb, h, w], out),
            Op::Concat { a: self.id, b: other.id },
            &[self.id, other.id],
        )
    }

    /// Channels `start..start + len`.
    pub fn narrow_channels(self, start: usize, len: usize) -> Result<Var<'t, E>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4("channel_narrow")?;
        if start + len > c {
            return Err(Error::shape("channel_narrow", format!("range {start}..{} exceeds {c} channels", start + len)));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * len * hw);
        for i in 0..n {
            out.extend_from_slice(&x.data()[(i * c + start) * hw..(i * c + start + len) * hw]);
        }
        self.tape.record(Tensor::from_parts(vec![n, len, h, w], out), Op::Narrow { input: self.id, start }, &[self.id])
    }

    /// Splits into the first `at` channels and the rest.
    pub fn split_channels(self, at: usize) -> Result<(Var<'t, E>, Var<'t, E>)> {
        let c = self.shape().get(1).copied().unwrap_or(0);
        Ok((self.narrow_channels(0, at)?, self.narrow_channels(at, c.saturating_sub(at))?))
    }

    /// Positionwise maximum over channels, `[N, 1, H, W]`. The gradient goes
    /// to the first maximal channel.
    pub fn channel_max(self) -> Result<Var<'t, E>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4("channel_max")?;
        if c == 0 {
            return Err(Error::shape("channel_max", "no channels"));
        }
        let hw = h * w;
        let mut out = vec![E::zero(); n * hw];
        let mut argmax = vec![0u32; n * hw];
        for i in 0..n {
            let item = &x.data()[i * c * hw..(i + 1) * c * hw];
            let (best, idx) = (&mut out[i * hw..(i + 1) * hw], &mut argmax[i * hw..(i + 1) * hw]);
            best.copy_from_slice(&item[..hw]);
            for ch in 1..c {
                for p in 0..hw {
                    let v = item[ch * hw + p];
                    if v > best[p] {
                        best[p] = v;
                        idx[p] = ch as u32;
                    }
                }
            }
        }
        self.tape.record(
            Tensor::from_parts(vec![n, 1, h, w], out),
            Op::ChannelMax { input: self.id, argmax },
            &[self.id],
        )
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, E>> {
        let value = self.value().reshape(shape)?;
        self.tape.record(value, Op::Reshape { input: self.id }, &[self.id])
    }

    /// `[N, C, 1, 1]` (or any `[N, ...]`) to `[N, rest]`.
    pub fn flatten(self) -> Result<Var<'t, E>> {
        let shape = self.shape();
        let n = *shape.first().ok_or_else(|| Error::shape("flatten", "scalar input"))?;
        let rest = shape[1..].iter().product::<usize>();
        self.reshape(vec![n, rest])
    }

    pub fn sum(self) -> Result<Var<'t, E>> {
        let value = Tensor::scalar(self.value().sum());
        self.tape.record(value, Op::Sum { input: self.id }, &[self.id])
    }

    pub fn mean(self) -> Result<Var<'t, E>> {
        let x = self.value();
        if x.numel() == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let value = Tensor::scalar(x.sum() / E::from_usize(x.numel()));
        self.tape.record(value, Op::Mean { input: self.id }, &[self.id])
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t, E>> {
        let x = self.value();
        let (n, k) = x.dims2("cross_entropy")?;
        if labels.len() != n {
            return Err(Error::shape("cross_entropy", format!("{n} rows but {} labels", labels.len())));
        }
        if k < 2 {
            return Err(Error::shape("cross_entropy", "need at least 2 classes"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![E::zero(); n * k];
        let mut total = E::zero();
        for (i, row) in x.data().chunks(k).enumerate() {
            let m = row.iter().copied().fold(E::neg_infinity(), E::max);
            let p = &mut probs[i * k..(i + 1) * k];
            let mut z = E::zero();
            for (pj, &v) in p.iter_mut().zip(row) {
                *pj = (v - m).exp();
                z = z + *pj;
            }
            p.iter_mut().for_each(|v| *v = *v / z);
            total = total + (m + z.ln() - row[labels[i]]);
        }
        let value = Tensor::scalar(total / E::from_usize(n));
        self.tape.record(value, Op::CrossEntropy { logits: self.id, probs, labels: labels.to_vec() }, &[self.id])
    }
}

fn check_affine<E: Element>(op: &'static str, c: usize, gamma: &Var<'_, E>, beta: &Var<'_, E>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(op, format!("gamma/beta must be [{c}], got {:?}/{:?}", gamma.shape(), beta.shape())));
    }
    Ok(())
}

/// Input gradients of one node.
pub(super) fn backward_rule<E: Element>(
    nodes: &[Node<E>],
    node: &Node<E>,
    g: &Tensor<E>,
) -> Result<Vec<(usize, Tensor<E>)>> {
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    let out_shape = node.value.shape();
    let mut grads = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, a, b } => {
            let (av, bv) = (val(*a), val(*b));
            if wants(*a) {
                let full = match kind {
                    BinaryKind::Mul => {
                        kernels::broadcast_binary(g.data(), out_shape, bv.data(), bv.shape(), |x, y| x * y)?.1
                    }
                    _ => g.to_vec(),
                };
                grads.push((
                    *a,
                    Tensor::from_parts(av.shape().to_vec(), kernels::reduce_to_shape(&full, out_shape, av.shape())),
                ));
            }
            if wants(*b) {
                let full = match kind {
                    BinaryKind::Add => g.to_vec(),
                    BinaryKind::Sub => g.data().iter().map(|&v| -v).collect(),
                    BinaryKind::Mul => {
                        kernels::broadcast_binary(g.data(), out_shape, av.data(), av.shape(), |x, y| x * y)?.1
                    }
                };
                grads.push((
                    *b,
                    Tensor::from_parts(bv.shape().to_vec(), kernels::reduce_to_shape(&full, out_shape, bv.shape())),
                ));
            }
        }
        Op::Conv { input, weight, bias, geo } => {
            if wants(*input) {
                let dx = kernels::conv2d_backward_input(geo, g.data(), val(*weight).data());
                grads.push((*input, Tensor::from_parts(val(*input).shape().to_vec(), dx)));
            }
            let bias_wants = bias.is_some_and(wants);
            if wants(*weight) || bias_wants {
                let (dw, db) = kernels::conv2d_backward_params(geo, val(*input).data(), g.data());
                if wants(*weight) {
                    grads.push((*weight, Tensor::from_parts(val(*weight).shape().to_vec(), dw)));
                }
                if let (Some(b), true) = (bias, bias_wants) {
                    grads.push((*b, Tensor::from_parts(vec![geo.cout], db)));
                }
            }
        }
        Op::Gap { input } => {
            let x = val(*input);
            let hw = x.shape()[2] * x.shape()[3];
            let inv = E::one() / E::from_usize(hw);
            let dx = g.data().iter().flat_map(|&v| std::iter::repeat_n(v * inv, hw)).collect();
            grads.push((*input, Tensor::from_parts(x.shape().to_vec(), dx)));
        }
        Op::BatchNorm { input, gamma, beta, xhat, inv_std, batch_stats } => {
            let x = val(*input);
            let (n, c, h, w) = x.dims4("batchnorm2d")?;
            let hw = h * w;
            let gam = val(*gamma).data();
            let mut dgamma = vec![E::zero(); c];
            let mut dbeta = vec![E::zero(); c];
            for (i, (gp, xp)) in g.data().chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                let ch = i % c;
                for (&gv, &xv) in gp.iter().zip(xp) {
                    dgamma[ch] = dgamma[ch] + gv * xv;
                    dbeta[ch] = dbeta[ch] + gv;
                }
            }
            if wants(*input) {
                let m = E::from_usize(n * hw);
                let mut dx = vec![E::zero(); x.numel()];
                for (i, ((gp, xp), dp)) in g.data().chunks(hw).zip(xhat.chunks(hw)).zip(dx.chunks_mut(hw)).enumerate() {
                    let ch = i % c;
                    let scale = gam[ch] * inv_std[ch];
                    for ((d, &gv), &xv) in dp.iter_mut().zip(gp).zip(xp) {
                        *d = if *batch_stats {
                            // dbeta = sum(dy), dgamma = sum(dy * xhat)
                            scale * (gv - (dbeta[ch] + xv * dgamma[ch]) / m)
                        } else {
                            scale * gv
                        };
                    }
                }
                grads.push((*input, Tensor::from_parts(x.shape().to_vec(), dx)));
            }
            if wants(*gamma) {
                grads.push((*gamma, Tensor::from_parts(vec![c], dgamma)));
            }
            if wants(*beta) {
                grads.push((*beta, Tensor::from_parts(vec![c], dbeta)));
            }
        }
        Op::LayerNorm { input, gamma, beta, xhat, inv_std } => {
            let x = val(*input);
            let (n, c, h, w) = x.dims4("layernorm_channels")?;
            let hw = h * w;
            let gam = val(*gamma).data();
            let mut dgamma = vec![E::zero(); c];
            let mut dbeta = vec![E::zero(); c];
            let mut dx = vec![E::zero(); x.numel()];
            let inv_c = E::one() / E::from_usize(c);
            for i in 0..n {
                let base = i * c * hw;
                let mut s1 = vec![E::zero(); hw];
                let mut s2 = vec![E::zero(); hw];
                for ch in 0..c {
                    let off = base + ch * hw;
                    for p in 0..hw {
                        let (gv, xv) = (g.data()[off + p], xhat[off + p]);
                        dgamma[ch] = dgamma[ch] + gv * xv;
                        dbeta[ch] = dbeta[ch] + gv;
                        let dxh = gv * gam[ch];
                        s1[p] = s1[p] + dxh;
                        s2[p] = s2[p] + dxh * xv;
                    }
                }
                for (ch, &gc) in gam.iter().enumerate() {
                    let off = base + ch * hw;
                    for p in 0..hw {
                        let dxh = g.data()[off + p] * gc;
                        let s = inv_std[i * hw + p];
                        dx[off + p] = s * (dxh - (s1[p] + xhat[off + p] * s2[p]) * inv_c);
                    }
                }
            }
            if wants(*input) {
                grads.push((*input, Tensor::from_parts(x.shape().to_vec(), dx)));
            }
            if wants(*gamma) {
                grads.push((*gamma, Tensor::from_parts(vec![c], dgamma)));
            }
            if wants(*beta) {
                grads.push((*beta, Tensor::from_parts(vec![c], dbeta)));
            }
        }
        Op::Activation { input, kind } => {
            let x = val(*input);
            let dx = x.data().iter().zip(g.data()).map(|(&xv, &gv)| gv * kind.derivative(xv)).collect();
            grads.push((*input, Tensor::from_parts(x.shape().to_vec(), dx)));
        }
        Op::Linear { input, weight, bias } => {
            let (x, w) = (val(*input), val(*weight));
            let (n, f) = x.dims2("linear")?;
            let fo = w.shape()[0];
            if wants(*input) {
                let mut dx = vec![E::zero(); n * f];
                E::gemm(n, fo, f, E::one(), g.data(), false, w.data(), false, E::zero(), &mut dx);
                grads.push((*input, Tensor::from_parts(vec![n, f], dx)));
            }
            if wants(*weight) {
                let mut dw = vec![E::zero(); fo * f];
                E::gemm(fo, n, f, E::one(), g.data(), true, x.data(), false, E::zero(), &mut dw);
                grads.push((*weight, Tensor::from_parts(vec![fo, f], dw)));
            }
            if let Some(b) = bias.filter(|&b| wants(b)) {
                let mut db = vec![E::zero(); fo];
                for row in g.data().chunks(fo) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                }
                grads.push((b, Tensor::from_parts(vec![fo], db)));
            }
        }
        Op::Concat { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let n = av.shape()[0];
            let (sa, sb) = (av.numel() / n, bv.numel() / n);
            let (mut da, mut db) = (Vec::with_capacity(av.numel()), Vec::with_capacity(bv.numel()));
            for item in g.data().chunks(sa + sb) {
                da.extend_from_slice(&item[..sa]);
                db.extend_from_slice(&item[sa..]);
            }
            grads.push((*a, Tensor::from_parts(av.shape().to_vec(), da)));
            grads.push((*b, Tensor::from_parts(bv.shape().to_vec(), db)));
        }
        Op::Narrow { input, start } => {
            let x = val(*input);
            let (n, c, h, w) = x.dims4("channel_narrow")?;
            let (hw, len) = (h * w, out_shape[1]);
            let mut dx = vec![E::zero(); x.numel()];
            for i in 0..n {
                let dst = &mut dx[(i * c + start) * hw..(i * c + start + len) * hw];
                dst.copy_from_slice(&g.data()[i * len * hw..(i + 1) * len * hw]);
            }
            grads.push((*input, Tensor::from_parts(x.shape().to_vec(), dx)));
        }
        Op::ChannelMax { input, argmax } => {
            let x = val(*input);
            let (n, c, h, w) = x.dims4("channel_max")?;
            let hw = h * w;
            let mut dx = vec![E::zero(); x.numel()];
            for i in 0..n {
                for p in 0..hw {
                    let ch = argmax[i * hw + p] as usize;
                    dx[(i * c + ch) * hw + p] = g.data()[i * hw + p];
                }
            }
            grads.push((*input, Tensor::from_parts(x.shape().to_vec(), dx)));
        }
        Op::Reshape { input } => {
            grads.push((*input, g.reshape(val(*input).shape().to_vec())?));
        }
        Op::Sum { input } => {
            grads.push((*input, Tensor::full(val(*input).shape().to_vec(), g.item())));
        }
        Op::Mean { input } => {
            let x = val(*input);
            grads.push((*input, Tensor::full(x.shape().to_vec(), g.item() / E::from_usize(x.numel()))));
        }
        Op::CrossEntropy { logits, probs, labels } => {
            let x = val(*logits);
            let (n, k) = x.dims2("cross_entropy")?;
            let scale = g.item() / E::from_usize(n);
            let mut dx: Vec<E> = probs.iter().map(|&p| p * scale).collect();
            for (i, &l) in labels.iter().enumerate() {
                dx[i * k + l] = dx[i * k + l] - scale;
            }
            grads.push((*logits, Tensor::from_parts(vec![n, k], dx)));
        }
        Op::Custom { input, backward } => {
            let dx = backward(g, val(*input));
            if dx.shape() != val(*input).shape() {
                return Err(Error::Contract("custom backward returned wrong shape".into()));
            }
            grads.push((*input, dx));
        }
    }
    Ok(grads)
}
