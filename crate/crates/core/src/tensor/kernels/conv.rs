//! 2-D cross-correlation: im2col + GEMM for grouped/full convolutions and a
//! direct loop for depthwise-style groups with one input channel.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Element;

/// Stride / zero-padding / dilation / groups of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }
}

impl ConvSpec {
    /// Stride-1 convolution that keeps the spatial size for kernel `k`.
    pub fn same(k: usize, dilation: usize, groups: usize) -> Self {
        Self { stride: 1, padding: dilation * (k - 1) / 2, dilation, groups }
    }

    pub fn output_len(&self, input: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Fully resolved sizes of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub oh: usize,
    pub ow: usize,
    pub spec: ConvSpec,
}

impl ConvGeometry {
    pub fn new(input: &[usize], weight: &[usize], spec: ConvSpec) -> Result<Self> {
        let op = "conv2d";
        let [n, cin, h, w] = *input else {
            return Err(Error::shape(op, format!("input must be NCHW, got {input:?}")));
        };
        let [cout, cin_g, kh, kw] = *weight else {
            return Err(Error::shape(op, format!("weight must be [Cout, Cin/groups, K, K], got {weight:?}")));
        };
        if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
            return Err(Error::Config(format!("conv2d: stride, dilation and groups must be >= 1, got {spec:?}")));
        }
        if cin % spec.groups != 0 || cout % spec.groups != 0 {
            return Err(Error::Config(format!("conv2d: groups={} must divide Cin={cin} and Cout={cout}", spec.groups)));
        }
        if cin / spec.groups != cin_g {
            return Err(Error::shape(
                op,
                format!("weight expects {cin_g} input channels per group, input gives {}", cin / spec.groups),
            ));
        }
        if kh != kw || kh == 0 {
            return Err(Error::shape(op, format!("kernel must be square and non-empty, got {kh}x{kw}")));
        }
        let (Some(oh), Some(ow)) = (spec.output_len(h, kh), spec.output_len(w, kw)) else {
            return Err(Error::shape(op, format!("kernel span exceeds padded input {h}x{w}")));
        };
        Ok(Self { n, cin, h, w, cout, k: kh, oh, ow, spec })
    }

    pub fn cin_g(&self) -> usize {
        self.cin / self.spec.groups
    }

    pub fn cout_g(&self) -> usize {
        self.cout / self.spec.groups
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.oh, self.ow]
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.spec.stride == 1 && self.spec.padding == 0
    }

    fn col_rows(&self) -> usize {
        self.cin_g() * self.k * self.k
    }

    /// Input coordinate for output `o` and tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, len: usize) -> Option<usize> {
        let pos = (o * self.spec.stride + t * self.spec.dilation) as isize - self.spec.padding as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    /// Multiply-accumulates performed by one forward call.
    pub fn macs(&self) -> u64 {
        (self.n * self.cout * self.cin_g() * self.k * self.k * self.oh * self.ow) as u64
    }
}

fn im2col<E: Element>(geo: &ConvGeometry, x: &[E], col: &mut [E]) {
    let (k, ohw) = (geo.k, geo.oh * geo.ow);
    for c in 0..geo.cin_g() {
        let plane = &x[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * ohw..][..ohw];
                for oy in 0..geo.oh {
                    let iy = geo.src(oy, ky, geo.h);
                    for ox in 0..geo.ow {
                        row[oy * geo.ow + ox] = match (iy, geo.src(ox, kx, geo.w)) {
                            (Some(iy), Some(ix)) => plane[iy * geo.w + ix],
                            _ => E::zero(),
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<E: Element>(geo: &ConvGeometry, col: &[E], dx: &mut [E]) {
    let (k, ohw) = (geo.k, geo.oh * geo.ow);
    for c in 0..geo.cin_g() {
        let plane = &mut dx[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * ohw..][..ohw];
                for oy in 0..geo.oh {
                    let Some(iy) = geo.src(oy, ky, geo.h) else { continue };
                    for ox in 0..geo.ow {
                        if let Some(ix) = geo.src(ox, kx, geo.w) {
                            plane[iy * geo.w + ix] = plane[iy * geo.w + ix] + row[oy * geo.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Slice of the input belonging to batch item `n`, group `g`.
fn input_group<'a, E>(geo: &ConvGeometry, x: &'a [E], n: usize, g: usize) -> &'a [E] {
    let plane = geo.h * geo.w;
    let start = (n * geo.cin + g * geo.cin_g()) * plane;
    &x[start..start + geo.cin_g() * plane]
}

fn weight_group<'a, E>(geo: &ConvGeometry, w: &'a [E], g: usize) -> &'a [E] {
    let len = geo.cout_g() * geo.col_rows();
    &w[g * len..(g + 1) * len]
}

pub fn conv2d_forward<E: Element>(geo: &ConvGeometry, x: &[E], w: &[E], bias: Option<&[E]>) -> Vec<E> {
    let groups = geo.spec.groups;
    let (cout_g, ohw) = (geo.cout_g(), geo.oh * geo.ow);
    let mut out = vec![E::zero(); geo.n * geo.cout * ohw];
    par::for_each_chunk(&mut out, cout_g * ohw, |i, chunk| {
        let (n, g) = (i / groups, i % groups);
        let xg = input_group(geo, x, n, g);
        let wg = weight_group(geo, w, g);
        if geo.cin_g() == 1 {
            direct_forward(geo, xg, wg, chunk);
        } else if geo.is_pointwise() {
            E::gemm(cout_g, geo.cin_g(), ohw, E::one(), wg, false, xg, false, E::zero(), chunk);
        } else {
            let mut col = vec![E::zero(); geo.col_rows() * ohw];
            im2col(geo, xg, &mut col);
            E::gemm(cout_g, geo.col_rows(), ohw, E::one(), wg, false, &col, false, E::zero(), chunk);
        }
        if let Some(b) = bias {
            for (oc, plane) in chunk.chunks_mut(ohw).enumerate() {
                let bv = b[g * cout_g + oc];
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    });
    out
}

// One input channel per group: every output channel of the group reads the
// same plane.
fn direct_forward<E: Element>(geo: &ConvGeometry, plane: &[E], wg: &[E], out: &mut [E]) {
    let (k, ohw) = (geo.k, geo.oh * geo.ow);
    for (oc, dst) in out.chunks_mut(ohw).enumerate() {
        let taps = &wg[oc * k * k..(oc + 1) * k * k];
        for oy in 0..geo.oh {
            for ox in 0..geo.ow {
                let mut acc = E::zero();
                for ky in 0..k {
                    let Some(iy) = geo.src(oy, ky, geo.h) else { continue };
                    for kx in 0..k {
                        if let Some(ix) = geo.src(ox, kx, geo.w) {
                            acc = acc + taps[ky * k + kx] * plane[iy * geo.w + ix];
                        }
                    }
                }
                dst[oy * geo.ow + ox] = acc;
            }
        }
    }
}

/// Gradient w.r.t. the input.
pub fn conv2d_backward_input<E: Element>(geo: &ConvGeometry, dy: &[E], w: &[E]) -> Vec<E> {
    let groups = geo.spec.groups;
    let (cout_g, ohw, plane) = (geo.cout_g(), geo.oh * geo.ow, geo.h * geo.w);
    let mut dx = vec![E::zero(); geo.n * geo.cin * plane];
    par::for_each_chunk(&mut dx, geo.cin_g() * plane, |i, chunk| {
        let (n, g) = (i / groups, i % groups);
        let start = (n * geo.cout + g * cout_g) * ohw;
        let dyg = &dy[start..start + cout_g * ohw];
        let wg = weight_group(geo, w, g);
        if geo.cin_g() == 1 {
            let k = geo.k;
            for (oc, grad) in dyg.chunks(ohw).enumerate() {
                let taps = &wg[oc * k * k..(oc + 1) * k * k];
                for oy in 0..geo.oh {
                    for ox in 0..geo.ow {
                        let gv = grad[oy * geo.ow + ox];
                        for ky in 0..k {
                            let Some(iy) = geo.src(oy, ky, geo.h) else { continue };
                            for kx in 0..k {
                                if let Some(ix) = geo.src(ox, kx, geo.w) {
                                    let d = &mut chunk[iy * geo.w + ix];
                                    *d = *d + taps[ky * k + kx] * gv;
                                }
                            }
                        }
                    }
                }
            }
        } else if geo.is_pointwise() {
            E::gemm(geo.cin_g(), cout_g, ohw, E::one(), wg, true, dyg, false, E::zero(), chunk);
        } else {
            let mut col = vec![E::zero(); geo.col_rows() * ohw];
            E::gemm(geo.col_rows(), cout_g, ohw, E::one(), wg, true, dyg, false, E::zero(), &mut col);
            col2im_add(geo, &col, chunk);
        }
    });
    dx
}

/// Gradients w.r.t. weight and (summed) bias.
///
/// Per-sample partials are computed independently and summed in batch order,
/// so the result is identical for any worker count.
pub fn conv2d_backward_params<E: Element>(geo: &ConvGeometry, x: &[E], dy: &[E]) -> (Vec<E>, Vec<E>) {
    let groups = geo.spec.groups;
    let (cout_g, ohw, k) = (geo.cout_g(), geo.oh * geo.ow, geo.k);
    let wlen_g = cout_g * geo.col_rows();
    let partials: Vec<Vec<E>> = par::map_range(geo.n * groups, |i| {
        let (n, g) = (i / groups, i % groups);
        let xg = input_group(geo, x, n, g);
        let start = (n * geo.cout + g * cout_g) * ohw;
        let dyg = &dy[start..start + cout_g * ohw];
        let mut dw = vec![E::zero(); wlen_g];
        if geo.cin_g() == 1 {
            for (oc, grad) in dyg.chunks(ohw).enumerate() {
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = E::zero();
                        for oy in 0..geo.oh {
                            let Some(iy) = geo.src(oy, ky, geo.h) else { continue };
                            for ox in 0..geo.ow {
                                if let Some(ix) = geo.src(ox, kx, geo.w) {
                                    acc = acc + grad[oy * geo.ow + ox] * xg[iy * geo.w + ix];
                                }
                            }
                        }
                        dw[(oc * k + ky) * k + kx] = acc;
                    }
                }
            }
        } else if geo.is_pointwise() {
            E::gemm(cout_g, ohw, geo.cin_g(), E::one(), dyg, false, xg, true, E::zero(), &mut dw);
        } else {
            let mut col = vec![E::zero(); geo.col_rows() * ohw];
            im2col(geo, xg, &mut col);
            E::gemm(cout_g, ohw, geo.col_rows(), E::one(), dyg, false, &col, true, E::zero(), &mut dw);
        }
        dw
    });
    let mut dw = vec![E::zero(); geo.cout * geo.col_rows()];
    for (i, part) in partials.iter().enumerate() {
        let g = i % groups;
        for (d, &p) in dw[g * wlen_g..(g + 1) * wlen_g].iter_mut().zip(part) {
            *d = *d + p;
        }
    }
    let mut db = vec![E::zero(); geo.cout];
    for n in 0..geo.n {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = (n * geo.cout + c) * ohw;
            *acc = *acc + dy[start..start + ohw].iter().copied().sum::<E>();
        }
    }
    (dw, db)
}
