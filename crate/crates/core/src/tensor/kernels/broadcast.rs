//! Singleton-expansion broadcasting for binary elementwise ops (rank <= 4).

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Element;

const MAX_RANK: usize = 4;

/// Output shape of broadcasting `a` against `b`; shorter shapes are padded
/// with leading ones.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() > MAX_RANK || b.len() > MAX_RANK {
        return Err(Error::shape("broadcast", format!("rank > {MAX_RANK}: {a:?} vs {b:?}")));
    }
    let rank = a.len().max(b.len());
    let (pa, pb) = (pad(a, rank), pad(b, rank));
    pa.iter()
        .zip(&pb)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, y) => Ok(y),
            (x, 1) => Ok(x),
            _ => Err(Error::shape("broadcast", format!("{a:?} and {b:?} are not broadcastable"))),
        })
        .collect()
}

fn pad(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut out = vec![1; rank - shape.len()];
    out.extend_from_slice(shape);
    out
}

fn pad4(shape: &[usize]) -> [usize; 4] {
    let p = pad(shape, MAX_RANK);
    [p[0], p[1], p[2], p[3]]
}

/// Strides of `shape` read through the broadcast `out` shape (0 on expanded dims).
fn read_strides(shape: &[usize], out: &[usize; 4]) -> [usize; 4] {
    let s = pad4(shape);
    let mut strides = [0; 4];
    let mut acc = 1;
    for d in (0..4).rev() {
        strides[d] = if s[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= s[d];
    }
    strides
}

pub fn broadcast_binary<E: Element>(
    a: &[E],
    a_shape: &[usize],
    b: &[E],
    b_shape: &[usize],
    f: impl Fn(E, E) -> E + Sync + Send,
) -> Result<(Vec<usize>, Vec<E>)> {
    let shape = broadcast_shape(a_shape, b_shape)?;
    if a_shape == b_shape {
        let data = a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        return Ok((shape, data));
    }
    let out4 = pad4(&shape);
    let (sa, sb) = (read_strides(a_shape, &out4), read_strides(b_shape, &out4));
    let inner = out4[1] * out4[2] * out4[3];
    let mut out = vec![E::zero(); out4[0] * inner];
    par::for_each_chunk(&mut out, inner, |i0, chunk| {
        let mut k = 0;
        for i1 in 0..out4[1] {
            for i2 in 0..out4[2] {
                let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..out4[3] {
                    chunk[k] = f(a[ba + i3 * sa[3]], b[bb + i3 * sb[3]]);
                    k += 1;
                }
            }
        }
    });
    Ok((shape, out))
}

/// Sums a gradient of broadcast shape `out` back down to `target`.
pub fn reduce_to_shape<E: Element>(grad: &[E], out: &[usize], target: &[usize]) -> Vec<E> {
    if out == target {
        return grad.to_vec();
    }
    let out4 = pad4(out);
    let st = read_strides(target, &out4);
    let mut acc = vec![E::zero(); target.iter().product()];
    let mut k = 0;
    for i0 in 0..out4[0] {
        for i1 in 0..out4[1] {
            for i2 in 0..out4[2] {
                let base = i0 * st[0] + i1 * st[1] + i2 * st[2];
                for i3 in 0..out4[3] {
                    let t = base + i3 * st[3];
                    acc[t] = acc[t] + grad[k];
                    k += 1;
                }
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_law() {
        assert_eq!(broadcast_shape(&[2, 1, 4, 4], &[2, 3, 4, 4]).unwrap(), vec![2, 3, 4, 4]);
        assert_eq!(broadcast_shape(&[1, 3, 1, 1], &[2, 3, 5, 5]).unwrap(), vec![2, 3, 5, 5]);
        assert_eq!(broadcast_shape(&[3, 1], &[1, 4]).unwrap(), vec![3, 4]);
        assert_eq!(broadcast_shape(&[4], &[2, 4]).unwrap(), vec![2, 4]);
        assert!(broadcast_shape(&[2, 3], &[3, 3]).is_err());
    }

    #[test]
    fn channel_bias_broadcast_and_reduce() {
        let a: Vec<f64> = (0..12).map(f64::from).collect();
        let (shape, out) =
            broadcast_binary(&a, &[1, 3, 2, 2], &[10.0, 20.0, 30.0], &[1, 3, 1, 1], |x, y| x + y).unwrap();
        assert_eq!(shape, vec![1, 3, 2, 2]);
        assert_eq!(out[0], 10.0);
        assert_eq!(out[11], 41.0);
        let red = reduce_to_shape(&[1.0f64; 12], &[1, 3, 2, 2], &[1, 3, 1, 1]);
        assert_eq!(red, vec![4.0; 3]);
    }
}
