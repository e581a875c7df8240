//! Named-tensor archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SPRT" | version u32 | entry count u32
//! per entry: name length u32 | utf-8 name | dtype u8 | rank u32 | extents u64 × rank
//! payloads in entry order, row-major, IEEE-754 / u32 little-endian
//! ```
//!
//! Model checkpoints store every parameter and batch-norm buffer under its
//! dotted name, in the model's visit order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::network::Model;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: &[u8; 4] = b"SPRT";
pub const VERSION: u32 = 1;

const TAG_F32: u8 = 0;
const TAG_F64: u8 = 1;
const TAG_U32: u8 = 2;

/// One archived tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum ArchiveTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U32 { shape: Vec<usize>, data: Vec<u32> },
}

impl ArchiveTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            ArchiveTensor::F32(t) => t.shape(),
            ArchiveTensor::F64(t) => t.shape(),
            ArchiveTensor::U32 { shape, .. } => shape,
        }
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            ArchiveTensor::F32(_) => "f32",
            ArchiveTensor::F64(_) => "f64",
            ArchiveTensor::U32 { .. } => "u32",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            ArchiveTensor::F32(_) => TAG_F32,
            ArchiveTensor::F64(_) => TAG_F64,
            ArchiveTensor::U32 { .. } => TAG_U32,
        }
    }

    pub fn from_tensor<E: Element>(t: &Tensor<E>) -> Self {
        match E::DTYPE {
            DType::F32 => ArchiveTensor::F32(t.cast()),
            DType::F64 => ArchiveTensor::F64(t.cast()),
        }
    }

    /// The floating-point payload as `E`, if the stored dtype is `E`'s.
    pub fn to_tensor<E: Element>(&self) -> Option<Tensor<E>> {
        match (self, E::DTYPE) {
            (ArchiveTensor::F32(t), DType::F32) => Some(t.cast()),
            (ArchiveTensor::F64(t), DType::F64) => Some(t.cast()),
            _ => None,
        }
    }

    /// Any floating-point payload converted to `E`.
    pub fn to_tensor_lossy<E: Element>(&self) -> Option<Tensor<E>> {
        match self {
            ArchiveTensor::F32(t) => Some(t.cast()),
            ArchiveTensor::F64(t) => Some(t.cast()),
            ArchiveTensor::U32 { .. } => None,
        }
    }

    /// Integer view: `u32` payloads as-is, floats that are whole numbers.
    pub fn to_indices(&self) -> Option<Vec<usize>> {
        let whole = |v: f64| (v >= 0.0 && v.fract() == 0.0).then_some(v as usize);
        match self {
            ArchiveTensor::U32 { data, .. } => Some(data.iter().map(|&v| v as usize).collect()),
            ArchiveTensor::F32(t) => t.data().iter().map(|&v| whole(v as f64)).collect(),
            ArchiveTensor::F64(t) => t.data().iter().map(|&v| whole(v)).collect(),
        }
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_bytes<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Serializes `entries` in order.
pub fn write_archive_to(w: &mut impl Write, entries: &[(String, ArchiveTensor)]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    write_u32(w, entries.len() as u32)?;
    for (name, t) in entries {
        write_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.tag()])?;
        write_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for (_, t) in entries {
        match t {
            ArchiveTensor::F32(t) => w.write_all(&le_bytes(t))?,
            ArchiveTensor::F64(t) => w.write_all(&le_bytes(t))?,
            ArchiveTensor::U32 { data, .. } => data.iter().try_for_each(|&v| write_u32(w, v))?,
        }
    }
    Ok(())
}

pub fn write_archive(path: &Path, entries: &[(String, ArchiveTensor)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_archive_to(&mut w, entries).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Parses an archive; `what` labels errors.
pub fn read_archive_from(r: &mut impl Read, what: &str) -> Result<Vec<(String, ArchiveTensor)>> {
    let bad = |msg: String| Error::Checkpoint(format!("{what}: {msg}"));
    let io = |e: std::io::Error| Error::Checkpoint(format!("{what}: truncated or unreadable ({e})"));
    if &read_bytes::<4>(r).map_err(io)? != MAGIC {
        return Err(bad("missing SPRT magic".into()));
    }
    let version = u32::from_le_bytes(read_bytes(r).map_err(io)?);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_bytes(r).map_err(io)?) as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u32::from_le_bytes(read_bytes(r).map_err(io)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|_| bad("entry name is not utf-8".into()))?;
        let [tag] = read_bytes::<1>(r).map_err(io)?;
        let rank = u32::from_le_bytes(read_bytes(r).map_err(io)?) as usize;
        let shape = (0..rank)
            .map(|_| read_bytes::<8>(r).map(|b| u64::from_le_bytes(b) as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(io)?;
        manifest.push((name, tag, shape));
    }
    let mut out = Vec::with_capacity(manifest.len());
    for (name, tag, shape) in manifest {
        let n: usize = shape.iter().product();
        let t = match tag {
            TAG_F32 => ArchiveTensor::F32(read_float(r, shape, n).map_err(io)?),
            TAG_F64 => ArchiveTensor::F64(read_float(r, shape, n).map_err(io)?),
            TAG_U32 => {
                let data = (0..n)
                    .map(|_| read_bytes::<4>(r).map(u32::from_le_bytes))
                    .collect::<std::io::Result<Vec<_>>>()
                    .map_err(io)?;
                ArchiveTensor::U32 { shape, data }
            }
            other => return Err(bad(format!("entry `{name}` has unknown dtype tag {other}"))),
        };
        out.push((name, t));
    }
    Ok(out)
}

fn le_bytes<E: Element>(t: &Tensor<E>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(t.numel() * E::DTYPE.size_of());
    t.data().iter().for_each(|&v| v.write_le(&mut buf));
    buf
}

fn read_float<E: Element>(r: &mut impl Read, shape: Vec<usize>, n: usize) -> std::io::Result<Tensor<E>> {
    let width = E::DTYPE.size_of();
    let mut buf = vec![0u8; n * width];
    r.read_exact(&mut buf)?;
    Ok(Tensor::from_parts(shape, buf.chunks_exact(width).map(E::read_le).collect()))
}

pub fn read_archive(path: &Path) -> Result<Vec<(String, ArchiveTensor)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_archive_from(&mut BufReader::new(file), &path.display().to_string())
}

impl<E: Element> Model<E> {
    pub fn to_archive(&self) -> Vec<(String, ArchiveTensor)> {
        self.params().into_iter().map(|p| (p.name, ArchiveTensor::from_tensor(&p.value))).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.all_finite() {
            return Err(Error::NonFinite("refusing to save a model with non-finite parameters".into()));
        }
        write_archive(path, &self.to_archive())
    }

    /// Replaces every parameter with the archived value. The archive must
    /// list exactly this model's tensors, in order, with matching dtype and
    /// shape; the first disagreement is reported by name.
    pub fn load_archive(&mut self, entries: Vec<(String, ArchiveTensor)>) -> Result<()> {
        let expected = self.params();
        for (i, p) in expected.iter().enumerate() {
            let Some((name, t)) = entries.get(i) else {
                return Err(Error::CheckpointMismatch { name: p.name.clone(), msg: "missing from checkpoint".into() });
            };
            if *name != p.name {
                return Err(Error::CheckpointMismatch {
                    name: p.name.clone(),
                    msg: format!("checkpoint has `{name}` in its place"),
                });
            }
            if t.shape() != p.value.shape() {
                return Err(Error::CheckpointMismatch {
                    name: p.name.clone(),
                    msg: format!("shape {:?} in checkpoint, {:?} in model", t.shape(), p.value.shape()),
                });
            }
            if t.to_tensor::<E>().is_none() {
                return Err(Error::CheckpointMismatch {
                    name: p.name.clone(),
                    msg: format!("dtype {} in checkpoint, {} in model", t.dtype_name(), E::DTYPE),
                });
            }
        }
        if let Some((name, _)) = entries.get(expected.len()) {
            return Err(Error::CheckpointMismatch { name: name.clone(), msg: "not part of this model".into() });
        }
        let mut values = entries.into_iter().map(|(_, t)| t.to_tensor::<E>().expect("dtype checked"));
        self.visit_mut(&mut |p| {
            p.value = values.next().expect("count checked");
            p.grad = None;
        });
        Ok(())
    }

    /// Builds the model for `config` and loads `path` into it.
    pub fn load(config: &super::config::ModelConfig, path: &Path) -> Result<Self> {
        let mut m = Self::build(config, 0)?;
        m.load_archive(read_archive(path)?)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip_in_memory() {
        let entries = vec![
            ("a".to_string(), ArchiveTensor::F32(Tensor::new(vec![2, 2], vec![1.0f32, -2.0, 3.5, 0.0]).unwrap())),
            ("b".to_string(), ArchiveTensor::U32 { shape: vec![3], data: vec![0, 1, 7] }),
            ("c".to_string(), ArchiveTensor::F64(Tensor::scalar(std::f64::consts::PI))),
        ];
        let mut buf = Vec::new();
        write_archive_to(&mut buf, &entries).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        assert_eq!(read_archive_from(&mut buf.as_slice(), "mem").unwrap(), entries);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_archive_from(&mut &b"NOPE\x01\0\0\0"[..], "mem").is_err());
        let mut buf = Vec::new();
        write_archive_to(&mut buf, &[("x".into(), ArchiveTensor::U32 { shape: vec![4], data: vec![1; 4] })]).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_archive_from(&mut buf.as_slice(), "mem"), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn indices_from_whole_floats() {
        let t = ArchiveTensor::F32(Tensor::new(vec![3], vec![0.0f32, 1.0, 2.0]).unwrap());
        assert_eq!(t.to_indices(), Some(vec![0, 1, 2]));
        let t = ArchiveTensor::F32(Tensor::new(vec![1], vec![0.5f32]).unwrap());
        assert_eq!(t.to_indices(), None);
    }
}
