use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::checkpoint::{read_archive, write_archive, ArchiveTensor};
use crate::tensor::{Element, Tensor};

/// Name of the index file inside a dataset directory.
pub const INDEX_FILE: &str = "index.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augment {
    None,
    /// Random horizontal flip and a random crop from a zero-padded copy.
    FlipCrop,
}

impl fmt::Display for Augment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augment::None => "none",
            Augment::FlipCrop => "flip_crop",
        })
    }
}

impl FromStr for Augment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augment::None),
            "flip_crop" => Ok(Augment::FlipCrop),
            other => Err(Error::Config(format!("unknown augmentation `{other}`"))),
        }
    }
}

/// Images `[M, C, H, W]` with values in `[0, 1]` and one class index per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        let (m, _, _, _) = images.dims4("dataset").map_err(|e| Error::Data(e.to_string()))?;
        if m != labels.len() {
            return Err(Error::Data(format!("{m} images but {} labels", labels.len())));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `(C, H, W)` of one image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Fails if any label is outside `0..num_classes`.
    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l >= num_classes) {
            Some(i) => Err(Error::Data(format!("label {} of sample {i} is outside 0..{num_classes}", self.labels[i]))),
            None => Ok(()),
        }
    }

    /// Gathers samples `indices` into a batch, optionally augmenting each.
    pub fn batch<E: Element>(
        &self,
        indices: &[usize],
        augment: Augment,
        rng: &mut impl Rng,
    ) -> (Tensor<E>, Vec<usize>) {
        let (c, h, w) = self.image_shape();
        let plane = h * w;
        let per = c * plane;
        let pad = (h.min(w) / 8).max(1) as i64;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            let src = &self.images.data()[i * per..(i + 1) * per];
            let (flip, dy, dx) = match augment {
                Augment::None => (false, 0, 0),
                Augment::FlipCrop => {
                    (rng.random_bool(0.5), rng.random_range(-pad..=pad) as isize, rng.random_range(-pad..=pad) as isize)
                }
            };
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let sx = if flip { w - 1 - x } else { x } as isize + dx;
                        let sy = y as isize + dy;
                        let v = if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            src[ch * plane + sy as usize * w + sx as usize]
                        } else {
                            0.0
                        };
                        data.push(E::from_f64(v as f64));
                    }
                }
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_parts(vec![indices.len(), c, h, w], data), labels)
    }

    /// Two-class toy set: class 0 is bright on the top half and dark on the
    /// bottom, class 1 the reverse, each with a per-image tint and pixel
    /// noise. Separable and invariant to horizontal flips.
    pub fn synthetic_quadrants(count: usize, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plane = size * size;
        let mut data = Vec::with_capacity(count * 3 * plane);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let label = i % 2;
            let tint: [f32; 3] = [rng.random_range(0.6..1.0), rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)];
            for &t in &tint {
                for y in 0..size {
                    let top = y < size / 2;
                    for x in 0..size {
                        let left = x < size / 2;
                        let bright = top == (label == 0);
                        let base = if bright { t } else { 0.15 };
                        let quad = if left { 0.0 } else { 0.05 };
                        let noise: f32 = rng.random_range(-0.1..0.1);
                        data.push((base + quad + noise).clamp(0.0, 1.0));
                    }
                }
            }
            labels.push(label);
        }
        Self { images: Tensor::from_parts(vec![count, 3, size, size], data), labels }
    }

    /// Loads a packed archive with `images` and `labels` entries, or a
    /// directory holding `index.tsv` (`relative-path<TAB>label` lines) next to
    /// single-tensor image archives.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Data(format!("dataset `{}` does not exist", path.display())));
        }
        if path.is_dir() {
            Self::load_dir(path)
        } else {
            Self::load_archive(path)
        }
    }

    fn load_archive(path: &Path) -> Result<Self> {
        let entries = read_archive(path).map_err(|e| Error::Data(e.to_string()))?;
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Data(format!("{}: no `{name}` entry", path.display())))
        };
        let images = find("images")?
            .to_tensor_lossy::<f32>()
            .ok_or_else(|| Error::Data(format!("{}: `images` must be floating point", path.display())))?;
        let labels = find("labels")?
            .to_indices()
            .ok_or_else(|| Error::Data(format!("{}: `labels` must be non-negative integers", path.display())))?;
        Self::new(images, labels)
    }

    fn load_dir(dir: &Path) -> Result<Self> {
        let index = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index).map_err(|e| Error::Data(format!("{}: {e}", index.display())))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut shape: Option<Vec<usize>> = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Data(format!("{}:{}: {msg}", index.display(), lineno + 1));
            let (rel, label) = line.split_once('\t').ok_or_else(|| bad("expected `path<TAB>label`".into()))?;
            let label: usize = label.trim().parse().map_err(|_| bad(format!("bad label `{label}`")))?;
            let file = dir.join(rel);
            let entries = read_archive(&file).map_err(|e| bad(e.to_string()))?;
            let [(_, t)] = entries.as_slice() else {
                return Err(bad(format!("{rel} must hold exactly one tensor")));
            };
            let img = t.to_tensor_lossy::<f32>().ok_or_else(|| bad(format!("{rel} is not floating point")))?;
            let img_shape = match img.shape() {
                [1, c, h, w] | [c, h, w] => vec![*c, *h, *w],
                other => return Err(bad(format!("{rel} has shape {other:?}, expected [C, H, W]"))),
            };
            match &shape {
                Some(s) if *s != img_shape => {
                    return Err(bad(format!("{rel} has shape {img_shape:?}, earlier images {s:?}")));
                }
                _ => shape = Some(img_shape),
            }
            data.extend_from_slice(img.data());
            labels.push(label);
        }
        let s = shape.unwrap_or_else(|| vec![3, 0, 0]);
        Self::new(Tensor::from_parts(vec![labels.len(), s[0], s[1], s[2]], data), labels)
    }

    /// Writes the packed single-archive form.
    pub fn save_archive(&self, path: &Path) -> Result<()> {
        let labels =
            ArchiveTensor::U32 { shape: vec![self.len()], data: self.labels.iter().map(|&l| l as u32).collect() };
        write_archive(path, &[("images".into(), ArchiveTensor::F32(self.images.clone())), ("labels".into(), labels)])
    }

    /// Writes the directory form: one archive per image plus the index.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (c, h, w) = self.image_shape();
        let per = c * h * w;
        let mut index = String::new();
        for (i, &label) in self.labels.iter().enumerate() {
            let rel = format!("{i:06}.sprt");
            let img = Tensor::from_parts(vec![c, h, w], self.images.data()[i * per..(i + 1) * per].to_vec());
            write_archive(&dir.join(&rel), &[("image".into(), ArchiveTensor::F32(img))])?;
            index.push_str(&format!("{rel}\t{label}\n"));
        }
        let path = dir.join(INDEX_FILE);
        fs::write(&path, index).map_err(|e| Error::io(&path, e))
    }
}
