//! Labelled datasets: IDX files and seeded Gaussian blobs.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, STREAM_DATA};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Samples stacked along dimension 0 with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.shape()[0] != labels.len() {
            return Err(Error::Dimension {
                op: "dataset",
                lhs: features.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                bound: classes,
            });
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn sample_len(&self) -> usize {
        self.features.numel() / self.len()
    }

    /// Gathers `indices` into a `[B, ...sample_shape]` tensor plus labels.
    pub fn batch(&self, indices: &[usize], sample_shape: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let per = self.sample_len();
        if sample_shape.iter().product::<usize>() != per {
            return Err(Error::Dimension {
                op: "batch",
                lhs: self.features.shape()[1..].to_vec(),
                rhs: sample_shape.to_vec(),
            });
        }
        let src = self.features.data();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index {
                    what: "sample",
                    index: i,
                    bound: self.len(),
                });
            }
            data.extend_from_slice(&src[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(sample_shape);
        Ok((Tensor::new(shape, data)?, labels))
    }

    /// Splits off the first `floor(train_fraction * N)` samples for training
    /// and keeps the rest for validation.
    pub fn split(&self, train_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::contract(format!(
                "train fraction {train_fraction} outside (0, 1)"
            )));
        }
        let n_train = (train_fraction * self.len() as f64).floor() as usize;
        if n_train == 0 || n_train == self.len() {
            return Err(Error::contract(format!(
                "split of {} samples at {train_fraction} leaves an empty side",
                self.len()
            )));
        }
        Ok((self.slice(0, n_train)?, self.slice(n_train, self.len())?))
    }

    fn slice(&self, start: usize, end: usize) -> Result<Dataset> {
        let per = self.sample_len();
        let mut shape = self.features.shape().to_vec();
        shape[0] = end - start;
        let data = self.features.data()[start * per..end * per].to_vec();
        Dataset::new(Tensor::new(shape, data)?, self.labels[start..end].to_vec(), self.classes)
    }
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset, "file truncated inside header"))
}

/// Parses an IDX image file (`0x00000803`, big-endian `N, rows, cols`) into
/// an `[N, 1, rows, cols]` tensor scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad image magic {magic:#010x}")));
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::format(4, format!("empty image dimensions {n}x{rows}x{cols}")));
    }
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("image data truncated: expected {need} bytes, found {}", body.len()),
        ));
    }
    if body.len() > need {
        return Err(Error::format(16 + need, "trailing bytes after image data"));
    }
    let data = body.iter().map(|&b| f32::from(b) / 255.0).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

/// Parses an IDX label file (`0x00000801`, big-endian `N`).
pub fn parse_idx_labels(bytes: &[u8], classes: usize) -> Result<Vec<usize>> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(0, format!("bad label magic {magic:#010x}")));
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(
            bytes.len(),
            format!("label data truncated: expected {n} bytes, found {}", body.len()),
        ));
    }
    if body.len() > n {
        return Err(Error::format(8 + n, "trailing bytes after label data"));
    }
    body.iter()
        .map(|&b| {
            let label = usize::from(b);
            if label >= classes {
                Err(Error::Index {
                    what: "IDX label",
                    index: label,
                    bound: classes,
                })
            } else {
                Ok(label)
            }
        })
        .collect()
}

pub fn load_idx(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let features = parse_idx_images(&fs::read(images)?)?;
    let labels = parse_idx_labels(&fs::read(labels)?, classes)?;
    if labels.len() != features.shape()[0] {
        return Err(Error::format(
            4,
            format!(
                "image count {} does not match label count {}",
                features.shape()[0],
                labels.len()
            ),
        ));
    }
    Dataset::new(features, labels, classes)
}

/// Encodes `[N, rows, cols]` byte images as an IDX file.
pub fn encode_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Generator parameters for [`synth_blobs`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dims: usize,
    pub samples: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Gaussian clusters around the points of a unit-spaced lattice.
///
/// Class `c` sits at the base-`b` digits of `c` (centred around zero), where
/// `b >= 2` is the smallest base with `b^dims >= classes`. The lattice is
/// embedded along seeded random orthonormal directions, so neighbouring
/// centres are exactly one unit apart while every input coordinate carries
/// signal. Labels are assigned round-robin and each sample adds isotropic
/// noise with standard deviation `noise`.
pub fn synth_blobs(spec: &BlobSpec) -> Result<Dataset> {
    let BlobSpec {
        classes,
        dims,
        samples,
        noise,
        seed,
    } = *spec;
    if classes < 2 || dims < 2 || samples < classes || !noise.is_finite() || noise < 0.0 {
        return Err(Error::contract(format!("degenerate blob parameters {spec:?}")));
    }
    let base = (2usize..)
        .find(|&b| (b as f64).powf(dims as f64) >= classes as f64)
        .expect("some base covers any class count");
    let digits = (1usize..)
        .find(|&m| (base as f64).powi(m as i32) >= classes as f64)
        .expect("some digit count covers any class count");

    let mut rng = stream_rng(seed, STREAM_DATA);
    let axes = orthonormal_directions(digits, dims, &mut rng);
    let offset = (base - 1) as f64 / 2.0;
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut center = vec![0.0f64; dims];
            let mut rest = c;
            for axis in &axes {
                let coord = (rest % base) as f64 - offset;
                rest /= base;
                center.iter_mut().zip(axis).for_each(|(x, a)| *x += coord * a);
            }
            center
        })
        .collect();

    let mut data = Vec::with_capacity(samples * dims);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = i % classes;
        for &mu in &centers[label] {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((mu + noise * z) as f32);
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![samples, dims], data)?, labels, classes)
}

/// `count` orthonormal vectors in `R^dims` via Gram–Schmidt on Gaussians.
fn orthonormal_directions(count: usize, dims: usize, rng: &mut impl rand::Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dims).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}
