//! MNIST ingestion and the 28×28 → 10×10 input reduction.
//!
//! Files use the IDX layout: a big-endian magic number (2051 for images,
//! 2049 for labels), big-endian `u32` dimensions, then row-major `u8` data.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::{INPUTS, OUTPUTS};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const RAW_SIDE: usize = 28;
pub const SIDE: usize = 10;
const CROP_START: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// `images` is `N × 100` with values in `[0, 1]`; `labels` are digits.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Array2<f64>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::Contract(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if images.ncols() != INPUTS {
            return Err(Error::Contract(format!(
                "expected {INPUTS} inputs per image, got {}",
                images.ncols()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= OUTPUTS) {
            return Err(Error::Contract(format!("label {l} out of range")));
        }
        Ok(Self {
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One-hot targets for the rows in `idx`.
    pub fn one_hot(&self, idx: &[usize]) -> Array2<f64> {
        let mut y = Array2::zeros((idx.len(), OUTPUTS));
        for (r, &i) in idx.iter().enumerate() {
            y[[r, usize::from(self.labels[i])]] = 1.0;
        }
        y
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.images.select(Axis(0), idx)
    }

    /// The first `n` items (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images.slice(s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }

    /// A uniformly random subset of `n` distinct items, in original order.
    pub fn random_subset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        let n = n.min(self.len());
        let mut idx = sample(rng, self.len(), n).into_vec();
        idx.sort_unstable();
        Dataset {
            images: self.rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }

    /// SHA-256 over the preprocessed pixels (as f64 bits) and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        for v in self.images.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(&self.labels);
        hex::encode(h.finalize())
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason: "truncated header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = read_u32_be(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("bad magic number {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(start..start + len).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        offset: bytes.len() as u64,
        reason: format!(
            "truncated payload: expected {} bytes, file ends after {}",
            start + len,
            bytes.len()
        ),
    })
}

/// Raw IDX images, `N × rows·cols` bytes.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGE_MAGIC, path)?;
    let n = read_u32_be(bytes, 4, path)? as usize;
    let rows = read_u32_be(bytes, 8, path)? as usize;
    let cols = read_u32_be(bytes, 12, path)? as usize;
    let data = payload(bytes, 16, n * rows * cols, path)?;
    Ok((n, rows, cols, data.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC, path)?;
    let n = read_u32_be(bytes, 4, path)? as usize;
    let data = payload(bytes, 8, n, path)?;
    if let Some(pos) = data.iter().position(|&l| usize::from(l) >= OUTPUTS) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: (8 + pos) as u64,
            reason: format!("label {} outside 0..=9", data[pos]),
        });
    }
    Ok(data.to_vec())
}

/// Central 20×20 crop (rows and columns 4..24), 2×2 mean pooling, row-major.
pub fn preprocess_image(img: ArrayView2<f64>) -> Result<[f64; INPUTS]> {
    if img.dim() != (RAW_SIDE, RAW_SIDE) {
        return Err(Error::Contract(format!(
            "expected a {RAW_SIDE}x{RAW_SIDE} image, got {:?}",
            img.dim()
        )));
    }
    let mut out = [0.0; INPUTS];
    for r in 0..SIDE {
        for c in 0..SIDE {
            let r0 = CROP_START + 2 * r;
            let c0 = CROP_START + 2 * c;
            let sum = img[[r0, c0]] + img[[r0, c0 + 1]] + img[[r0 + 1, c0]] + img[[r0 + 1, c0 + 1]];
            out[r * SIDE + c] = 0.25 * sum;
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label IDX pair, scales pixels by 1/255 and reduces each
/// image to 10×10.
pub fn load_mnist(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img_bytes = read(images)?;
    let (n, rows, cols, raw) = parse_idx_images(&img_bytes, images)?;
    if (rows, cols) != (RAW_SIDE, RAW_SIDE) {
        return Err(Error::Parse {
            path: images.to_path_buf(),
            offset: 8,
            reason: format!("expected {RAW_SIDE}x{RAW_SIDE} images, header says {rows}x{cols}"),
        });
    }
    let lab = parse_idx_labels(&read(labels)?, labels)?;
    if lab.len() != n {
        return Err(Error::Parse {
            path: labels.to_path_buf(),
            offset: 4,
            reason: format!("{} labels for {n} images", lab.len()),
        });
    }
    let mut out = Array2::zeros((n, INPUTS));
    let px = RAW_SIDE * RAW_SIDE;
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let img = Array2::from_shape_fn((RAW_SIDE, RAW_SIDE), |(r, c)| {
            f64::from(raw[i * px + r * RAW_SIDE + c]) / 255.0
        });
        let v = preprocess_image(img.view())?;
        row.assign(&ndarray::ArrayView1::from(&v[..]));
    }
    Dataset::new(out, lab, split)
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte` from a directory.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}
