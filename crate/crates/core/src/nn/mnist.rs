use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Images are zero-padded from 28×28 to this side length.
pub const IMAGE_SIDE: usize = 32;
const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Padded images in `[0, 1]`, one contiguous `32·32` block per sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut out = Dataset { images: Vec::with_capacity(idx.len() * PIXELS), labels: Vec::with_capacity(idx.len()) };
        for &i in idx {
            out.images.extend_from_slice(self.image(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    pub fn range(&self, start: usize, end: usize) -> Dataset {
        Dataset { images: self.images[start * PIXELS..end * PIXELS].to_vec(), labels: self.labels[start..end].to_vec() }
    }

    /// Consecutive batches as `1024 × b` matrices.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = (DMatrix<f64>, Vec<u8>)> + '_ {
        (0..self.len()).step_by(size.max(1)).map(move |s| {
            let e = (s + size.max(1)).min(self.len());
            (DMatrix::from_column_slice(PIXELS, e - s, &self.images[s * PIXELS..e * PIXELS]), self.labels[s..e].to_vec())
        })
    }

    pub fn batch_of(&self, idx: &[usize]) -> (DMatrix<f64>, Vec<u8>) {
        let sub = self.subset(idx);
        (DMatrix::from_column_slice(PIXELS, idx.len(), &sub.images), sub.labels)
    }
}

fn open(path: &Path) -> Result<Box<dyn Read>> {
    let gz = PathBuf::from(format!("{}.gz", path.display()));
    if path.exists() {
        let f = BufReader::new(File::open(path)?);
        if path.extension().is_some_and(|e| e == "gz") {
            return Ok(Box::new(GzDecoder::new(f)));
        }
        Ok(Box::new(f))
    } else if gz.exists() {
        Ok(Box::new(GzDecoder::new(BufReader::new(File::open(gz)?))))
    } else {
        Err(Error::DataMissing(path.to_path_buf()))
    }
}

fn read_u32(r: &mut dyn Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

/// Reads an IDX image file (plain or gzipped) as `(n, rows, cols, bytes)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = open(path)?;
    let magic = read_u32(&mut r)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Parse(format!("{}: image magic {magic:#010x}", path.display())));
    }
    let n = read_u32(&mut r)? as usize;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let mut data = vec![0u8; n * rows * cols];
    r.read_exact(&mut data)?;
    Ok((n, rows, cols, data))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = open(path)?;
    let magic = read_u32(&mut r)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Parse(format!("{}: label magic {magic:#010x}", path.display())));
    }
    let n = read_u32(&mut r)? as usize;
    let mut data = vec![0u8; n];
    r.read_exact(&mut data)?;
    Ok(data)
}

fn load_pair(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let (n, rows, cols, px) = read_idx_images(&dir.join(images))?;
    let labels = read_idx_labels(&dir.join(labels))?;
    if labels.len() != n {
        return Err(Error::LengthMismatch { left: n, right: labels.len() });
    }
    if rows > IMAGE_SIDE || cols > IMAGE_SIDE {
        return Err(Error::ShapeMismatch { expected: format!("at most {IMAGE_SIDE}x{IMAGE_SIDE}"), found: format!("{rows}x{cols}") });
    }
    let (oy, ox) = ((IMAGE_SIDE - rows) / 2, (IMAGE_SIDE - cols) / 2);
    let mut out = vec![0.0; n * PIXELS];
    for i in 0..n {
        for y in 0..rows {
            for x in 0..cols {
                out[i * PIXELS + (y + oy) * IMAGE_SIDE + x + ox] = px[i * rows * cols + y * cols + x] as f64 / 255.0;
            }
        }
    }
    Ok(Dataset { images: out, labels })
}

#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads the four standard IDX files from `dir`.
pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    Ok(Mnist {
        train: load_pair(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?,
        test: load_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?,
    })
}

/// The 10k test images only.
pub fn load_mnist_test(dir: &Path) -> Result<Dataset> {
    load_pair(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
}

/// Disjoint random evaluation and calibration subsets of the test set.
#[derive(Debug, Clone)]
pub struct Splits {
    pub eval: Dataset,
    pub calib: Dataset,
}

impl Splits {
    pub fn from_test(test: &Dataset, n_eval: usize, n_calib: usize, seeds: &SeedStream) -> Result<Self> {
        if n_eval + n_calib > test.len() {
            return Err(Error::InvalidArgument(format!(
                "{n_eval} + {n_calib} samples requested from {} test images",
                test.len()
            )));
        }
        let mut idx: Vec<usize> = (0..test.len()).collect();
        idx.shuffle(&mut seeds.substream("splits", 0));
        Ok(Self { eval: test.subset(&idx[..n_eval]), calib: test.subset(&idx[n_eval..n_eval + n_calib]) })
    }
}
