//! Streaming image access for training: an index of (path, label) rows plus
//! batch loading into normalized tensors.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::render::{read_index, read_pgm};
use crate::tensor::Tensor;

/// A rendered split directory. Rows are kept in index order; pixel data stays
/// on disk until a batch asks for it.
#[derive(Debug, Clone)]
pub struct ImageSet {
    rows: Vec<(PathBuf, u8)>,
}

impl ImageSet {
    pub fn open(dir: &Path) -> Result<Self> {
        let rows = read_index(dir)?;
        if rows.is_empty() {
            return Err(Error::EmptyInput("image index"));
        }
        Ok(ImageSet { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|(_, l)| *l).collect()
    }

    /// (height, width) of the first image; the whole split is expected to
    /// match it, which `load_batch` enforces row by row.
    pub fn image_dims(&self) -> Result<(usize, usize)> {
        let img = read_pgm(&self.rows[0].0)?;
        Ok((img.height, img.width))
    }

    /// Load the given rows as an N x 1 x H x W batch scaled to [0, 1], with
    /// labels as 0/1 floats. Every image must match the requested extent.
    pub fn load_batch(
        &self,
        indices: &[usize],
        h: usize,
        w: usize,
    ) -> Result<(Tensor<f32>, Vec<f32>)> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let planes: Vec<Vec<f32>> = indices
            .par_iter()
            .map(|&i| {
                let (path, _) = &self.rows[i];
                let img = read_pgm(path)?;
                if img.height != h || img.width != w {
                    return Err(Error::MalformedImage(format!(
                        "{}: {}x{} does not match expected {}x{}",
                        path.display(),
                        img.width,
                        img.height,
                        w,
                        h
                    )));
                }
                Ok(img.pixels.iter().map(|&p| p as f32 / 255.0).collect())
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(indices.len() * h * w);
        for plane in planes {
            data.extend(plane);
        }
        let labels = indices.iter().map(|&i| self.rows[i].1 as f32).collect();
        Ok((Tensor::from_vec(&[indices.len(), 1, h, w], data)?, labels))
    }
}

/// Seeded epoch order: shuffled indices chunked into batches, final partial
/// batch kept.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
