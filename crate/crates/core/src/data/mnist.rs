//! Multi-MNIST scenes composed from IDX digit files.

use rand::Rng;

use super::container::{Dataset, DatasetHeader, SceneObject, SceneRecord};
use super::idx::IdxArray;
use crate::error::{Error, Result};
use crate::noise::{NoiseStream, Role};

#[derive(Debug, Clone, PartialEq)]
pub struct MnistConfig {
    pub height: usize,
    pub width: usize,
    pub max_digits: usize,
}

impl Default for MnistConfig {
    fn default() -> Self {
        MnistConfig {
            height: 50,
            width: 50,
            max_digits: 2,
        }
    }
}

/// Digit images and labels checked against each other.
#[derive(Debug, Clone)]
pub struct DigitSource {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl DigitSource {
    pub fn new(images: IdxArray, labels: IdxArray) -> Result<Self> {
        if images.shape.len() != 3 {
            return Err(Error::format(3, format!("digit images must have rank 3, found {:?}", images.shape)));
        }
        if labels.shape.len() != 1 {
            return Err(Error::format(3, format!("labels must have rank 1, found {:?}", labels.shape)));
        }
        if images.shape[0] != labels.shape[0] {
            return Err(Error::format(
                4,
                format!("{} images but {} labels", images.shape[0], labels.shape[0]),
            ));
        }
        if images.shape[0] == 0 {
            return Err(Error::format(4, "digit source is empty"));
        }
        if let Some(l) = labels.data.iter().find(|&&l| l > 9) {
            return Err(Error::invalid(format!("label {l} is not a digit")));
        }
        Ok(DigitSource {
            rows: images.shape[1],
            cols: images.shape[2],
            images: images.data,
            labels: labels.data,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn digit(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.images[i * n..(i + 1) * n]
    }
}

/// Composes `count` scenes; record `i` draws from the stream keyed by `i`.
pub fn gen_multi_mnist(count: usize, source: &DigitSource, config: &MnistConfig, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    let (h, w) = (config.height, config.width);
    let (dr, dc) = (source.rows, source.cols);
    if dr > h || dc > w {
        return Err(Error::invalid(format!("{dr}×{dc} digits do not fit a {h}×{w} canvas")));
    }
    if config.max_digits > u8::MAX as usize {
        return Err(Error::invalid("max_digits too large"));
    }
    let scale = dc.max(dr) as f32 / w.min(h) as f32;
    let records = (0..count)
        .map(|i| {
            let mut s = NoiseStream::new(seed, 0, i as u64, Role::Data);
            let rng = s.rng();
            let n = rng.random_range(0..=config.max_digits);
            let mut image = vec![0u8; h * w];
            let mut objects = Vec::with_capacity(n);
            for _ in 0..n {
                let d = rng.random_range(0..source.len());
                let top = rng.random_range(0..=h - dr);
                let left = rng.random_range(0..=w - dc);
                let digit = source.digit(d);
                for r in 0..dr {
                    for c in 0..dc {
                        let slot = &mut image[(top + r) * w + left + c];
                        *slot = (*slot).max(digit[r * dc + c]);
                    }
                }
                objects.push(SceneObject {
                    category: source.labels[d],
                    center_x: left as f32 + (dc as f32 - 1.0) / 2.0,
                    center_y: top as f32 + (dr as f32 - 1.0) / 2.0,
                    scale,
                    orientation: 0.0,
                });
            }
            SceneRecord { image, objects }
        })
        .collect();
    Ok(Dataset {
        header: DatasetHeader::new(count, h, w, config.max_digits, 10),
        records,
    })
}
