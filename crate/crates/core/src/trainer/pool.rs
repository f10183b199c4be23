use candle_core::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// History of generated images shown to a discriminator. Until full, every new
/// image is stored and passed through; afterwards each image is, with
/// probability 1/2, swapped for a random stored one.
#[derive(Debug, Clone)]
pub struct ImagePool {
    capacity: usize,
    images: Vec<Tensor>,
}

impl ImagePool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            images: Vec::new(),
        }
    }

    pub fn from_images(capacity: usize, images: Vec<Tensor>) -> Self {
        Self { capacity, images }
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    /// Detached batch to train the discriminator on. A zero-capacity pool returns
    /// its input without drawing from `rng`.
    pub fn query(&mut self, batch: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let batch = batch.detach();
        if self.capacity == 0 {
            return Ok(batch);
        }
        let n = batch.dim(0)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let img = batch.narrow(0, i, 1)?.copy()?;
            if self.images.len() < self.capacity {
                self.images.push(img.clone());
                out.push(img);
            } else if rng.random_bool(0.5) {
                let k = rng.random_range(0..self.capacity);
                let old = std::mem::replace(&mut self.images[k], img);
                out.push(old);
            } else {
                out.push(img);
            }
        }
        Ok(Tensor::cat(&out, 0)?)
    }
}
