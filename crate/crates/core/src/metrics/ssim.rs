//! Structural similarity with a Gaussian window.

use serde::{Deserialize, Serialize};

use crate::data::{ImageTensor, PixelRange};
use crate::error::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian; the 2-D window is its outer product and so also sums to 1.
    pub fn window_1d(&self) -> Vec<f64> {
        let n = self.window_size;
        let center = (n as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..n)
            .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.window_size == 0 || !(self.sigma > 0.0) || !(self.k1 > 0.0) || !(self.k2 > 0.0) {
            return Err(contract!("invalid SSIM parameters {self:?}"));
        }
        Ok(())
    }
}

/// Valid-mode separable filtering of an `h`×`w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all window positions of one plane.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, p: &SsimParams) -> f64 {
    let k = p.window_1d();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let e_aa = filter_valid(&aa, h, w, &k);
    let e_bb = filter_valid(&bb, h, w, &k);
    let e_ab = filter_valid(&ab, h, w, &k);
    let (c1, c2) = (p.c1(), p.c2());
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
        })
        .sum();
    total / n as f64
}

/// SSIM of two same-shaped `Unit8` image tensors, averaged over every image,
/// channel and window position.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, p: &SsimParams) -> Result<f64> {
    if a.range() != PixelRange::Unit8 || b.range() != PixelRange::Unit8 {
        return Err(contract!("ssim compares Unit8 images"));
    }
    if a.dims() != b.dims() {
        return Err(contract!("ssim operands differ in shape: {:?} vs {:?}", a.dims(), b.dims()));
    }
    let (n, c, h, w) = a.tensor().dims4()?;
    ssim_planes(&a.to_f64_vec()?, &b.to_f64_vec()?, n * c, h, w, p)
}

/// SSIM averaged over `planes` consecutive `h`×`w` planes.
pub fn ssim_planes(a: &[f64], b: &[f64], planes: usize, h: usize, w: usize, p: &SsimParams) -> Result<f64> {
    p.validate()?;
    if h < p.window_size || w < p.window_size {
        return Err(contract!(
            "image {h}x{w} is smaller than the {0}x{0} SSIM window",
            p.window_size
        ));
    }
    let size = h * w;
    let sum: f64 = (0..planes)
        .map(|i| ssim_plane(&a[i * size..(i + 1) * size], &b[i * size..(i + 1) * size], h, w, p))
        .sum();
    Ok(sum / planes as f64)
}
