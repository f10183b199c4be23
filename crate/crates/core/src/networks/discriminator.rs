use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{conv_output_size, instance_norm, leaky_relu, Conv2d, Module, Parameter};
use crate::error::{contract, Error, Result};

/// PatchGAN discriminator shape. Each entry of `widths` is one
/// convolution–norm–LeakyReLU stage; all but the last use stride 2. A final
/// stride-1 convolution maps to a single-channel score map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            widths: vec![64, 128, 256, 512],
            kernel: 4,
            leaky_slope: 0.2,
        }
    }
}

const PADDING: usize = 1;

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths[0] == 0 {
            return Err(Error::Config("discriminator needs at least one positive width".into()));
        }
        if self.widths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "discriminator widths must be strictly increasing, got {:?}",
                self.widths
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky_slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        if self.kernel == 0 || self.in_channels == 0 {
            return Err(Error::Config("kernel and in_channels must be positive".into()));
        }
        Ok(())
    }

    /// `(kernel, stride)` of every convolution, input to output.
    pub fn layer_geometry(&self) -> Vec<(usize, usize)> {
        let n = self.widths.len();
        (0..n)
            .map(|i| (self.kernel, if i + 1 < n { 2 } else { 1 }))
            .chain(std::iter::once((self.kernel, 1)))
            .collect()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field_of(&self.layer_geometry())
    }

    /// Side of the score map for a square input of side `n`, or `None` if a layer
    /// would have no output.
    pub fn score_map_size(&self, n: usize) -> Option<usize> {
        self.layer_geometry()
            .iter()
            .try_fold(n, |size, &(k, s)| conv_output_size(size, k, s, PADDING).filter(|&o| o > 0))
    }
}

/// Receptive field of a convolution stack given `(kernel, stride)` per layer, by
/// walking from one output unit back to the input: `rf ← (rf − 1)·stride + kernel`.
pub fn receptive_field_of(layers: &[(usize, usize)]) -> usize {
    layers
        .iter()
        .rev()
        .fold(1, |rf, &(kernel, stride)| (rf - 1) * stride + kernel)
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    convs: Vec<Conv2d>,
}

/// Builds a discriminator with zeroed parameters; see [`super::init_weights`].
pub fn build_discriminator(cfg: &DiscriminatorConfig, dtype: DType) -> Result<Discriminator> {
    cfg.validate()?;
    let geometry = cfg.layer_geometry();
    let mut channels = vec![cfg.in_channels];
    channels.extend(&cfg.widths);
    channels.push(1);
    let convs = geometry
        .iter()
        .enumerate()
        .map(|(i, &(k, s))| {
            Conv2d::new(format!("conv{i}"), channels[i], channels[i + 1], k, s, PADDING, dtype)
        })
        .collect::<Result<_>>()?;
    Ok(Discriminator {
        config: cfg.clone(),
        convs,
    })
}

impl Discriminator {
    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Raw patch scores, shape `(count, 1, h', w')`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels {
            return Err(contract!(
                "discriminator expects {} input channels, got {c}",
                self.config.in_channels
            ));
        }
        let side = h.min(w);
        if self.config.score_map_size(h).is_none() || self.config.score_map_size(w).is_none() {
            return Err(contract!("discriminator input {h}x{w} is too small to produce a score map"));
        }
        let rf = self.config.receptive_field();
        if side < rf {
            log::warn!("discriminator input {h}x{w} is smaller than its {rf}px receptive field");
        }

        let last = self.convs.len() - 1;
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i == last {
                break;
            }
            if i > 0 {
                h = instance_norm(&h)?;
            }
            h = leaky_relu(&h, self.config.leaky_slope)?;
        }
        Ok(h)
    }
}

impl Module for Discriminator {
    fn parameters(&self) -> Vec<Parameter> {
        self.convs.iter().flat_map(|c| c.parameters()).collect()
    }
}
