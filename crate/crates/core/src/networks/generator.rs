use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{instance_norm, reflect_pad, Conv2d, ConvTranspose2d, Module, Parameter};
use super::Translator;
use crate::error::{contract, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub n_residual_blocks: usize,
    pub image_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            out_channels: 3,
            base_width: 64,
            n_residual_blocks: 9,
            image_size: 256,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_residual_blocks == 0 {
            return Err(Error::Config("generator needs at least one residual block".into()));
        }
        if self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("generator widths and channel counts must be positive".into()));
        }
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of 4 so the two stride-2 stages invert exactly",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// `x + body(x)`, body = pad·conv·norm·relu·pad·conv·norm at constant width.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResidualBlock {
    fn new(name: &str, width: usize, dtype: DType) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(format!("{name}.conv1"), width, width, 3, 1, 0, dtype)?,
            conv2: Conv2d::new(format!("{name}.conv2"), width, width, 3, 1, 0, dtype)?,
        })
    }

    pub fn body(&self, x: &Tensor) -> Result<Tensor> {
        let h = instance_norm(&self.conv1.forward(&reflect_pad(x, 1)?)?)?.relu()?;
        instance_norm(&self.conv2.forward(&reflect_pad(&h, 1)?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok((x + self.body(x)?)?)
    }
}

impl Module for ResidualBlock {
    fn parameters(&self) -> Vec<Parameter> {
        let mut p = self.conv1.parameters();
        p.extend(self.conv2.parameters());
        p
    }
}

/// Encoder (3 convolutions) → residual trunk → decoder (2 transposed convolutions + output
/// convolution with tanh). Spatial size in equals spatial size out.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    stem: Conv2d,
    down1: Conv2d,
    down2: Conv2d,
    blocks: Vec<ResidualBlock>,
    up1: ConvTranspose2d,
    up2: ConvTranspose2d,
    head: Conv2d,
}

/// Builds a generator with zeroed parameters; see [`super::init_weights`].
pub fn build_generator(cfg: &GeneratorConfig, dtype: DType) -> Result<Generator> {
    cfg.validate()?;
    let w = cfg.base_width;
    Ok(Generator {
        config: cfg.clone(),
        stem: Conv2d::new("stem", cfg.in_channels, w, 7, 1, 0, dtype)?,
        down1: Conv2d::new("down1", w, 2 * w, 3, 2, 1, dtype)?,
        down2: Conv2d::new("down2", 2 * w, 4 * w, 3, 2, 1, dtype)?,
        blocks: (0..cfg.n_residual_blocks)
            .map(|i| ResidualBlock::new(&format!("res{i}"), 4 * w, dtype))
            .collect::<Result<_>>()?,
        up1: ConvTranspose2d::new("up1", 4 * w, 2 * w, 3, 2, 1, 1, dtype)?,
        up2: ConvTranspose2d::new("up2", 2 * w, w, 3, 2, 1, 1, dtype)?,
        head: Conv2d::new("head", w, cfg.out_channels, 7, 1, 0, dtype)?,
    })
}

impl Generator {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn residual_blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels {
            return Err(contract!(
                "generator expects {} input channels, got {c}",
                self.config.in_channels
            ));
        }
        if h % 4 != 0 || w % 4 != 0 || h < 4 || w < 4 {
            return Err(contract!(
                "generator input sides must be multiples of 4 and at least 4, got {h}x{w}"
            ));
        }
        Ok(())
    }

    /// Output of each layer in table order: stem, two downsampling stages, every
    /// residual block, two upsampling stages, output layer.
    pub fn forward_layers(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.blocks.len() + 6);
        // The first layer carries no normalization.
        let h = self.stem.forward(&reflect_pad(x, 3)?)?.relu()?;
        acts.push(h);
        for down in [&self.down1, &self.down2] {
            let prev = acts.last().unwrap();
            acts.push(instance_norm(&down.forward(prev)?)?.relu()?);
        }
        for block in &self.blocks {
            let prev = acts.last().unwrap();
            acts.push(block.forward(prev)?);
        }
        for up in [&self.up1, &self.up2] {
            let prev = acts.last().unwrap();
            acts.push(instance_norm(&up.forward(prev)?)?.relu()?);
        }
        let prev = acts.last().unwrap();
        acts.push(self.head.forward(&reflect_pad(prev, 3)?)?.tanh()?);
        Ok(acts)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_layers(x)?.pop().expect("generator has layers"))
    }
}

impl Module for Generator {
    fn parameters(&self) -> Vec<Parameter> {
        let mut p = self.stem.parameters();
        p.extend(self.down1.parameters());
        p.extend(self.down2.parameters());
        for b in &self.blocks {
            p.extend(b.parameters());
        }
        p.extend(self.up1.parameters());
        p.extend(self.up2.parameters());
        p.extend(self.head.parameters());
        p
    }
}

impl Translator for Generator {
    fn translate(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
}
