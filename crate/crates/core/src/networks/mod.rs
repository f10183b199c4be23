//! Generator and discriminator architectures, weight initialization and the
//! four-network bundle trained jointly.

mod discriminator;
mod generator;
pub mod layers;

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use discriminator::{
    build_discriminator, receptive_field_of, Discriminator, DiscriminatorConfig,
};
pub use generator::{build_generator, Generator, GeneratorConfig, ResidualBlock};
pub use layers::{Module, ParamKind, Parameter};

use crate::error::{contract, Error, Result};

/// Maps a model-range image batch to another of the same shape.
pub trait Translator {
    fn translate(&self, x: &Tensor) -> Result<Tensor>;
}

/// Returns its input unchanged; a stand-in generator for tests and baselines.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Translator for Identity {
    fn translate(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }
}

impl<T: Translator + ?Sized> Translator for &T {
    fn translate(&self, x: &Tensor) -> Result<Tensor> {
        (**self).translate(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    AToB,
    BToA,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_', '>', ' '], "").as_str() {
            "a2b" | "atob" | "ab" => Ok(Direction::AToB),
            "b2a" | "btoa" | "ba" => Ok(Direction::BToA),
            _ => Err(Error::Config(format!(
                "unknown direction `{s}`; valid directions: a2b, b2a"
            ))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AToB => "a2b",
            Direction::BToA => "b2a",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}`; valid: f32, f64"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Architecture of all four networks; two generators share one config, two
/// discriminators the other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub precision: Precision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            precision: Precision::F32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()
    }

    /// Hex digest identifying the architecture; checkpoints refuse to load into a
    /// different one.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("model config serializes");
        hex::encode(&Sha256::digest(&canonical)[..16])
    }
}

/// `G_AB`, `G_BA`, `D_A`, `D_B`.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub g_ab: Generator,
    pub g_ba: Generator,
    pub d_a: Discriminator,
    pub d_b: Discriminator,
    config: ModelConfig,
}

impl ModelBundle {
    /// All parameters zero.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let dtype = config.precision.dtype();
        Ok(Self {
            g_ab: build_generator(&config.generator, dtype)?,
            g_ba: build_generator(&config.generator, dtype)?,
            d_a: build_discriminator(&config.discriminator, dtype)?,
            d_b: build_discriminator(&config.discriminator, dtype)?,
            config: config.clone(),
        })
    }

    /// Builds the bundle and draws every kernel from `N(mean, std²)`. Each network
    /// uses its own random stream derived from `seed`.
    pub fn initialized(config: &ModelConfig, mean: f64, std: f64, seed: u64) -> Result<Self> {
        let bundle = Self::new(config)?;
        let nets: [&dyn Module; 4] = [&bundle.g_ab, &bundle.g_ba, &bundle.d_a, &bundle.d_b];
        for (stream, net) in nets.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64 + 1);
            init_weights_with(net, mean, std, &mut rng)?;
        }
        Ok(bundle)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn generator(&self, direction: Direction) -> &Generator {
        match direction {
            Direction::AToB => &self.g_ab,
            Direction::BToA => &self.g_ba,
        }
    }

    pub fn generator_parameters(&self) -> Vec<Parameter> {
        prefixed("g_ab", &self.g_ab)
            .into_iter()
            .chain(prefixed("g_ba", &self.g_ba))
            .collect()
    }

    pub fn discriminator_parameters(&self) -> Vec<Parameter> {
        prefixed("d_a", &self.d_a)
            .into_iter()
            .chain(prefixed("d_b", &self.d_b))
            .collect()
    }
}

impl Module for ModelBundle {
    fn parameters(&self) -> Vec<Parameter> {
        let mut p = self.generator_parameters();
        p.extend(self.discriminator_parameters());
        p
    }
}

fn prefixed(prefix: &str, net: &dyn Module) -> Vec<Parameter> {
    net.parameters()
        .into_iter()
        .map(|mut p| {
            p.name = format!("{prefix}.{}", p.name);
            p
        })
        .collect()
}

/// Redraws every kernel i.i.d. from `N(mean, std²)` and zeroes every bias.
/// Deterministic for a given `seed`.
pub fn init_weights(net: &dyn Module, mean: f64, std: f64, seed: u64) -> Result<()> {
    init_weights_with(net, mean, std, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn init_weights_with(net: &dyn Module, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
        return Err(contract!("init needs finite mean and std > 0, got mean={mean} std={std}"));
    }
    let normal = Normal::new(mean, std).map_err(|e| contract!("{e}"))?;
    for p in net.parameters() {
        let t = p.var.as_tensor();
        let fresh = match p.kind {
            ParamKind::Kernel => {
                let values: Vec<f64> = (0..t.elem_count()).map(|_| normal.sample(rng)).collect();
                Tensor::from_vec(values, t.shape(), &Device::Cpu)?.to_dtype(t.dtype())?
            }
            ParamKind::Bias => t.zeros_like()?,
        };
        p.var.set(&fresh)?;
    }
    Ok(())
}
