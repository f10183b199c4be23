#![allow(dead_code)]

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use csgan::networks::{DiscriminatorConfig, GeneratorConfig, ModelConfig, Precision};
use csgan::objectives::ObjectiveSpec;
use csgan::trainer::TrainConfig;
use csgan::{ImageTensor, PairedBatch, PixelRange};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth colored pattern; `phase` varies it between pairs.
pub fn pattern(size: u32, phase: f32) -> RgbImage {
    RgbImage::from_fn(size, size, |x, y| {
        let (u, v) = (x as f32 / size as f32, y as f32 / size as f32);
        let r = 0.5 + 0.5 * (6.0 * u + phase).sin();
        let g = 0.5 + 0.5 * (4.0 * v - phase).cos();
        let b = 0.5 + 0.5 * (3.0 * (u + v) + 2.0 * phase).sin();
        Rgb([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8])
    })
}

/// Domain-B counterpart: channels rotated and the red channel inverted.
pub fn counterpart(a: &RgbImage) -> RgbImage {
    RgbImage::from_fn(a.width(), a.height(), |x, y| {
        let p = a.get_pixel(x, y);
        Rgb([255 - p[2], p[0], p[1]])
    })
}

/// Writes `n` pairs per split in the split-folders layout.
pub fn write_split_folders(root: &Path, size: u32, train: usize, test: usize) {
    for (split, n, offset) in [("train", train, 0), ("test", test, 100)] {
        std::fs::create_dir_all(root.join(format!("{split}A"))).unwrap();
        std::fs::create_dir_all(root.join(format!("{split}B"))).unwrap();
        for i in 0..n {
            let a = pattern(size, (i + offset) as f32 * 0.9);
            let name = format!("{:03}.png", i + offset);
            a.save(root.join(format!("{split}A")).join(&name)).unwrap();
            counterpart(&a).save(root.join(format!("{split}B")).join(&name)).unwrap();
        }
    }
}

pub fn small_model(image_size: usize, precision: Precision) -> ModelConfig {
    ModelConfig {
        generator: GeneratorConfig {
            in_channels: 3,
            out_channels: 3,
            base_width: 8,
            n_residual_blocks: 2,
            image_size,
        },
        discriminator: DiscriminatorConfig {
            widths: vec![8, 16, 32, 64],
            ..DiscriminatorConfig::default()
        },
        precision,
    }
}

/// The reduced csgan run used by the overfit and determinism checks:
/// two 64×64 pairs, batch 2, one step per epoch for 200 epochs.
pub fn tiny_overfit_config(objective: ObjectiveSpec) -> TrainConfig {
    let mut cfg = TrainConfig::new(objective, small_model(64, Precision::F32));
    cfg.epochs_total = 200;
    cfg.epochs_constant = 100;
    cfg.batch_size = 2;
    cfg.seed = 7;
    cfg.checkpoint_every = 50;
    cfg
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, dtype: DType) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
}

/// A model-range batch of random images.
pub fn random_batch(n: usize, c: usize, size: usize, seed: u64, dtype: DType) -> PairedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [n, c, size, size];
    PairedBatch {
        names: (0..n).map(|i| format!("img{i}")).collect(),
        a: ImageTensor::new(random_tensor(&shape, &mut rng, dtype), PixelRange::Model).unwrap(),
        b: ImageTensor::new(random_tensor(&shape, &mut rng, dtype), PixelRange::Model).unwrap(),
    }
}

pub fn read_loss_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}
