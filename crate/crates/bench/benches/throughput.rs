use std::hint::black_box;

use candle_core::{DType, Device, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use csgan::metrics::{ssim, SsimParams};
use csgan::networks::{build_discriminator, build_generator, DiscriminatorConfig, GeneratorConfig};
use csgan::{ImageTensor, Method, ModelConfig, ObjectiveSpec, PairedBatch, PixelRange, Precision, TrainConfig, Trainer};

fn ramp(shape: (usize, usize, usize, usize), scale: f32, offset: f32) -> Tensor {
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    let v: Vec<f32> = (0..n).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 * scale + offset).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

fn networks(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    let g = build_generator(&GeneratorConfig { image_size: 128, ..GeneratorConfig::default() }, DType::F32).unwrap();
    let d = build_discriminator(&DiscriminatorConfig::default(), DType::F32).unwrap();
    let x128 = ramp((1, 3, 128, 128), 2.0, -1.0);
    let x256 = ramp((1, 3, 256, 256), 2.0, -1.0);
    group.bench_function("generator_128", |b| b.iter(|| g.forward(black_box(&x128)).unwrap()));
    group.bench_function("discriminator_256", |b| b.iter(|| d.forward(black_box(&x256)).unwrap()));
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let a = ImageTensor::new(ramp((1, 3, 256, 256), 255.0, 0.0), PixelRange::Unit8).unwrap();
    let b = ImageTensor::new(ramp((1, 3, 256, 256), 200.0, 20.0), PixelRange::Unit8).unwrap();
    let p = SsimParams::default();
    c.bench_function("ssim_256", |bench| bench.iter(|| ssim(black_box(&a), black_box(&b), &p).unwrap()));
}

fn training_step(c: &mut Criterion) {
    let model = ModelConfig {
        generator: GeneratorConfig { base_width: 8, n_residual_blocks: 2, image_size: 64, ..GeneratorConfig::default() },
        discriminator: DiscriminatorConfig { widths: vec![8, 16, 32, 64], ..DiscriminatorConfig::default() },
        precision: Precision::F32,
    };
    let mut trainer = Trainer::new(TrainConfig::new(ObjectiveSpec::preset(Method::CsGan), model)).unwrap();
    let batch = PairedBatch {
        names: vec!["a".into(), "b".into()],
        a: ImageTensor::new(ramp((2, 3, 64, 64), 2.0, -1.0), PixelRange::Model).unwrap(),
        b: ImageTensor::new(ramp((2, 3, 64, 64), 1.5, -0.5), PixelRange::Model).unwrap(),
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("csgan_step_64", |b| b.iter(|| trainer.training_step(&batch, 2e-4).unwrap()));
    group.finish();
}

criterion_group!(benches, networks, metrics, training_step);
criterion_main!(benches);
