mod common;

use candle_core::{DType, Device, Tensor};
use csgan::networks::{
    build_discriminator, build_generator, receptive_field_of, DiscriminatorConfig, GeneratorConfig, Module,
    ModelBundle, ModelConfig, ParamKind,
};
use csgan::objectives::{forward_cycle, ObjectiveSpec};
use csgan::{Method, Precision, TrainConfig};

fn zeros(c: usize, n: usize) -> Tensor {
    Tensor::zeros((1, c, n, n), DType::F32, &Device::Cpu).unwrap()
}

// Output side of each discriminator layer by floor((n + 2p − k)/s) + 1, computed independently.
fn score_side(mut n: usize) -> usize {
    for s in [2, 2, 2, 1, 1] {
        n = (n + 2 - 4) / s + 1;
    }
    n
}

#[test]
fn discriminator_score_maps() {
    let d = build_discriminator(&DiscriminatorConfig::default(), DType::F32).unwrap();
    assert_eq!(score_side(256), 30);
    assert_eq!(d.forward(&zeros(3, 256)).unwrap().dims(), &[1, 1, 30, 30]);
    assert_eq!(score_side(128), 14);
    assert_eq!(d.forward(&zeros(3, 128)).unwrap().dims(), &[1, 1, 14, 14]);

    let conditional = DiscriminatorConfig {
        in_channels: 6,
        ..DiscriminatorConfig::default()
    };
    let d6 = build_discriminator(&conditional, DType::F32).unwrap();
    assert_eq!(d6.forward(&zeros(6, 256)).unwrap().dims(), &[1, 1, 30, 30]);
    assert!(d6.forward(&zeros(3, 256)).is_err());

    // too small for any output
    assert!(d.forward(&zeros(3, 16)).is_err());
    assert_eq!(DiscriminatorConfig::default().score_map_size(16), None);
}

#[test]
fn receptive_fields() {
    assert_eq!(receptive_field_of(&[(4, 2)]), 4);
    assert_eq!(receptive_field_of(&[(4, 2), (4, 2)]), 10);
    assert_eq!(receptive_field_of(&[(4, 2), (4, 2), (4, 2), (4, 1), (4, 1)]), 70);
}

#[test]
fn generator_preserves_size_and_downsamples_twice() {
    let g = build_generator(&GeneratorConfig::default(), DType::F32).unwrap();
    assert_eq!(g.forward(&zeros(3, 64)).unwrap().dims(), &[1, 3, 64, 64]);
    let acts = g.forward_layers(&zeros(3, 256)).unwrap();
    assert_eq!(acts[2].dims(), &[1, 256, 64, 64]);
    assert_eq!(acts.len(), 3 + 9 + 3);
    assert!(g.forward(&zeros(3, 30)).is_err());
}

#[test]
fn init_statistics_and_determinism() {
    let cfg = ModelConfig::default();
    let a = ModelBundle::initialized(&cfg, 0.0, 0.02, 9).unwrap();
    let b = ModelBundle::initialized(&cfg, 0.0, 0.02, 9).unwrap();
    let mut all = Vec::new();
    for (p, q) in a.parameters().iter().zip(b.parameters()) {
        let x: Vec<f32> = p.var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let y: Vec<f32> = q.var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(x, y, "{}", p.name);
        match p.kind {
            ParamKind::Kernel => all.extend(x.iter().map(|&v| f64::from(v))),
            ParamKind::Bias => assert!(x.iter().all(|&v| v == 0.0)),
        }
    }
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    assert!(mean.abs() <= 3.0 * 0.02 / n.sqrt(), "mean {mean}");

    let c = ModelBundle::initialized(&cfg, 0.0, 0.02, 10).unwrap();
    let first = |m: &ModelBundle| -> Vec<f32> {
        m.parameters()[0].var.as_tensor().flatten_all().unwrap().to_vec1().unwrap()
    };
    assert_ne!(first(&a), first(&c));
}

#[test]
fn cycle_images_match_direct_composition() {
    let cfg = TrainConfig::new(ObjectiveSpec::preset(Method::CsGan), common::small_model(16, Precision::F32));
    let bundle = ModelBundle::initialized(&cfg.model, 0.0, 0.02, 1).unwrap();
    let batch = common::random_batch(2, 3, 16, 5, DType::F32);
    let imgs = forward_cycle(&bundle, &batch).unwrap();
    for t in [&imgs.syn_a, &imgs.syn_b, &imgs.cyc_a, &imgs.cyc_b] {
        assert_eq!(t.dims(), &[2, 3, 16, 16]);
    }
    let direct = bundle.g_ba.forward(&bundle.g_ab.forward(batch.a.tensor()).unwrap()).unwrap();
    let got: Vec<f32> = imgs.cyc_a.flatten_all().unwrap().to_vec1().unwrap();
    let want: Vec<f32> = direct.flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(got, want);
}
