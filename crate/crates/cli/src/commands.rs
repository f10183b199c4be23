use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use csgan::data::resize_square;
use csgan::metrics::{evaluate_dataset, markdown_table, ConvFeatureProvider, EvalSpec, FeatureProvider, MetricKind};
use csgan::trainer::{load_checkpoint, Checkpoint, TrainConfig};
use csgan::{
    from_model_range, load_paired_dataset_with, to_model_range, Direction, Identity, ImageTensor,
    ModelBundle, PairedDataset, PixelRange, Split, Translator,
};
use image::RgbImage;
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toml::Value;

use crate::config::{self, Loaded, RunConfig};
use crate::grid::compose_grid;
use crate::{CliError, CommonArgs, EvalArgs, GridArgs, InferArgs, TrainArgs};

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(csgan::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn overrides(c: &CommonArgs) -> Vec<(&'static str, Value)> {
    let mut o: Vec<(&'static str, Value)> = Vec::new();
    let path = |p: &PathBuf| Value::String(p.to_string_lossy().into_owned());
    if let Some(v) = &c.method {
        o.push(("method", Value::String(v.clone())));
    }
    if let Some(v) = &c.dataset_root {
        o.push(("dataset.root", path(v)));
    }
    if let Some(v) = &c.layout {
        o.push(("dataset.layout", Value::String(v.clone())));
    }
    if let Some(v) = c.image_size {
        o.push(("dataset.image_size", Value::Integer(v)));
    }
    if let Some(v) = c.epochs {
        o.push(("train.epochs", Value::Integer(v)));
    }
    if let Some(v) = c.batch_size {
        o.push(("train.batch_size", Value::Integer(v)));
    }
    if let Some(v) = c.lr {
        o.push(("train.lr", Value::Float(v)));
    }
    if let Some(v) = c.seed {
        o.push(("train.seed", Value::Integer(v)));
    }
    if let Some(v) = c.lambda {
        o.push(("loss.lambda_a", Value::Float(v)));
        o.push(("loss.lambda_b", Value::Float(v)));
    }
    if let Some(v) = c.mu {
        o.push(("loss.mu_a", Value::Float(v)));
        o.push(("loss.mu_b", Value::Float(v)));
    }
    if let Some(v) = &c.metrics {
        o.push(("eval.metrics", Value::String(v.clone())));
    }
    if let Some(v) = &c.direction {
        o.push(("eval.direction", Value::String(v.clone())));
    }
    o
}

fn load_config(c: &CommonArgs) -> Result<Loaded, CliError> {
    if let Some(p) = &c.config {
        if !p.is_file() {
            return Err(io_err(p, std::io::Error::new(std::io::ErrorKind::NotFound, "config file not found")));
        }
    }
    config::load(c.config.as_deref(), &overrides(c))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn load_split(cfg: &RunConfig, split: Split, image_size: usize) -> Result<PairedDataset, CliError> {
    let mut opts = cfg.dataset_options()?;
    opts.image_size = image_size;
    // flipping is a training augmentation only
    if split == Split::Test {
        opts.flip = false;
    }
    Ok(load_paired_dataset_with(cfg.dataset_root()?, split, &opts)?)
}

fn dataset_label(cfg: &RunConfig, ds: &PairedDataset) -> String {
    cfg.dataset.name.clone().unwrap_or_else(|| ds.name().to_string())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let loaded = load_config(&a.common)?;
    let cfg = loaded.config.resolved()?;
    let train_cfg = cfg.train_config()?;
    let ds = load_split(&cfg, Split::Train, cfg.dataset.image_size)?;
    let out = cfg.output_dir(a.common.out.as_deref());
    create_dir(&out)?;
    write_file(&out.join("resolved_config.toml"), cfg.to_toml())?;
    info!(
        "training {} on {} pairs of {} for {} epochs",
        train_cfg.objective.method,
        ds.len(),
        dataset_label(&cfg, &ds),
        train_cfg.epochs_total
    );
    let summary = csgan::trainer::train(&train_cfg, &ds, &out)?;
    println!("steps: {}", summary.steps);
    if let Some(last) = &summary.last {
        println!("final total_G: {}  total_D: {}", last.total_g, last.total_d);
    }
    for c in &summary.checkpoints {
        println!("checkpoint: {}", c.display());
    }
    println!("loss log: {}", out.join("loss.csv").display());
    Ok(())
}

fn touches_model(explicit: &std::collections::BTreeSet<String>) -> bool {
    explicit.iter().any(|k| k.starts_with("model.") || k == "dataset.image_size")
}

/// Loads a checkpoint and, when the user configured an architecture, checks it matches.
fn open_checkpoint(path: &Path, loaded: &Loaded) -> Result<Checkpoint, CliError> {
    let ckpt = load_checkpoint(path)?;
    if touches_model(&loaded.explicit) {
        let want = TrainConfig::new(ckpt.config.objective.clone(), loaded.config.model_config()?).model;
        ckpt.ensure_model(&want)?;
    }
    Ok(ckpt)
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let loaded = load_config(&a.common)?;
    let cfg = &loaded.config;
    let direction = cfg.direction()?;
    let metrics = cfg.metrics()?;

    let (bundle, method, image_size, dtype) = match &a.checkpoint {
        Some(path) => {
            let ckpt = open_checkpoint(path, &loaded)?;
            let m = &ckpt.config.model;
            let size = m.generator.image_size;
            (
                Some(ckpt.bundle()?),
                ckpt.config.objective.method.display_name().to_string(),
                size,
                m.precision.dtype(),
            )
        }
        None => (None, "Identity".to_string(), cfg.dataset.image_size, DType::F32),
    };
    let ds = load_split(cfg, Split::Test, image_size)?;

    let provider: Option<Box<dyn FeatureProvider>> = match (&cfg.lpips.weights, metrics.contains(&MetricKind::Lpips)) {
        (Some(path), true) => Some(Box::new(ConvFeatureProvider::load(path)?)),
        _ => None,
    };
    let spec = EvalSpec {
        method,
        direction,
        metrics,
        dtype,
    };
    let generator: &dyn Translator = match &bundle {
        Some(b) => b.generator(direction),
        None => &Identity,
    };
    let mut report = evaluate_dataset(generator, &ds, &spec, provider.as_deref())?;
    report.dataset = dataset_label(cfg, &ds);

    let out = cfg.output_dir(a.common.out.as_deref());
    create_dir(&out)?;
    let stem = format!("eval_{direction}");
    let csv = out.join(format!("{stem}.csv"));
    let md = out.join(format!("{stem}.md"));
    write_file(&csv, report.to_csv())?;
    let table = markdown_table(std::slice::from_ref(&report));
    write_file(&md, &table)?;
    print!("{table}");
    println!("per-image report: {}", csv.display());
    Ok(())
}

fn open_rgb(path: &Path) -> Result<RgbImage, CliError> {
    let img = image::open(path).map_err(|source| {
        CliError::Core(csgan::Error::Image {
            path: path.to_path_buf(),
            source,
        })
    })?;
    Ok(img.to_rgb8())
}

fn save_png(img: &RgbImage, path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    img.save(path).map_err(|source| {
        CliError::Core(csgan::Error::Image {
            path: path.to_path_buf(),
            source,
        })
    })
}

/// Runs `generator` on 8-bit images and returns 8-bit results.
fn translate_images(generator: &dyn Translator, images: &[&RgbImage], dtype: DType) -> Result<Vec<RgbImage>, CliError> {
    let input = to_model_range(&ImageTensor::from_rgb(images, dtype)?)?;
    let out = generator.translate(input.tensor())?;
    let out = ImageTensor::new(out.clamp(-1f64, 1f64).map_err(csgan::Error::from)?, PixelRange::Model)?;
    Ok(from_model_range(&out)?.to_rgb()?)
}

pub fn infer(a: &InferArgs) -> Result<(), CliError> {
    let loaded = load_config(&a.common)?;
    let direction = loaded.config.direction()?;
    let ckpt = open_checkpoint(&a.checkpoint, &loaded)?;
    let bundle = ckpt.bundle()?;
    let size = ckpt.config.model.generator.image_size;
    let img = open_rgb(&a.input)?;
    let img = if img.dimensions() == (size as u32, size as u32) {
        img
    } else {
        resize_square(&img, size as u32)
    };
    let out_img = translate_images(bundle.generator(direction), &[&img], ckpt.config.model.precision.dtype())?
        .remove(0);

    let out = match &a.common.out {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) => p.clone(),
        flag => {
            let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
            loaded.config.output_dir(flag.as_deref()).join(format!("{stem}_{direction}.png"))
        }
    };
    save_png(&out_img, &out)?;
    println!("{}", out.display());
    Ok(())
}

/// First `n` pairs in name order, or a seeded shuffle when `seed` is given.
pub fn select_samples(ds: &PairedDataset, n: usize, seed: Option<u64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&x, &y| ds.pairs()[x].name.cmp(&ds.pairs()[y].name));
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    if n > order.len() {
        warn!("requested {n} samples but the test split has {}; using all", order.len());
    }
    order.truncate(n);
    order
}

pub fn grid(a: &GridArgs) -> Result<(), CliError> {
    if a.checkpoint.is_empty() {
        return Err(CliError::Usage("grid needs at least one --checkpoint".into()));
    }
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let loaded = load_config(&a.common)?;
    let cfg = &loaded.config;
    let direction = cfg.direction()?;
    let mut models: Vec<(ModelBundle, DType)> = Vec::new();
    let mut size = None;
    for path in &a.checkpoint {
        let ckpt = open_checkpoint(path, &loaded)?;
        let s = ckpt.config.model.generator.image_size;
        if *size.get_or_insert(s) != s {
            return Err(CliError::Core(csgan::Error::Incompatible(format!(
                "{} works at {s}px, earlier checkpoints at {}px",
                path.display(),
                size.unwrap()
            ))));
        }
        models.push((ckpt.bundle()?, ckpt.config.model.precision.dtype()));
    }
    let size = size.expect("at least one checkpoint");
    let ds = load_split(cfg, Split::Test, size)?;
    let seed = a.common.seed.map(|s| s as u64);
    let picks = select_samples(&ds, a.samples, seed);

    let (inputs, truths): (Vec<&RgbImage>, Vec<&RgbImage>) = picks
        .iter()
        .map(|&i| {
            let p = &ds.pairs()[i];
            match direction {
                Direction::AToB => (&p.a, &p.b),
                Direction::BToA => (&p.b, &p.a),
            }
        })
        .unzip();
    let mut columns: Vec<Vec<RgbImage>> = vec![
        inputs.iter().map(|&i| i.clone()).collect(),
        truths.iter().map(|&i| i.clone()).collect(),
    ];
    for (bundle, dtype) in &models {
        let mut col = Vec::with_capacity(inputs.len());
        for img in &inputs {
            col.extend(translate_images(bundle.generator(direction), &[img], *dtype)?);
        }
        columns.push(col);
    }
    let rows: Vec<Vec<RgbImage>> = (0..inputs.len())
        .map(|r| columns.iter().map(|c| c[r].clone()).collect())
        .collect();
    let grid = compose_grid(&rows).map_err(CliError::Core)?;

    let out = match &a.common.out {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) => p.clone(),
        flag => cfg.output_dir(flag.as_deref()).join(format!("grid_{direction}.png")),
    };
    save_png(&grid, &out)?;
    println!("{} ({} rows x {} columns)", out.display(), rows.len(), columns.len());
    Ok(())
}
