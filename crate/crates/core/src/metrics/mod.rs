//! Image quality measures and test-split reports.

mod lpips;
mod ssim;

use std::fmt::{self, Write as _};
use std::str::FromStr;

use candle_core::{DType, Tensor};
use image::RgbImage;
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lpips::{perceptual_distance, ConvFeatureProvider, FeatureProvider, LayerSpec, ProviderSpec};
pub use ssim::{ssim, ssim_planes, SsimParams};

use crate::data::{from_model_range, ImageTensor, PairedDataset, PixelRange};
use crate::error::{contract, Error, Result};
use crate::networks::{Direction, Translator};

/// Peak intensity of the 8-bit metric domain.
pub const PEAK: f64 = 255.0;

/// Mean squared difference in 0–255 units.
pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.range() != PixelRange::Unit8 || b.range() != PixelRange::Unit8 {
        return Err(contract!("mse compares Unit8 images"));
    }
    if a.dims() != b.dims() {
        return Err(contract!("mse operands differ in shape: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok(mse_values(&a.to_f64_vec()?, &b.to_f64_vec()?))
}

fn mse_values(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// `10·log10(255² / m)`, infinite for `m = 0`.
pub fn psnr_from_mse(m: f64) -> Result<f64> {
    if m.is_nan() || m < 0.0 {
        return Err(contract!("mse must be non-negative, got {m}"));
    }
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / m).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mse,
    Psnr,
    Ssim,
    Lpips,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [MetricKind::Mse, MetricKind::Psnr, MetricKind::Ssim, MetricKind::Lpips];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Psnr => "psnr",
            MetricKind::Ssim => "ssim",
            MetricKind::Lpips => "lpips",
        }
    }

    /// Parses a comma-separated list such as `mse,psnr`, keeping the canonical
    /// column order and dropping duplicates.
    pub fn parse_list(s: &str) -> Result<Vec<MetricKind>> {
        let mut kinds = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(MetricKind::from_str)
            .collect::<Result<Vec<_>>>()?;
        kinds.sort();
        kinds.dedup();
        if kinds.is_empty() {
            return Err(Error::Config("no metrics requested".into()));
        }
        Ok(kinds)
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`; valid metrics: mse, psnr, ssim, lpips")))
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub name: String,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub lpips: Option<f64>,
}

impl ImageScores {
    pub fn get(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::Mse => self.mse,
            MetricKind::Psnr => self.psnr,
            MetricKind::Ssim => self.ssim,
            MetricKind::Lpips => self.lpips,
        }
    }

    fn set(&mut self, kind: MetricKind, v: f64) {
        match kind {
            MetricKind::Mse => self.mse = Some(v),
            MetricKind::Psnr => self.psnr = Some(v),
            MetricKind::Ssim => self.ssim = Some(v),
            MetricKind::Lpips => self.lpips = Some(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub dataset: String,
    pub direction: Direction,
    /// Columns present in this report, in canonical order.
    pub metrics: Vec<MetricKind>,
    pub per_image: Vec<ImageScores>,
    pub aggregate: ImageScores,
}

fn format_value(v: Option<f64>) -> String {
    match v {
        Some(x) if x == f64::INFINITY => "inf".to_string(),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

impl MetricReport {
    /// Builds a report whose aggregate is the per-image mean of every column.
    pub fn from_scores(
        method: impl Into<String>,
        dataset: impl Into<String>,
        direction: Direction,
        metrics: Vec<MetricKind>,
        per_image: Vec<ImageScores>,
    ) -> Result<Self> {
        if per_image.is_empty() {
            return Err(contract!("a metric report needs at least one image"));
        }
        let mut aggregate = ImageScores {
            name: "AGGREGATE".into(),
            mse: None,
            psnr: None,
            ssim: None,
            lpips: None,
        };
        for &k in &metrics {
            let values: Vec<f64> = per_image.iter().filter_map(|s| s.get(k)).collect();
            if values.len() != per_image.len() {
                return Err(contract!("metric {k} is missing for some images"));
            }
            aggregate.set(k, values.iter().sum::<f64>() / values.len() as f64);
        }
        Ok(Self {
            method: method.into(),
            dataset: dataset.into(),
            direction,
            metrics,
            per_image,
            aggregate,
        })
    }

    /// `image,<metric columns>` rows followed by an `AGGREGATE` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image");
        for k in &self.metrics {
            out.push(',');
            out.push_str(k.name());
        }
        out.push('\n');
        for row in self.per_image.iter().chain(std::iter::once(&self.aggregate)) {
            out.push_str(&row.name);
            for &k in &self.metrics {
                out.push(',');
                out.push_str(&format_value(row.get(k)));
            }
            out.push('\n');
        }
        out
    }
}

/// Markdown table with one row per report, columns SSIM | MSE | PSNR | LPIPS.
/// Metrics absent from a report are shown as `-`.
pub fn markdown_table(reports: &[MetricReport]) -> String {
    let cols = [MetricKind::Ssim, MetricKind::Mse, MetricKind::Psnr, MetricKind::Lpips];
    let mut out = String::from("| Method | Dataset | Direction | SSIM | MSE | PSNR | LPIPS |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for r in reports {
        let _ = write!(out, "| {} | {} | {} |", r.method, r.dataset, r.direction);
        for k in cols {
            let cell = match r.aggregate.get(k) {
                Some(v) if v.is_infinite() => "inf".to_string(),
                Some(v) => format!("{v:.4}"),
                None => "-".to_string(),
            };
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub method: String,
    pub direction: Direction,
    pub metrics: Vec<MetricKind>,
    pub dtype: DType,
}

fn rgb_tensor(img: &RgbImage) -> Result<ImageTensor> {
    ImageTensor::from_rgb(&[img], DType::F64)
}

fn score_pair(
    name: &str,
    generated: &RgbImage,
    truth: &RgbImage,
    metrics: &[MetricKind],
    provider: Option<&dyn FeatureProvider>,
) -> Result<ImageScores> {
    let g = rgb_tensor(generated)?;
    let t = rgb_tensor(truth)?;
    let mut scores = ImageScores {
        name: name.to_string(),
        mse: None,
        psnr: None,
        ssim: None,
        lpips: None,
    };
    let mut m = None;
    for &k in metrics {
        let v = match k {
            MetricKind::Mse => *m.get_or_insert(mse(&g, &t)?),
            MetricKind::Psnr => psnr_from_mse(*m.get_or_insert(mse(&g, &t)?))?,
            MetricKind::Ssim => ssim(&g, &t, &SsimParams::default())?,
            MetricKind::Lpips => match provider {
                Some(p) => perceptual_distance(&g, &t, p)?,
                None => continue,
            },
        };
        scores.set(k, v);
    }
    Ok(scores)
}

fn with_name(name: &str, e: Error) -> Error {
    match e {
        Error::Contract(m) => Error::Contract(format!("image `{name}`: {m}")),
        Error::Numeric { term, iteration } => Error::Numeric {
            term: format!("{term} (image `{name}`)"),
            iteration,
        },
        Error::Backend(b) => Error::Contract(format!("image `{name}`: {b}")),
        other => other,
    }
}

/// Translates every pair of `ds` in `spec.direction` and scores the output against
/// the ground truth of the target domain.
///
/// Generation runs sequentially, scoring runs in parallel; rows keep dataset order.
/// LPIPS without a provider is dropped from the report with a warning.
pub fn evaluate_dataset(
    generator: &dyn Translator,
    ds: &PairedDataset,
    spec: &EvalSpec,
    provider: Option<&(dyn FeatureProvider + 'static)>,
) -> Result<MetricReport> {
    let mut metrics = spec.metrics.clone();
    metrics.sort();
    metrics.dedup();
    if metrics.contains(&MetricKind::Lpips) && provider.is_none() {
        warn!("no perceptual feature provider configured; LPIPS is reported as unavailable");
        metrics.retain(|&k| k != MetricKind::Lpips);
    }
    if metrics.is_empty() {
        return Err(Error::Config("no computable metrics requested".into()));
    }

    let mut generated = Vec::with_capacity(ds.len());
    for (i, pair) in ds.pairs().iter().enumerate() {
        let out = translate_pair(generator, ds, i, spec).map_err(|e| with_name(&pair.name, e))?;
        generated.push(out);
    }

    let per_image = ds
        .pairs()
        .par_iter()
        .zip(generated.par_iter())
        .map(|(pair, img)| {
            let truth = match spec.direction {
                Direction::AToB => &pair.b,
                Direction::BToA => &pair.a,
            };
            score_pair(&pair.name, img, truth, &metrics, provider).map_err(|e| with_name(&pair.name, e))
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_scores(&spec.method, ds.name(), spec.direction, metrics, per_image)
}

fn translate_pair(generator: &dyn Translator, ds: &PairedDataset, i: usize, spec: &EvalSpec) -> Result<RgbImage> {
    let batch = ds.batch_of(&[i], spec.dtype)?;
    let input = match spec.direction {
        Direction::AToB => batch.a,
        Direction::BToA => batch.b,
    };
    let out = generator.translate(input.tensor())?;
    if out.dims() != input.dims() {
        return Err(contract!("generator changed the shape {:?} to {:?}", input.dims(), out.dims()));
    }
    ensure_finite(&out)?;
    let out = ImageTensor::new(out.clamp(-1f64, 1f64)?, PixelRange::Model)?;
    let mut images = from_model_range(&out)?.to_rgb()?;
    Ok(images.remove(0))
}

fn ensure_finite(t: &Tensor) -> Result<()> {
    let s = t.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    if !s.is_finite() {
        return Err(Error::Numeric {
            term: "generator output".into(),
            iteration: 0,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn constant(v: f32, h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(Tensor::full(v, (1, 3, h, w), &Device::Cpu).unwrap(), PixelRange::Unit8).unwrap()
    }

    #[test]
    fn mse_closed_forms() {
        assert_eq!(mse(&constant(7.0, 4, 4), &constant(7.0, 4, 4)).unwrap(), 0.0);
        assert_eq!(mse(&constant(0.0, 4, 4), &constant(255.0, 4, 4)).unwrap(), 65025.0);
        let board: Vec<f32> = (0..3 * 16).map(|i| if (i % 4 + i / 4) % 2 == 0 { 0.0 } else { 255.0 }).collect();
        let inv: Vec<f32> = board.iter().map(|v| 255.0 - v).collect();
        let t = |v: Vec<f32>| {
            ImageTensor::new(Tensor::from_vec(v, (1, 3, 4, 4), &Device::Cpu).unwrap(), PixelRange::Unit8).unwrap()
        };
        assert_eq!(mse(&t(board), &t(inv)).unwrap(), 65025.0);
        assert!(mse(&constant(0.0, 4, 4), &constant(0.0, 4, 5)).is_err());
    }

    #[test]
    fn psnr_closed_forms() {
        assert_eq!(psnr_from_mse(65025.0).unwrap(), 0.0);
        assert!((psnr_from_mse(650.25).unwrap() - 20.0).abs() < 1e-12);
        assert!((psnr_from_mse(84.7971).unwrap() - 28.8475).abs() < 1e-3);
        assert_eq!(psnr_from_mse(0.0).unwrap(), f64::INFINITY);
        assert!(psnr_from_mse(-1.0).is_err());
    }

    #[test]
    fn ssim_closed_forms() {
        let p = SsimParams::default();
        let x = constant(90.0, 16, 16);
        assert!((ssim(&x, &x, &p).unwrap() - 1.0).abs() < 1e-12);
        let c1 = p.c1();
        let got = ssim(&constant(0.0, 16, 16), &constant(255.0, 16, 16), &p).unwrap();
        assert!((got - c1 / (255.0f64.powi(2) + c1)).abs() < 1e-8);
    }

    #[test]
    fn metric_list_parsing() {
        assert_eq!(MetricKind::parse_list("psnr, mse").unwrap(), vec![MetricKind::Mse, MetricKind::Psnr]);
        assert!(MetricKind::parse_list("mse,fid").is_err());
        assert!(MetricKind::parse_list("").is_err());
    }

    #[test]
    fn csv_and_aggregate() {
        let rows = vec![
            ImageScores { name: "a".into(), mse: Some(1.0), psnr: Some(f64::INFINITY), ssim: None, lpips: None },
            ImageScores { name: "b".into(), mse: Some(3.0), psnr: Some(10.0), ssim: None, lpips: None },
        ];
        let r = MetricReport::from_scores("m", "d", Direction::AToB, vec![MetricKind::Mse, MetricKind::Psnr], rows)
            .unwrap();
        assert_eq!(r.aggregate.mse, Some(2.0));
        assert_eq!(r.to_csv(), "image,mse,psnr\na,1,inf\nb,3,10\nAGGREGATE,2,inf\n");
        assert!(markdown_table(&[r]).contains("| m | d | a2b | - | 2.0000 | inf | - |"));
    }
}
