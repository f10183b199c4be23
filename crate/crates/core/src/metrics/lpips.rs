//! Learned perceptual distance over pretrained convolutional features.
//!
//! The distance formula lives here; the features come from a [`FeatureProvider`].
//! [`ConvFeatureProvider`] runs a plain conv/ReLU/max-pool stack described by a
//! safetensors file, which covers the usual AlexNet- and VGG-style backbones.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::data::{to_model_range, ImageTensor, PixelRange};
use crate::error::{contract, Error, Result};

/// Source of multi-layer features and their per-channel weights.
pub trait FeatureProvider: Send + Sync {
    /// One `(count, channels, h, w)` map per tapped layer for a model-range batch.
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>>;

    /// Non-negative per-channel weights, one `(channels,)` tensor per tapped layer.
    fn layer_weights(&self) -> &[Tensor];
}

fn model_tensor(img: &ImageTensor) -> Result<Tensor> {
    let t = match img.range() {
        PixelRange::Model => img.tensor().clone(),
        PixelRange::Unit8 => to_model_range(img)?.into_tensor(),
    };
    Ok(t.to_dtype(DType::F32)?)
}

/// Unit-normalize along channels, weight the squared difference per channel,
/// average over space (and batch), sum over layers.
pub fn perceptual_distance(a: &ImageTensor, b: &ImageTensor, provider: &dyn FeatureProvider) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(contract!("perceptual distance operands differ in shape: {:?} vs {:?}", a.dims(), b.dims()));
    }
    let fa = provider.features(&model_tensor(a)?)?;
    let fb = provider.features(&model_tensor(b)?)?;
    let weights = provider.layer_weights();
    if fa.len() != weights.len() || fb.len() != weights.len() {
        return Err(contract!(
            "provider returned {} feature layers for {} weight vectors",
            fa.len(),
            weights.len()
        ));
    }
    let mut total = 0.0;
    for ((xa, xb), w) in fa.iter().zip(&fb).zip(weights) {
        let c = xa.dim(1)?;
        if w.elem_count() != c {
            return Err(contract!("layer has {c} channels but {} weights", w.elem_count()));
        }
        let na = unit_normalize(xa)?;
        let nb = unit_normalize(xb)?;
        let w = w.to_dtype(DType::F32)?.reshape((1, c, 1, 1))?;
        let d = (na - nb)?.sqr()?.broadcast_mul(&w)?.sum_keepdim(1)?.mean_all()?;
        total += f64::from(d.to_scalar::<f32>()?);
    }
    Ok(total)
}

fn unit_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(1)?.sqrt()? + 1e-10)?;
    Ok(x.broadcast_div(&norm)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub stride: usize,
    pub padding: usize,
    /// Max pooling `(kernel, stride)` applied before the convolution.
    #[serde(default)]
    pub pool: Option<(usize, usize)>,
    /// Whether this layer's ReLU output is a feature tap.
    pub tap: bool,
}

/// Structure stored under the `lpips` metadata key of a provider file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    /// Per-channel input normalization `(x − shift) / scale`.
    pub shift: Vec<f32>,
    pub scale: Vec<f32>,
    pub layers: Vec<LayerSpec>,
}

struct FeatureLayer {
    spec: LayerSpec,
    weight: Tensor,
    bias: Tensor,
}

/// Conv/ReLU feature stack with linear per-channel heads, loaded from safetensors.
///
/// Expected tensors: `<layer>.weight` `(c_out, c_in, k, k)` and `<layer>.bias`
/// `(c_out,)` for every layer, `lin<i>.weight` with `c` elements for the `i`-th tap.
pub struct ConvFeatureProvider {
    shift: Tensor,
    scale: Tensor,
    layers: Vec<FeatureLayer>,
    lin: Vec<Tensor>,
}

const METADATA_KEY: &str = "lpips";

fn view_to_tensor(view: &TensorView<'_>) -> Result<Tensor> {
    let data = view.data();
    let values: Vec<f32> = match view.dtype() {
        Dtype::F32 => data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
        other => return Err(Error::Config(format!("unsupported LPIPS weight dtype {other:?}"))),
    };
    Ok(Tensor::from_vec(values, view.shape(), &Device::Cpu)?)
}

impl ConvFeatureProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Config(format!("LPIPS weights {}: {msg}", path.display()));
        let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let spec_json = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(METADATA_KEY))
            .ok_or_else(|| bad(format!("missing `{METADATA_KEY}` metadata entry")))?;
        let spec: ProviderSpec = serde_json::from_str(spec_json).map_err(|e| bad(e.to_string()))?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
        let mut tensors = HashMap::new();
        for (name, view) in st.tensors() {
            tensors.insert(name, view_to_tensor(&view)?);
        }
        let mut take = |name: String| tensors.remove(&name).ok_or_else(|| bad(format!("missing tensor `{name}`")));

        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            layers.push(FeatureLayer {
                weight: take(format!("{}.weight", l.name))?,
                bias: take(format!("{}.bias", l.name))?,
                spec: l.clone(),
            });
        }
        let taps = spec.layers.iter().filter(|l| l.tap).count();
        let lin = (0..taps)
            .map(|i| Ok(take(format!("lin{i}.weight"))?.flatten_all()?))
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.shift, spec.scale, layers, lin).map_err(|e| bad(e.to_string()))
    }

    fn new(shift: Vec<f32>, scale: Vec<f32>, layers: Vec<FeatureLayer>, lin: Vec<Tensor>) -> Result<Self> {
        let c = shift.len();
        if scale.len() != c || scale.iter().any(|&s| s == 0.0) {
            return Err(contract!("shift and scale must have equal length and non-zero scale"));
        }
        if layers.is_empty() {
            return Err(contract!("feature stack has no layers"));
        }
        Ok(Self {
            shift: Tensor::from_vec(shift, (1, c, 1, 1), &Device::Cpu)?,
            scale: Tensor::from_vec(scale, (1, c, 1, 1), &Device::Cpu)?,
            layers,
            lin,
        })
    }

    /// Writes a provider file in the format [`ConvFeatureProvider::load`] reads.
    pub fn write(
        path: &Path,
        spec: &ProviderSpec,
        tensors: &[(String, Tensor)],
    ) -> Result<()> {
        let encoded: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
            .iter()
            .map(|(n, t)| {
                let v = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
                Ok((n.clone(), t.dims().to_vec(), v.iter().flat_map(|x| x.to_le_bytes()).collect()))
            })
            .collect::<Result<_>>()?;
        let views = encoded
            .iter()
            .map(|(n, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (n.as_str(), v))
                    .map_err(|e| contract!("{e}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = HashMap::from([(
            METADATA_KEY.to_string(),
            serde_json::to_string(spec).map_err(|e| contract!("{e}"))?,
        )]);
        let bytes = safetensors::serialize(views, Some(meta)).map_err(|e| contract!("{e}"))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

impl FeatureProvider for ConvFeatureProvider {
    fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = x.to_dtype(DType::F32)?.broadcast_sub(&self.shift)?.broadcast_div(&self.scale)?;
        let mut taps = Vec::new();
        for layer in &self.layers {
            if let Some((k, s)) = layer.spec.pool {
                h = h.max_pool2d_with_stride((k, k), (s, s))?;
            }
            let c_out = layer.bias.dim(0)?;
            h = h
                .conv2d(&layer.weight, layer.spec.padding, layer.spec.stride, 1, 1)?
                .broadcast_add(&layer.bias.reshape((1, c_out, 1, 1))?)?
                .relu()?;
            if layer.spec.tap {
                taps.push(h.clone());
            }
        }
        Ok(taps)
    }

    fn layer_weights(&self) -> &[Tensor] {
        &self.lin
    }
}
