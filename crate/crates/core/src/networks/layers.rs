//! Building blocks shared by the generator and discriminator.

use candle_core::{DType, Device, Tensor, Var};

use crate::error::{contract, Result};

/// Role of a trainable tensor, which decides how it is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Kernel,
    Bias,
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub var: Var,
}

/// Anything holding trainable parameters, listed in a stable order.
pub trait Module {
    fn parameters(&self) -> Vec<Parameter>;
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    name: String,
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// Zero-initialized convolution with a `(c_out, c_in, k, k)` kernel.
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dtype: DType,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            weight: Var::zeros((c_out, c_in, kernel, kernel), dtype, &Device::Cpu)?,
            bias: Var::zeros(c_out, dtype, &Device::Cpu)?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c_out = self.bias.dim(0)?;
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, c_out, 1, 1))?)?)
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }
}

impl Module for Conv2d {
    fn parameters(&self) -> Vec<Parameter> {
        vec![
            Parameter {
                name: format!("{}.weight", self.name),
                kind: ParamKind::Kernel,
                var: self.weight.clone(),
            },
            Parameter {
                name: format!("{}.bias", self.name),
                kind: ParamKind::Bias,
                var: self.bias.clone(),
            },
        ]
    }
}

/// Transposed convolution with a `(c_in, c_out, k, k)` kernel.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    name: String,
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    output_padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        dtype: DType,
    ) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            weight: Var::zeros((c_in, c_out, kernel, kernel), dtype, &Device::Cpu)?,
            bias: Var::zeros(c_out, dtype, &Device::Cpu)?,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c_out = self.bias.dim(0)?;
        let y = x.conv_transpose2d(
            self.weight.as_tensor(),
            self.padding,
            self.output_padding,
            self.stride,
            1,
        )?;
        Ok(y.broadcast_add(&self.bias.as_tensor().reshape((1, c_out, 1, 1))?)?)
    }
}

impl Module for ConvTranspose2d {
    fn parameters(&self) -> Vec<Parameter> {
        vec![
            Parameter {
                name: format!("{}.weight", self.name),
                kind: ParamKind::Kernel,
                var: self.weight.clone(),
            },
            Parameter {
                name: format!("{}.bias", self.name),
                kind: ParamKind::Bias,
                var: self.bias.clone(),
            },
        ]
    }
}

/// Source indices for reflecting `pad` samples on each side of an axis of length `n`
/// (edge sample not repeated).
fn reflect_indices(n: usize, pad: usize) -> Vec<u32> {
    let left = (1..=pad).rev();
    let right = (n - 1 - pad..n - 1).rev();
    left.chain(0..n).chain(right).map(|i| i as u32).collect()
}

/// Reflection padding of the two spatial axes of an NCHW tensor.
pub fn reflect_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    if h <= pad || w <= pad {
        return Err(contract!(
            "reflection padding {pad} needs spatial size > {pad}, got {h}x{w}"
        ));
    }
    let rows = Tensor::new(reflect_indices(h, pad).as_slice(), x.device())?;
    let cols = Tensor::new(reflect_indices(w, pad).as_slice(), x.device())?;
    Ok(x.index_select(&rows, 2)?.index_select(&cols, 3)?)
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization over the spatial axes; no affine parameters
/// and no running statistics.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    let denom = (var + INSTANCE_NORM_EPS)?.sqrt()?;
    Ok(centered.broadcast_div(&denom)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Spatial output length of a convolution: `floor((n + 2p − k) / s) + 1`.
pub fn conv_output_size(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (n + 2 * padding)
        .checked_sub(kernel)
        .map(|span| span / stride + 1)
}
