//! Minimal dense inference engine for small CNNs.
//!
//! A [`ModelGraph`] is an ordered list of layers. Activation `a[0]` is the
//! input batch and layer `i` maps `a[i]` to `a[i + 1]`. Residual blocks are
//! expressed with [`Layer::ResidualAdd`], which adds the output of an
//! earlier layer to its input. Arbitrary DAGs are not representable.
//!
//! By convention the bundled fixtures place a ReLU after every BatchNorm.

mod backward;
mod forward;
mod im2col;
mod io;
pub(crate) mod ops;

pub use backward::{input_gradient, BnTarget};
pub(crate) use backward::loss_and_gradient;
pub use forward::{forward, BnStats, ForwardTrace};
pub(crate) use forward::{run, Hooks};
pub use im2col::{conv_via_matmul, im2col, kernel_matrix, ConvGeometry, Matrix};
pub use io::{load_model, read_f32_blob, save_model, write_f32_blob};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        weight: Tensor,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        let conv = Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        };
        conv.validate()?;
        Ok(conv)
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if self.in_channels == 0 || self.out_channels == 0 || kh == 0 || kw == 0 {
            return Err(Error::InvalidArgument("conv extents must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be positive".into()));
        }
        let expected = [self.out_channels, self.in_channels, kh, kw];
        if self.weight.shape() != expected {
            return Err(Error::Shape(format!(
                "conv weight shape {:?}, expected {expected:?}",
                self.weight.shape()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::Shape(format!(
                    "conv bias has {} entries for {} output channels",
                    b.len(),
                    self.out_channels
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        eps: f64,
    ) -> Result<Self> {
        let bn = Self {
            channels: running_mean.len(),
            running_mean,
            running_var,
            gamma,
            beta,
            eps,
        };
        bn.validate()?;
        Ok(bn)
    }

    /// Identity-initialised layer: mean 0, variance 1, unit scale, zero shift.
    pub fn identity(channels: usize) -> Self {
        Self {
            channels,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 {
            return Err(Error::InvalidArgument("batch norm needs channels".into()));
        }
        if self.running_var.len() != c || self.gamma.len() != c || self.beta.len() != c {
            return Err(Error::Shape(format!(
                "batch norm vectors must all have length {c}"
            )));
        }
        if self.running_var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "batch norm running variance must be strictly positive".into(),
            ));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidArgument("batch norm eps must be >= 0".into()));
        }
        Ok(())
    }

    /// Stored standard deviation `sqrt(running_var)`, the target of data synthesis.
    pub fn running_std(&self) -> Vec<f64> {
        self.running_var.iter().map(|v| v.sqrt()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPool {
    pub window: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl Linear {
    pub fn new(
        in_features: usize,
        out_features: usize,
        weight: Tensor,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::InvalidArgument("linear extents must be positive".into()));
        }
        if weight.shape() != [out_features, in_features] {
            return Err(Error::Shape(format!(
                "linear weight shape {:?}, expected [{out_features}, {in_features}]",
                weight.shape()
            )));
        }
        if bias.as_ref().is_some_and(|b| b.len() != out_features) {
            return Err(Error::Shape("linear bias length mismatch".into()));
        }
        Ok(Self {
            in_features,
            out_features,
            weight,
            bias,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    AvgPool(AvgPool),
    Linear(Linear),
    /// Adds the output of layer `source` to this layer's input.
    ResidualAdd { source: usize },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Relu => "relu",
            Layer::AvgPool(_) => "avg_pool",
            Layer::Linear(_) => "linear",
            Layer::ResidualAdd { .. } => "residual_add",
        }
    }

    pub fn weight(&self) -> Option<&Tensor> {
        match self {
            Layer::Conv2d(c) => Some(&c.weight),
            Layer::Linear(l) => Some(&l.weight),
            _ => None,
        }
    }

    pub(crate) fn weight_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            Layer::Conv2d(c) => Some(&mut c.weight),
            Layer::Linear(l) => Some(&mut l.weight),
            _ => None,
        }
    }

    pub fn is_quantizable(&self) -> bool {
        self.weight().is_some()
    }

    /// Weight elements subject to quantization.
    pub fn weight_count(&self) -> usize {
        self.weight().map_or(0, Tensor::len)
    }

    /// Parameters kept at full precision (biases and BatchNorm vectors).
    pub fn fixed_param_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) => c.bias.as_ref().map_or(0, Vec::len),
            Layer::Linear(l) => l.bias.as_ref().map_or(0, Vec::len),
            Layer::BatchNorm(bn) => 4 * bn.channels,
            _ => 0,
        }
    }
}

/// Full-precision model: layer list plus per-sample input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    class_count: usize,
    /// Per-sample activation shapes `a[0] ..= a[L]`.
    shapes: Vec<Vec<usize>>,
}

impl ModelGraph {
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>, class_count: usize) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model has no layers".into()));
        }
        let shapes = infer_shapes(&layers, &input_shape)?;
        let out: usize = shapes.last().map_or(0, |s| s.iter().product());
        if out != class_count {
            return Err(Error::Shape(format!(
                "model produces {out} outputs per sample but class_count is {class_count}"
            )));
        }
        Ok(Self {
            layers,
            input_shape,
            class_count,
            shapes,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Per-sample shape of the input to layer `i` (`i == len` gives the output).
    pub fn activation_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Model-layer indices of the layers carrying quantizable weights.
    pub fn quantizable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_quantizable())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn batch_norm_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::BatchNorm(_)))
            .count()
    }

    pub fn fixed_param_count(&self) -> usize {
        self.layers.iter().map(Layer::fixed_param_count).sum()
    }

    /// Returns a copy with the weight tensor of `layer` replaced.
    pub fn with_weight(&self, layer: usize, weight: Tensor) -> Result<Self> {
        let mut out = self.clone();
        let slot = out
            .layers
            .get_mut(layer)
            .and_then(Layer::weight_mut)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} has no weights")))?;
        if slot.shape() != weight.shape() {
            return Err(Error::Shape(format!(
                "replacement weight {:?} vs {:?}",
                weight.shape(),
                slot.shape()
            )));
        }
        *slot = weight;
        Ok(out)
    }

    /// Checks that `batch` is `(N, input_shape...)` with `N >= 1`.
    pub(crate) fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let shape = batch.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::Shape(format!(
                "batch shape {shape:?} does not match model input {:?}",
                self.input_shape
            )));
        }
        if shape[0] == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }
}

fn infer_shapes(layers: &[Layer], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = vec![input.to_vec()];
    for (i, layer) in layers.iter().enumerate() {
        let cur = &shapes[i];
        let next = layer_output_shape(layer, cur, i, &shapes).map_err(|e| e.at_layer(i))?;
        shapes.push(next);
    }
    Ok(shapes)
}

fn layer_output_shape(
    layer: &Layer,
    cur: &[usize],
    index: usize,
    shapes: &[Vec<usize>],
) -> Result<Vec<usize>> {
    match layer {
        Layer::Conv2d(conv) => {
            if cur.len() != 3 || cur[0] != conv.in_channels {
                return Err(Error::Shape(format!(
                    "conv expects [{}, H, W], got {cur:?}",
                    conv.in_channels
                )));
            }
            let g = ConvGeometry::new(conv, cur[1], cur[2])?;
            Ok(vec![conv.out_channels, g.out_h, g.out_w])
        }
        Layer::BatchNorm(bn) => {
            if cur.first() != Some(&bn.channels) {
                return Err(Error::Shape(format!(
                    "batch norm over {} channels got input {cur:?}",
                    bn.channels
                )));
            }
            Ok(cur.to_vec())
        }
        Layer::Relu => Ok(cur.to_vec()),
        Layer::AvgPool(p) => {
            if p.window == 0 || p.stride == 0 {
                return Err(Error::InvalidArgument("pool window and stride must be positive".into()));
            }
            if cur.len() != 3 || cur[1] < p.window || cur[2] < p.window {
                return Err(Error::Shape(format!(
                    "pool window {} does not fit input {cur:?}",
                    p.window
                )));
            }
            Ok(vec![
                cur[0],
                (cur[1] - p.window) / p.stride + 1,
                (cur[2] - p.window) / p.stride + 1,
            ])
        }
        Layer::Linear(l) => {
            let n: usize = cur.iter().product();
            if n != l.in_features {
                return Err(Error::Shape(format!(
                    "linear expects {} inputs, got {cur:?}",
                    l.in_features
                )));
            }
            Ok(vec![l.out_features])
        }
        Layer::ResidualAdd { source } => {
            if *source >= index {
                return Err(Error::InvalidArgument(format!(
                    "residual source {source} must precede layer {index}"
                )));
            }
            let src = &shapes[source + 1];
            if src.as_slice() != cur {
                return Err(Error::Shape(format!(
                    "residual source shape {src:?} differs from {cur:?}"
                )));
            }
            Ok(cur.to_vec())
        }
    }
}
