//! Small feed-forward classifiers built from convolutions and fully
//! connected layers, each followed by ReLU except the last.

use std::fmt;
use std::str::FromStr;

use rand::RngExt;

use crate::error::{Error, Result};
use crate::feather::PruneLayerState;
use crate::rng::{stream_rng, STREAM_INIT};
use crate::tensor::{Tape, Tensor, Var};
use crate::thresholding::{threshold_scalar, ThresholdOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
}

impl LayerSpec {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerSpec::Linear { inputs, outputs } => vec![inputs, outputs],
            LayerSpec::Conv2d {
                in_channels,
                filters,
                kernel,
                ..
            } => vec![filters, in_channels, kernel, kernel],
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            LayerSpec::Linear { outputs, .. } => outputs,
            LayerSpec::Conv2d { filters, .. } => filters,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Linear { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. })
    }
}

/// Network layout. Text form:
///
/// * `mlp:784-300-100-10`
/// * `cnn:1x8x8:conv4k3s1p1,conv8k3s2p1,fc10` (input CxHxW, then layers)
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

/// Per-sample activation shapes around one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerGeometry {
    pub spec: LayerSpec,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl Architecture {
    pub fn mlp(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::contract(format!("invalid MLP widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| LayerSpec::Linear {
                inputs: w[0],
                outputs: w[1],
            })
            .collect();
        Ok(Self {
            input_shape: vec![widths[0]],
            layers,
        })
    }

    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let arch = Self {
            input_shape,
            layers,
        };
        arch.geometry()?;
        Ok(arch)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs())
    }

    /// Walks the layers and checks that consecutive shapes line up.
    pub fn geometry(&self) -> Result<Vec<LayerGeometry>> {
        if self.layers.is_empty() || self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::contract("architecture needs an input shape and layers"));
        }
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            let next = layer_output(&shape, spec)?;
            out.push(LayerGeometry {
                spec: *spec,
                input: shape,
                output: next.clone(),
            });
            shape = next;
        }
        if shape.len() != 1 {
            return Err(Error::contract("the last layer must be fully connected"));
        }
        Ok(out)
    }
}

/// Per-sample output shape of `spec` applied to `shape`.
fn layer_output(shape: &[usize], spec: &LayerSpec) -> Result<Vec<usize>> {
    let mismatch = || Error::Dimension {
        op: if spec.is_conv() { "conv layer" } else { "linear layer" },
        lhs: shape.to_vec(),
        rhs: spec.weight_shape(),
    };
    match *spec {
        LayerSpec::Linear { inputs, outputs } => {
            if shape.iter().product::<usize>() != inputs || outputs == 0 {
                return Err(mismatch());
            }
            Ok(vec![outputs])
        }
        LayerSpec::Conv2d {
            in_channels,
            filters,
            kernel,
            stride,
            padding,
        } => {
            if shape.len() != 3
                || shape[0] != in_channels
                || filters == 0
                || kernel == 0
                || stride == 0
                || kernel > shape[1] + 2 * padding
                || kernel > shape[2] + 2 * padding
            {
                return Err(mismatch());
            }
            Ok(vec![
                filters,
                (shape[1] + 2 * padding - kernel) / stride + 1,
                (shape[2] + 2 * padding - kernel) / stride + 1,
            ])
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.layers.iter().all(|l| !l.is_conv()) && self.input_shape.len() == 1 {
            write!(f, "mlp:{}", self.input_shape[0])?;
            for l in &self.layers {
                write!(f, "-{}", l.outputs())?;
            }
            return Ok(());
        }
        let dims: Vec<String> = self.input_shape.iter().map(|d| d.to_string()).collect();
        write!(f, "cnn:{}:", dims.join("x"))?;
        let layers: Vec<String> = self
            .layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Linear { outputs, .. } => format!("fc{outputs}"),
                LayerSpec::Conv2d {
                    filters,
                    kernel,
                    stride,
                    padding,
                    ..
                } => format!("conv{filters}k{kernel}s{stride}p{padding}"),
            })
            .collect();
        f.write_str(&layers.join(","))
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::contract(format!("cannot parse architecture {s:?}"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("mlp:") {
            let widths = rest.split('-').map(num).collect::<Result<Vec<_>>>()?;
            return Architecture::mlp(&widths);
        }
        let rest = s.strip_prefix("cnn:").ok_or_else(bad)?;
        let (input, layers) = rest.split_once(':').ok_or_else(bad)?;
        let input_shape = input.split('x').map(num).collect::<Result<Vec<_>>>()?;
        let mut shape = input_shape.clone();
        let mut specs = Vec::new();
        for token in layers.split(',') {
            let token = token.trim();
            let spec = if let Some(fc) = token.strip_prefix("fc") {
                LayerSpec::Linear {
                    inputs: shape.iter().product(),
                    outputs: num(fc)?,
                }
            } else if let Some(conv) = token.strip_prefix("conv") {
                let (filters, rest) = conv.split_once('k').ok_or_else(bad)?;
                let (kernel, rest) = rest.split_once('s').ok_or_else(bad)?;
                let (stride, padding) = rest.split_once('p').ok_or_else(bad)?;
                LayerSpec::Conv2d {
                    in_channels: *shape.first().ok_or_else(bad)?,
                    filters: num(filters)?,
                    kernel: num(kernel)?,
                    stride: num(stride)?,
                    padding: num(padding)?,
                }
            } else {
                return Err(bad());
            };
            shape = layer_output(&shape, &spec)?;
            specs.push(spec);
        }
        Architecture::new(input_shape, specs)
    }
}

/// Tape handles for one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerParams {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Debug)]
pub struct Model {
    arch: Architecture,
    pub layers: Vec<PruneLayerState>,
    pub biases: Vec<Tensor>,
}

impl Model {
    /// He-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`) and zero biases.
    pub fn init(arch: Architecture, operator: ThresholdOperator, seed: u64) -> Result<Self> {
        arch.geometry()?;
        let mut rng = stream_rng(seed, STREAM_INIT);
        let mut layers = Vec::with_capacity(arch.layers.len());
        let mut biases = Vec::with_capacity(arch.layers.len());
        for (i, spec) in arch.layers.iter().enumerate() {
            let shape = spec.weight_shape();
            let numel: usize = shape.iter().product();
            let bound = (6.0 / spec.fan_in() as f64).sqrt() as f32;
            let data = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
            let name = layer_name(i, spec);
            layers.push(PruneLayerState::new(name, Tensor::new(shape, data)?, operator, spec.is_conv()));
            biases.push(Tensor::zeros(vec![spec.outputs()])?.requires_grad(true));
        }
        Ok(Self {
            arch,
            layers,
            biases,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn prunable_params(&self) -> usize {
        self.layers.iter().filter(|l| l.prunable).map(|l| l.weights.numel()).sum()
    }

    /// Runs the network on `input [B, ...input_shape]` using the given
    /// parameter handles.
    pub fn forward(&self, tape: &mut Tape, input: Var, params: &[LayerParams]) -> Result<Var> {
        if params.len() != self.arch.layers.len() {
            return Err(Error::contract(format!(
                "expected {} parameter sets, got {}",
                self.arch.layers.len(),
                params.len()
            )));
        }
        let batch = tape.value(input).shape()[0];
        let mut x = input;
        let last = self.arch.layers.len() - 1;
        for (i, (spec, p)) in self.arch.layers.iter().zip(params).enumerate() {
            x = match *spec {
                LayerSpec::Linear { inputs, .. } => {
                    if tape.value(x).shape().len() != 2 {
                        x = tape.reshape(x, vec![batch, inputs])?;
                    }
                    tape.matmul(x, p.weight)?
                }
                LayerSpec::Conv2d { stride, padding, .. } => tape.conv2d(x, p.weight, stride, padding)?,
            };
            x = tape.add_bias(x, p.bias)?;
            if i != last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Registers dense weights and biases as trainable leaves.
    pub fn dense_params(&self, tape: &mut Tape) -> Vec<LayerParams> {
        self.layers
            .iter()
            .zip(&self.biases)
            .map(|(l, b)| LayerParams {
                weight: tape.param(l.weights.clone()),
                bias: tape.param(b.clone()),
            })
            .collect()
    }

    /// Registers thresholded weights as constants, without touching the
    /// layers' stored masks. Layers without a threshold are used densely.
    pub fn sparse_params(&self, tape: &mut Tape) -> Vec<LayerParams> {
        self.layers
            .iter()
            .zip(&self.biases)
            .map(|(l, b)| {
                let weights = match (l.prunable, l.threshold()) {
                    (true, Some(t)) => {
                        let data = l.weights.data().iter().map(|&w| threshold_scalar(w, t, l.operator)).collect();
                        Tensor::from_parts(l.weights.shape().to_vec(), data)
                    }
                    _ => l.weights.clone().requires_grad(false),
                };
                LayerParams {
                    weight: tape.leaf(weights),
                    bias: tape.leaf(b.clone().requires_grad(false)),
                }
            })
            .collect()
    }

    /// Current survivor masks, one per layer.
    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.layers.iter().map(|l| l.current_mask()).collect()
    }

    pub fn weight_norms(&self) -> Vec<(String, f32)> {
        self.layers.iter().map(|l| (l.name.clone(), l.weights.norm())).collect()
    }
}

fn layer_name(index: usize, spec: &LayerSpec) -> String {
    match spec {
        LayerSpec::Linear { .. } => format!("fc{index}"),
        LayerSpec::Conv2d { .. } => format!("conv{index}"),
    }
}
