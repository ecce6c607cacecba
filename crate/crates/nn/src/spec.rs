//! Layer-graph descriptions and shape inference.
//!
//! Activations are single-sample tensors: `[C, H, W]` for image planes and
//! `[D]` for vectors. Batching happens one level up, in the training loops.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

/// One node of a sequential layer graph.
///
/// Layer `i` consumes the output of layer `i - 1` (or the network input for
/// `i = 0`). `Concat` additionally pulls the output of an earlier layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        /// Disabled in front of normalization, which cancels any bias.
        #[serde(default = "default_bias")]
        bias: bool,
    },
    ConvTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        /// Disabled in front of normalization, which cancels any bias.
        #[serde(default = "default_bias")]
        bias: bool,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Relu,
    Tanh,
    Sigmoid,
    InstanceNorm {
        channels: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    /// Channel-wise concatenation of the running activation with the output
    /// of layer `source`.
    Concat {
        source: usize,
    },
    /// Fixed (non-learnable) `scale * x + shift`.
    Affine {
        scale: f64,
        shift: f64,
    },
}

fn default_bias() -> bool {
    true
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::ConvTranspose { .. } => "conv_transpose",
            Layer::Dense { .. } => "dense",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::Relu => "relu",
            Layer::Tanh => "tanh",
            Layer::Sigmoid => "sigmoid",
            Layer::InstanceNorm { .. } => "instance_norm",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten => "flatten",
            Layer::Concat { .. } => "concat",
            Layer::Affine { .. } => "affine",
        }
    }

    /// Shapes of the learnable tensors, weight first then bias/shift.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let mut shapes = vec![vec![out_channels, in_channels, kernel, kernel]];
                if bias {
                    shapes.push(vec![out_channels]);
                }
                shapes
            }
            Layer::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let mut shapes = vec![vec![in_channels, out_channels, kernel, kernel]];
                if bias {
                    shapes.push(vec![out_channels]);
                }
                shapes
            }
            Layer::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            Layer::InstanceNorm { channels } => vec![vec![channels], vec![channels]],
            _ => Vec::new(),
        }
    }

    /// `(fan_in, fan_out)` for layers initialized from the uniform Glorot range.
    pub(crate) fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            Layer::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | Layer::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * kernel * kernel, out_channels * kernel * kernel)),
            Layer::Dense { inputs, outputs } => Some((inputs, outputs)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub layers: Vec<Layer>,
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn conv_transpose_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let full = (size - 1) * stride + kernel;
    full.checked_sub(2 * padding).filter(|&s| s > 0)
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut spec = Self {
            input_shape,
            output_shape: Vec::new(),
            layers,
        };
        let shapes = spec.infer_shapes()?;
        spec.output_shape = shapes.last().cloned().unwrap_or_default();
        Ok(spec)
    }

    /// Activation shapes `a_0 = input, a_1, …, a_L`, validating every layer
    /// and the declared output shape.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let shapes = self.infer_shapes()?;
        let last = shapes.last().expect("input shape present");
        if *last != self.output_shape {
            return Err(NnError::ShapeMismatch {
                expected: self.output_shape.clone(),
                actual: last.clone(),
            });
        }
        Ok(shapes)
    }

    fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(NnError::Config(format!(
                "input shape {:?} must be non-empty with positive dimensions",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (idx, layer) in self.layers.iter().enumerate() {
            let fail = |message: String| NnError::LayerShape {
                layer: idx,
                kind: layer.kind(),
                message,
            };
            let current = shapes.last().expect("non-empty").clone();
            let spatial = |c: usize| -> Result<(usize, usize)> {
                match current.as_slice() {
                    [ch, h, w] if *ch == c => Ok((*h, *w)),
                    other => Err(fail(format!(
                        "expected input [{c}, H, W], found {other:?}"
                    ))),
                }
            };
            let next = match *layer {
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let (h, w) = spatial(in_channels)?;
                    if out_channels == 0 || kernel == 0 {
                        return Err(fail("zero channels or kernel".into()));
                    }
                    let ho = conv_out(h, kernel, stride, padding);
                    let wo = conv_out(w, kernel, stride, padding);
                    match (ho, wo) {
                        (Some(ho), Some(wo)) => vec![out_channels, ho, wo],
                        _ => return Err(fail(format!("kernel {kernel} does not fit {h}x{w}"))),
                    }
                }
                Layer::ConvTranspose {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => {
                    let (h, w) = spatial(in_channels)?;
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(fail("zero channels, kernel or stride".into()));
                    }
                    let ho = conv_transpose_out(h, kernel, stride, padding);
                    let wo = conv_transpose_out(w, kernel, stride, padding);
                    match (ho, wo) {
                        (Some(ho), Some(wo)) => vec![out_channels, ho, wo],
                        _ => return Err(fail("padding exceeds output extent".into())),
                    }
                }
                Layer::Dense { inputs, outputs } => {
                    if current != [inputs] {
                        return Err(fail(format!(
                            "expected input [{inputs}], found {current:?}"
                        )));
                    }
                    if outputs == 0 {
                        return Err(fail("zero outputs".into()));
                    }
                    vec![outputs]
                }
                Layer::InstanceNorm { channels } => {
                    spatial(channels)?;
                    current
                }
                Layer::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(fail(format!("rate {rate} outside [0, 1)")));
                    }
                    current
                }
                Layer::Flatten => vec![current.iter().product()],
                Layer::Concat { source } => {
                    if source >= idx {
                        return Err(fail(format!(
                            "skip source {source} must be an earlier layer"
                        )));
                    }
                    let other = &shapes[source + 1];
                    match (current.as_slice(), other.as_slice()) {
                        ([c1, h1, w1], [c2, h2, w2]) if h1 == h2 && w1 == w2 => {
                            vec![c1 + c2, *h1, *w1]
                        }
                        _ => {
                            return Err(fail(format!(
                                "skip source {source} has shape {other:?}, incompatible with {current:?}"
                            )))
                        }
                    }
                }
                Layer::LeakyRelu { .. }
                | Layer::Relu
                | Layer::Tanh
                | Layer::Sigmoid
                | Layer::Affine { .. } => current,
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Total number of learnable scalars.
    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.param_shapes())
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        spec.activation_shapes()?;
        Ok(spec)
    }
}
