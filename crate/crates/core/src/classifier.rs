//! Model loading, forward inference and k-of-N alarm aggregation.
//!
//! A model is a JSON manifest plus a blob of little-endian `f32` weights. The
//! blob holds each parameterised layer in order: convolution weights in
//! `[ky][kx][in][out]` order followed by the biases, dense weights row-major
//! `outputs x inputs` followed by the biases.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{to_tensor, Frame};
use crate::tensor::{self, Kernel, Tensor, TensorError};

pub const DEFAULT_CLASS_LABELS: [&str; 2] = ["normal", "crime"];
pub const CRIME_LABEL: &str = "crime";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("unknown layer kind {kind:?} at layer {index}")]
    UnknownLayer { index: usize, kind: String },
    #[error("shape chain broken at layer {index} ({layer}): {reason}")]
    ShapeChain {
        index: usize,
        layer: &'static str,
        reason: String,
    },
    #[error("weight blob holds {actual_bytes} bytes but manifest declares {declared} parameters ({} bytes)", declared * 4)]
    WeightCount { declared: u64, actual_bytes: usize },
    #[error("manifest declares {declared} parameters but layers imply {implied}")]
    ParameterCount { declared: u64, implied: u64 },
    #[error("weight checksum mismatch: manifest {expected:08x}, blob {actual:08x}")]
    Checksum { expected: u32, actual: u32 },
    #[error("{0} class labels but the final layer produces {1} outputs")]
    LabelCount(usize, usize),
    #[error("input shape {actual:?} does not match model input {expected:?}")]
    InputShape {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map {
        height: usize,
        width: usize,
        channels: usize,
    },
    Vector(usize),
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Map {
                height,
                width,
                channels,
            } => write!(f, "{height}x{width}x{channels}"),
            Shape::Vector(n) => write!(f, "[{n}]"),
        }
    }
}

/// Grid geometry for models whose output is a detection grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "C")]
    pub c: usize,
}

impl GridShape {
    pub fn value_count(&self) -> usize {
        self.s * self.s * (self.b * 5 + self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv { kernel: Kernel, stride: usize },
    MaxPool { ph: usize, pw: usize },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::Softmax => "softmax",
        }
    }

    pub fn dense(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(TensorError::Dimension(format!(
                "dense {inputs}->{outputs} given {} weights and {} biases",
                weights.len(),
                bias.len()
            ))
            .into());
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                what: "dense parameters",
                index: 0,
            }
            .into());
        }
        Ok(Layer::Dense {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn parameter_count(&self) -> u64 {
        match self {
            Layer::Conv { kernel, .. } => {
                (kernel.weights().len() + kernel.bias().len()) as u64
            }
            Layer::Dense { weights, bias, .. } => (weights.len() + bias.len()) as u64,
            _ => 0,
        }
    }

    /// Shape produced by this layer for `input`, or the reason it cannot apply.
    fn output_shape(&self, input: Shape) -> Result<Shape, String> {
        match (self, input) {
            (
                Layer::Conv { kernel, stride },
                Shape::Map {
                    height,
                    width,
                    channels,
                },
            ) => {
                if *stride == 0 {
                    return Err("stride must be at least 1".into());
                }
                if kernel.in_channels() != channels {
                    return Err(format!(
                        "kernel expects {} channels, input has {channels}",
                        kernel.in_channels()
                    ));
                }
                if kernel.kh() > height || kernel.kw() > width {
                    return Err(format!(
                        "kernel {}x{} larger than input {height}x{width}",
                        kernel.kh(),
                        kernel.kw()
                    ));
                }
                Ok(Shape::Map {
                    height: tensor::conv_output_dim(height, kernel.kh(), *stride),
                    width: tensor::conv_output_dim(width, kernel.kw(), *stride),
                    channels: kernel.out_channels(),
                })
            }
            (
                Layer::MaxPool { ph, pw },
                Shape::Map {
                    height,
                    width,
                    channels,
                },
            ) => {
                if *ph == 0 || *pw == 0 || *ph > height || *pw > width {
                    return Err(format!("window {ph}x{pw} invalid for {height}x{width}"));
                }
                Ok(Shape::Map {
                    height: height / ph,
                    width: width / pw,
                    channels,
                })
            }
            (
                Layer::Flatten,
                Shape::Map {
                    height,
                    width,
                    channels,
                },
            ) => Ok(Shape::Vector(height * width * channels)),
            (Layer::Dense { inputs, outputs, .. }, Shape::Vector(n)) => {
                if *inputs != n {
                    return Err(format!("dense expects {inputs} inputs, previous layer gives {n}"));
                }
                Ok(Shape::Vector(*outputs))
            }
            (Layer::Relu, s) => Ok(s),
            (Layer::Softmax, Shape::Vector(n)) if n > 0 => Ok(Shape::Vector(n)),
            (layer, s) => Err(format!("{} cannot consume {s}", layer.kind())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum LayerDesc {
    Conv {
        kh: usize,
        kw: usize,
        out_channels: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Maxpool {
        ph: usize,
        pw: usize,
    },
    Flatten,
    Dense {
        out: usize,
    },
    Relu,
    Softmax,
}

fn one() -> usize {
    1
}

const LAYER_KINDS: [&str; 6] = ["conv", "maxpool", "flatten", "dense", "relu", "softmax"];

#[derive(Debug, Serialize, Deserialize)]
struct Manifest<L> {
    name: String,
    input: [usize; 3],
    layers: Vec<L>,
    #[serde(default = "default_labels")]
    class_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridShape>,
    weight_checksum: u32,
    parameter_count: u64,
}

fn default_labels() -> Vec<String> {
    DEFAULT_CLASS_LABELS.iter().map(|s| s.to_string()).collect()
}

/// A validated network: layers chain from the input shape to one output per class
/// label (or to a detection grid when `grid` is set).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    name: String,
    input: (usize, usize, usize),
    layers: Vec<Layer>,
    class_labels: Vec<String>,
    grid: Option<GridShape>,
    shapes: Vec<Shape>,
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        input: (usize, usize, usize),
        layers: Vec<Layer>,
        class_labels: Vec<String>,
        grid: Option<GridShape>,
    ) -> Result<Self, ModelError> {
        let (h, w, c) = input;
        let mut shape = Shape::Map {
            height: h,
            width: w,
            channels: c,
        };
        let mut shapes = Vec::with_capacity(layers.len());
        for (index, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|reason| ModelError::ShapeChain {
                    index,
                    layer: layer.kind(),
                    reason,
                })?;
            shapes.push(shape);
        }
        let out_len = match shape {
            Shape::Vector(n) => n,
            Shape::Map { .. } => {
                return Err(ModelError::ShapeChain {
                    index: layers.len().saturating_sub(1),
                    layer: layers.last().map_or("input", Layer::kind),
                    reason: "model must end in a vector output".into(),
                })
            }
        };
        match grid {
            Some(g) => {
                if g.value_count() != out_len {
                    return Err(ModelError::ShapeChain {
                        index: layers.len().saturating_sub(1),
                        layer: layers.last().map_or("input", Layer::kind),
                        reason: format!(
                            "grid S={} B={} C={} needs {} outputs, model gives {out_len}",
                            g.s,
                            g.b,
                            g.c,
                            g.value_count()
                        ),
                    });
                }
                if class_labels.len() != g.c {
                    return Err(ModelError::LabelCount(class_labels.len(), g.c));
                }
            }
            None if class_labels.len() != out_len => {
                return Err(ModelError::LabelCount(class_labels.len(), out_len))
            }
            None => {}
        }
        Ok(Self {
            name: name.into(),
            input,
            layers,
            class_labels,
            grid,
            shapes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Output shape of each layer, aligned with [`Self::layers`].
    pub fn layer_shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn grid(&self) -> Option<GridShape> {
        self.grid
    }

    pub fn parameter_count(&self) -> u64 {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Index of the "crime" label, falling back to the last class.
    pub fn crime_index(&self) -> usize {
        self.class_labels
            .iter()
            .position(|l| l == CRIME_LABEL)
            .unwrap_or(self.class_labels.len().saturating_sub(1))
    }

    /// Weight blob: every parameter narrowed to little-endian `f32`.
    pub fn weight_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.parameter_count() as usize * 4);
        let mut put = |values: &[f64]| {
            for &v in values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        };
        for layer in &self.layers {
            match layer {
                Layer::Conv { kernel, .. } => {
                    put(kernel.weights());
                    put(kernel.bias());
                }
                Layer::Dense { weights, bias, .. } => {
                    put(weights);
                    put(bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Serialises to `(manifest, weight blob)`.
    pub fn to_bytes(&self) -> (Vec<u8>, Vec<u8>) {
        let blob = self.weight_bytes();
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv { kernel, stride } => LayerDesc::Conv {
                    kh: kernel.kh(),
                    kw: kernel.kw(),
                    out_channels: kernel.out_channels(),
                    stride: *stride,
                },
                Layer::MaxPool { ph, pw } => LayerDesc::Maxpool { ph: *ph, pw: *pw },
                Layer::Flatten => LayerDesc::Flatten,
                Layer::Dense { outputs, .. } => LayerDesc::Dense { out: *outputs },
                Layer::Relu => LayerDesc::Relu,
                Layer::Softmax => LayerDesc::Softmax,
            })
            .collect();
        let manifest = Manifest {
            name: self.name.clone(),
            input: [self.input.0, self.input.1, self.input.2],
            layers,
            class_labels: self.class_labels.clone(),
            grid: self.grid,
            weight_checksum: crc32fast::hash(&blob),
            parameter_count: self.parameter_count(),
        };
        let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
        json.push(b'\n');
        (json, blob)
    }
}

fn parse_layers(raw: Vec<serde_json::Value>) -> Result<Vec<LayerDesc>, ModelError> {
    raw.into_iter()
        .enumerate()
        .map(|(index, value)| {
            let kind = value
                .get("kind")
                .and_then(|k| k.as_str())
                .ok_or_else(|| ModelError::Manifest(format!("layer {index} has no string \"kind\"")))?;
            if !LAYER_KINDS.contains(&kind) {
                return Err(ModelError::UnknownLayer {
                    index,
                    kind: kind.to_string(),
                });
            }
            serde_json::from_value(value)
                .map_err(|e| ModelError::Manifest(format!("layer {index}: {e}")))
        })
        .collect()
}

/// Shape pass over layer descriptors, so parameter counts are known before
/// touching the blob.
fn describe_shapes(
    input: [usize; 3],
    descs: &[LayerDesc],
) -> Result<Vec<(Shape, Shape)>, ModelError> {
    let mut shape = Shape::Map {
        height: input[0],
        width: input[1],
        channels: input[2],
    };
    let mut out = Vec::with_capacity(descs.len());
    for (index, desc) in descs.iter().enumerate() {
        let chain_err = |layer: &'static str, reason: String| ModelError::ShapeChain {
            index,
            layer,
            reason,
        };
        // validate with a placeholder layer carrying only the geometry
        let probe = match desc {
            LayerDesc::Conv {
                kh,
                kw,
                out_channels,
                stride,
            } => {
                let in_c = match shape {
                    Shape::Map { channels, .. } => channels,
                    Shape::Vector(_) => {
                        return Err(chain_err("conv", format!("conv cannot consume {shape}")))
                    }
                };
                let n = kh * kw * in_c * out_channels;
                let kernel = Kernel::new(*kh, *kw, in_c, *out_channels, vec![0.0; n], vec![0.0; *out_channels])
                    .map_err(|e| chain_err("conv", e.to_string()))?;
                Layer::Conv {
                    kernel,
                    stride: *stride,
                }
            }
            LayerDesc::Maxpool { ph, pw } => Layer::MaxPool { ph: *ph, pw: *pw },
            LayerDesc::Flatten => Layer::Flatten,
            LayerDesc::Dense { out } => {
                let inputs = match shape {
                    Shape::Vector(n) => n,
                    Shape::Map { .. } => {
                        return Err(chain_err("dense", format!("dense cannot consume {shape}")))
                    }
                };
                Layer::Dense {
                    inputs,
                    outputs: *out,
                    weights: Vec::new(),
                    bias: Vec::new(),
                }
            }
            LayerDesc::Relu => Layer::Relu,
            LayerDesc::Softmax => Layer::Softmax,
        };
        let next = probe
            .output_shape(shape)
            .map_err(|reason| chain_err(probe.kind(), reason))?;
        out.push((shape, next));
        shape = next;
    }
    Ok(out)
}

fn implied_parameters(desc: &LayerDesc, input: Shape) -> u64 {
    match (desc, input) {
        (
            LayerDesc::Conv {
                kh,
                kw,
                out_channels,
                ..
            },
            Shape::Map { channels, .. },
        ) => (kh * kw * channels * out_channels + out_channels) as u64,
        (LayerDesc::Dense { out }, Shape::Vector(n)) => (n * out + out) as u64,
        _ => 0,
    }
}

/// Per-layer geometry read from a manifest without its weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSummary {
    pub kind: &'static str,
    pub input: String,
    pub output: String,
    /// Flattened vector length, for flatten layers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flattened_inputs: Option<u64>,
    /// Weights excluding bias, for dense layers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dense_weights: Option<u64>,
    pub parameters: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestSummary {
    pub name: String,
    pub input: [usize; 3],
    pub class_labels: Vec<String>,
    pub layers: Vec<LayerSummary>,
    pub declared_parameters: u64,
    pub implied_parameters: u64,
    pub dense_weights_total: u64,
}

/// Validates the layer chain of a manifest and reports per-layer shapes and
/// parameter counts. The weight blob is not needed.
pub fn inspect_manifest(manifest: &[u8]) -> Result<ManifestSummary, ModelError> {
    let raw: Manifest<serde_json::Value> =
        serde_json::from_slice(manifest).map_err(|e| ModelError::Manifest(e.to_string()))?;
    let descs = parse_layers(raw.layers)?;
    let shapes = describe_shapes(raw.input, &descs)?;
    let layers: Vec<LayerSummary> = descs
        .iter()
        .zip(&shapes)
        .map(|(desc, (input, output))| {
            let (kind, flattened_inputs, dense_weights) = match (desc, input, output) {
                (LayerDesc::Conv { .. }, _, _) => ("conv", None, None),
                (LayerDesc::Maxpool { .. }, _, _) => ("maxpool", None, None),
                (LayerDesc::Flatten, _, Shape::Vector(n)) => ("flatten", Some(*n as u64), None),
                (LayerDesc::Flatten, _, _) => ("flatten", None, None),
                (LayerDesc::Dense { out }, Shape::Vector(n), _) => (
                    "dense",
                    None,
                    Some(tensor::dense_weight_count(*n as u64, *out as u64)),
                ),
                (LayerDesc::Dense { .. }, _, _) => ("dense", None, None),
                (LayerDesc::Relu, _, _) => ("relu", None, None),
                (LayerDesc::Softmax, _, _) => ("softmax", None, None),
            };
            LayerSummary {
                kind,
                input: input.to_string(),
                output: output.to_string(),
                flattened_inputs,
                dense_weights,
                parameters: implied_parameters(desc, *input),
            }
        })
        .collect();
    Ok(ManifestSummary {
        name: raw.name,
        input: raw.input,
        class_labels: raw.class_labels,
        declared_parameters: raw.parameter_count,
        implied_parameters: layers.iter().map(|l| l.parameters).sum(),
        dense_weights_total: layers.iter().filter_map(|l| l.dense_weights).sum(),
        layers,
    })
}

/// Parses a manifest and its weight blob into a validated model.
pub fn load_model(manifest: &[u8], weights: &[u8]) -> Result<ModelSpec, ModelError> {
    let raw: Manifest<serde_json::Value> =
        serde_json::from_slice(manifest).map_err(|e| ModelError::Manifest(e.to_string()))?;
    let descs = parse_layers(raw.layers)?;
    let shapes = describe_shapes(raw.input, &descs)?;

    if weights.len() as u64 != raw.parameter_count * 4 {
        return Err(ModelError::WeightCount {
            declared: raw.parameter_count,
            actual_bytes: weights.len(),
        });
    }
    let implied: u64 = descs
        .iter()
        .zip(&shapes)
        .map(|(d, (input, _))| implied_parameters(d, *input))
        .sum();
    if implied != raw.parameter_count {
        return Err(ModelError::ParameterCount {
            declared: raw.parameter_count,
            implied,
        });
    }
    let actual = crc32fast::hash(weights);
    if actual != raw.weight_checksum {
        return Err(ModelError::Checksum {
            expected: raw.weight_checksum,
            actual,
        });
    }

    let mut values = weights
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };

    let mut layers = Vec::with_capacity(descs.len());
    for (desc, (input, _)) in descs.into_iter().zip(shapes) {
        let layer = match (desc, input) {
            (
                LayerDesc::Conv {
                    kh,
                    kw,
                    out_channels,
                    stride,
                },
                Shape::Map { channels, .. },
            ) => {
                let w = take(kh * kw * channels * out_channels);
                let b = take(out_channels);
                Layer::Conv {
                    kernel: Kernel::new(kh, kw, channels, out_channels, w, b)?,
                    stride,
                }
            }
            (LayerDesc::Dense { out }, Shape::Vector(n)) => {
                let w = take(n * out);
                let b = take(out);
                Layer::dense(n, out, w, b)?
            }
            (LayerDesc::Maxpool { ph, pw }, _) => Layer::MaxPool { ph, pw },
            (LayerDesc::Flatten, _) => Layer::Flatten,
            (LayerDesc::Relu, _) => Layer::Relu,
            (LayerDesc::Softmax, _) => Layer::Softmax,
            (desc, shape) => unreachable!("{desc:?} accepted {shape} during shape pass"),
        };
        layers.push(layer);
    }
    let [h, w, c] = raw.input;
    ModelSpec::new(raw.name, (h, w, c), layers, raw.class_labels, raw.grid)
}

enum Activation {
    Map(Tensor),
    Vector(Vec<f64>),
}

/// Runs every layer in order and returns the final vector.
pub fn forward(model: &ModelSpec, input: &Tensor) -> Result<Vec<f64>, ModelError> {
    if input.shape() != model.input {
        return Err(ModelError::InputShape {
            expected: model.input,
            actual: input.shape(),
        });
    }
    let mut act = Activation::Map(input.clone());
    for layer in &model.layers {
        act = match (layer, act) {
            (Layer::Conv { kernel, stride }, Activation::Map(t)) => {
                Activation::Map(tensor::conv2d(&t, kernel, *stride)?)
            }
            (Layer::MaxPool { ph, pw }, Activation::Map(t)) => {
                Activation::Map(tensor::maxpool2d(&t, *ph, *pw)?)
            }
            (Layer::Flatten, Activation::Map(t)) => Activation::Vector(tensor::flatten(&t)),
            (Layer::Dense { weights, bias, .. }, Activation::Vector(v)) => {
                Activation::Vector(tensor::dense(&v, weights, bias)?)
            }
            (Layer::Relu, Activation::Map(t)) => Activation::Map(t.map(|v| v.max(0.0))),
            (Layer::Relu, Activation::Vector(v)) => Activation::Vector(tensor::relu(&v)),
            (Layer::Softmax, Activation::Vector(v)) => Activation::Vector(tensor::softmax(&v)?),
            (layer, _) => unreachable!("{} passed shape validation", layer.kind()),
        };
    }
    match act {
        Activation::Vector(v) => Ok(v),
        Activation::Map(_) => unreachable!("models end in a vector"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameVerdict {
    pub frame: usize,
    pub probabilities: Vec<f64>,
    pub predicted_index: usize,
    pub predicted_label: String,
    pub crime_probability: f64,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Converts `probabilities` into a verdict for `frame` using the model's labels.
pub fn verdict_from_probabilities(
    model: &ModelSpec,
    frame: usize,
    probabilities: Vec<f64>,
) -> FrameVerdict {
    let predicted_index = argmax(&probabilities);
    FrameVerdict {
        frame,
        predicted_label: model.class_labels[predicted_index].clone(),
        crime_probability: probabilities[model.crime_index()],
        predicted_index,
        probabilities,
    }
}

/// Resizes `frame` to the model input and classifies it. RGB frames fed to a
/// single-channel model are averaged to grayscale first.
pub fn classify_frame(model: &ModelSpec, frame: &Frame) -> Result<FrameVerdict, ModelError> {
    let (h, w, c) = model.input;
    let tensor = if c == 1 && frame.channels() == 3 {
        to_tensor(&frame.to_grayscale(), h, w)
    } else {
        to_tensor(frame, h, w)
    };
    let probabilities = forward(model, &tensor)?;
    Ok(verdict_from_probabilities(model, frame.index, probabilities))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmDecision {
    NoAlarm,
    Alarm,
}

/// Fires when at least `trigger` of the last `window` frames were flagged.
#[derive(Debug, Clone)]
pub struct AlarmAggregator {
    window: usize,
    trigger: usize,
    flags: VecDeque<bool>,
    set: usize,
}

impl AlarmAggregator {
    pub fn new(window: usize, trigger: usize) -> Result<Self, String> {
        if trigger == 0 || trigger > window {
            return Err(format!(
                "alarm trigger {trigger} must satisfy 1 <= trigger <= window ({window})"
            ));
        }
        Ok(Self {
            window,
            trigger,
            flags: VecDeque::with_capacity(window),
            set: 0,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn trigger(&self) -> usize {
        self.trigger
    }

    pub fn buffered(&self) -> usize {
        self.flags.len()
    }

    pub fn push(&mut self, flag: bool) -> AlarmDecision {
        if self.flags.len() == self.window && self.flags.pop_front() == Some(true) {
            self.set -= 1;
        }
        self.flags.push_back(flag);
        if flag {
            self.set += 1;
        }
        if self.set >= self.trigger {
            AlarmDecision::Alarm
        } else {
            AlarmDecision::NoAlarm
        }
    }

    pub fn aggregate(&mut self, verdict: &FrameVerdict, frame_threshold: f64) -> AlarmDecision {
        self.push(verdict.crime_probability >= frame_threshold)
    }
}
