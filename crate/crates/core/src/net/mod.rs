//! Layered feedforward networks: dense and small 2-D convolution layers,
//! forward-pass recording, and task losses.
//!
//! A [`Network`] is an ordered list of layers followed by a task head; the
//! head is simply the final dense layer, described by [`Head`]. Forward
//! passes record every pre-activation `a_l` and activation `h_l = f(a_l)`
//! in a [`ForwardTrace`] so credit-assignment rules can replay them.
//!
//! There is no batch-norm or dropout: the credit-assignment rules are
//! stated for plain layers, and stochastic layers would confound attack
//! determinism.

mod loss;

pub use loss::{loss, loss_grad_output, LossKind, Targets};

use thiserror::Error;

use crate::activation::Activation;
use crate::rng::{stream_id, SeededRng};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("layer {layer}: {source}")]
    Tensor {
        layer: usize,
        #[source]
        source: TensorError,
    },
    #[error("layer {layer} expects input shape {expected:?}, got {got:?}")]
    InputShape {
        layer: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid head/loss pairing: {0}")]
    LossPairing(String),
}

impl NetError {
    fn at(layer: usize) -> impl FnOnce(TensorError) -> NetError {
        move |source| NetError::Tensor { layer, source }
    }
}

type Result<T> = std::result::Result<T, NetError>;

/// Zero-padding mode for convolutions (stride is always 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
    },
    Flatten,
    MaxPool2x2,
}

/// One network layer. Dense weights are `(out, in)`; conv kernels are
/// `(out_c, in_c, k, k)`. Flatten and max-pool carry no parameters and
/// always use the identity activation.
#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub activation: Activation,
}

impl Layer {
    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }
}

/// Task head descriptor. The head itself is the last dense layer of the
/// network; a hasher head always uses tanh (required both by sign
/// binarization and by the Hamming-attack surrogate).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Classifier { classes: usize },
    Hasher { bits: usize },
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::Classifier { classes } => classes,
            Head::Hasher { bits } => bits,
        }
    }

    fn activation(self) -> Activation {
        match self {
            Head::Classifier { .. } => Activation::Identity,
            Head::Hasher { .. } => Activation::Tanh,
        }
    }
}

/// Architecture description consumed by [`Network::new`]; weight shapes
/// are inferred by walking the per-example shape through the stack.
#[derive(Debug, Clone, Copy)]
pub enum LayerSpec {
    Dense {
        out: usize,
        activation: Activation,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        padding: Padding,
        activation: Activation,
    },
    Flatten,
    MaxPool2x2,
}

impl LayerSpec {
    pub fn dense(out: usize, activation: Activation) -> Self {
        LayerSpec::Dense { out, activation }
    }

    pub fn conv(out_channels: usize, kernel: usize, padding: Padding, activation: Activation) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            padding,
            activation,
        }
    }
}

/// Feedforward model: ordered layers plus a task head.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    head: Head,
    input_shape: Vec<usize>,
    init_seed: u64,
}

/// Per-layer recording of one forward pass: pre-activations `a_l`,
/// activations `h_l`, and the original input batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor,
    pub pre: Vec<Tensor>,
    pub post: Vec<Tensor>,
}

impl ForwardTrace {
    /// Network output for the traced batch.
    pub fn output(&self) -> &Tensor {
        self.post.last().expect("networks have at least one layer")
    }

    /// Activation feeding layer `l` (the input batch for layer 0).
    pub fn input_to(&self, layer: usize) -> &Tensor {
        if layer == 0 {
            &self.input
        } else {
            &self.post[layer - 1]
        }
    }
}

fn fan_in_bound(fan_in: usize, activation: Activation) -> f64 {
    let gain2 = if activation == Activation::Relu { 2.0 } else { 1.0 };
    (3.0 * gain2 / fan_in as f64).sqrt()
}

fn init_dense(
    in_features: usize,
    out_features: usize,
    activation: Activation,
    seed: u64,
    layer: usize,
) -> Result<(Tensor, Tensor)> {
    let bound = fan_in_bound(in_features, activation);
    let mut rng = SeededRng::new(seed, stream_id("winit", &[layer as u64]));
    let w = crate::rng::sample_uniform(&mut rng, vec![out_features, in_features], -bound, bound)
        .map_err(NetError::at(layer))?;
    let b = Tensor::zeros(vec![out_features]);
    Ok((w, b))
}

fn init_conv(
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    activation: Activation,
    seed: u64,
    layer: usize,
) -> Result<(Tensor, Tensor)> {
    let fan_in = in_channels * kernel * kernel;
    let bound = fan_in_bound(fan_in, activation);
    let mut rng = SeededRng::new(seed, stream_id("winit", &[layer as u64]));
    let w = crate::rng::sample_uniform(
        &mut rng,
        vec![out_channels, in_channels, kernel, kernel],
        -bound,
        bound,
    )
    .map_err(NetError::at(layer))?;
    let b = Tensor::zeros(vec![out_channels]);
    Ok((w, b))
}

/// Per-example output shape of a layer given its per-example input shape.
fn walk_shape(kind: &LayerKind, input: &[usize], layer: usize) -> Result<Vec<usize>> {
    match kind {
        LayerKind::Dense { in_features, out_features } => {
            if input != [*in_features] {
                return Err(NetError::InputShape {
                    layer,
                    expected: vec![*in_features],
                    got: input.to_vec(),
                });
            }
            Ok(vec![*out_features])
        }
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
        } => {
            let [c, h, w] = *input else {
                return Err(NetError::InputShape {
                    layer,
                    expected: vec![*in_channels, 0, 0],
                    got: input.to_vec(),
                });
            };
            if c != *in_channels {
                return Err(NetError::InputShape {
                    layer,
                    expected: vec![*in_channels, h, w],
                    got: input.to_vec(),
                });
            }
            let (oh, ow) = match padding {
                Padding::Valid => {
                    if h < *kernel || w < *kernel {
                        return Err(NetError::Architecture(format!(
                            "layer {layer}: kernel {kernel} larger than input {h}x{w}"
                        )));
                    }
                    (h - kernel + 1, w - kernel + 1)
                }
                Padding::Same => {
                    if kernel % 2 == 0 {
                        return Err(NetError::Architecture(format!(
                            "layer {layer}: same padding requires an odd kernel, got {kernel}"
                        )));
                    }
                    (h, w)
                }
            };
            Ok(vec![*out_channels, oh, ow])
        }
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
        LayerKind::MaxPool2x2 => {
            let [c, h, w] = *input else {
                return Err(NetError::InputShape {
                    layer,
                    expected: vec![0, 0, 0],
                    got: input.to_vec(),
                });
            };
            if h % 2 != 0 || w % 2 != 0 {
                return Err(NetError::Architecture(format!(
                    "layer {layer}: 2x2 max-pool needs even spatial dims, got {h}x{w}"
                )));
            }
            Ok(vec![c, h / 2, w / 2])
        }
    }
}

impl Network {
    /// Builds and initializes a network. The head is appended as a final
    /// dense layer whose activation is fixed by the head kind.
    pub fn new(
        input_shape: Vec<usize>,
        specs: &[LayerSpec],
        head: Head,
        seed: u64,
    ) -> Result<Network> {
        let mut layers = Vec::with_capacity(specs.len() + 1);
        let mut shape = input_shape.clone();
        for (l, spec) in specs.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Dense { out, activation } => {
                    let [in_features] = shape[..] else {
                        return Err(NetError::InputShape {
                            layer: l,
                            expected: vec![0],
                            got: shape.clone(),
                        });
                    };
                    let (w, b) = init_dense(in_features, out, activation, seed, l)?;
                    Layer {
                        kind: LayerKind::Dense {
                            in_features,
                            out_features: out,
                        },
                        weights: Some(w),
                        bias: Some(b),
                        activation,
                    }
                }
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    padding,
                    activation,
                } => {
                    let [in_channels, ..] = shape[..] else {
                        return Err(NetError::InputShape {
                            layer: l,
                            expected: vec![0, 0, 0],
                            got: shape.clone(),
                        });
                    };
                    let (w, b) =
                        init_conv(in_channels, out_channels, kernel, activation, seed, l)?;
                    Layer {
                        kind: LayerKind::Conv2d {
                            in_channels,
                            out_channels,
                            kernel,
                            padding,
                        },
                        weights: Some(w),
                        bias: Some(b),
                        activation,
                    }
                }
                LayerSpec::Flatten => Layer {
                    kind: LayerKind::Flatten,
                    weights: None,
                    bias: None,
                    activation: Activation::Identity,
                },
                LayerSpec::MaxPool2x2 => Layer {
                    kind: LayerKind::MaxPool2x2,
                    weights: None,
                    bias: None,
                    activation: Activation::Identity,
                },
            };
            shape = walk_shape(&layer.kind, &shape, l)?;
            layers.push(layer);
        }

        let [features] = shape[..] else {
            return Err(NetError::Architecture(format!(
                "head needs a flat feature vector, got shape {shape:?} (insert a flatten layer)"
            )));
        };
        let l = layers.len();
        let (w, b) = init_dense(features, head.output_dim(), head.activation(), seed, l)?;
        layers.push(Layer {
            kind: LayerKind::Dense {
                in_features: features,
                out_features: head.output_dim(),
            },
            weights: Some(w),
            bias: Some(b),
            activation: head.activation(),
        });

        Ok(Network {
            layers,
            head,
            input_shape,
            init_seed: seed,
        })
    }

    pub(crate) fn from_parts(
        layers: Vec<Layer>,
        head: Head,
        input_shape: Vec<usize>,
        init_seed: u64,
    ) -> Result<Network> {
        let net = Network {
            layers,
            head,
            input_shape,
            init_seed,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let mut shape = self.input_shape.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            shape = walk_shape(&layer.kind, &shape, l)?;
        }
        if shape != [self.head.output_dim()] {
            return Err(NetError::Architecture(format!(
                "head declares {} outputs but the last layer produces {shape:?}",
                self.head.output_dim()
            )));
        }
        let last = self.layers.last().ok_or_else(|| {
            NetError::Architecture("network must contain at least one layer".into())
        })?;
        if last.activation != self.head.activation() {
            return Err(NetError::Architecture(format!(
                "head requires {} activation on the last layer, found {}",
                self.head.activation().name(),
                last.activation.name()
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// Total number of weight and bias parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.as_ref().map_or(0, Tensor::len) + l.bias.as_ref().map_or(0, Tensor::len)
            })
            .sum()
    }

    /// Replaces the head with a freshly initialized dense layer for `head`,
    /// reusing the backbone unchanged.
    pub fn replace_head(&mut self, head: Head, seed: u64) -> Result<()> {
        let l = self.layers.len() - 1;
        let LayerKind::Dense { in_features, .. } = self.layers[l].kind else {
            return Err(NetError::Architecture(
                "last layer is not dense; cannot swap head".into(),
            ));
        };
        let (w, b) = init_dense(in_features, head.output_dim(), head.activation(), seed, l)?;
        self.layers[l] = Layer {
            kind: LayerKind::Dense {
                in_features,
                out_features: head.output_dim(),
            },
            weights: Some(w),
            bias: Some(b),
            activation: head.activation(),
        };
        self.head = head;
        Ok(())
    }

    pub fn set_layer_weights(&mut self, layer: usize, w: Tensor) -> Result<()> {
        let current = self.layers[layer].weights.as_ref().ok_or_else(|| {
            NetError::Architecture(format!("layer {layer} has no weights"))
        })?;
        if current.shape() != w.shape() {
            return Err(NetError::Tensor {
                layer,
                source: TensorError::ShapeMismatch {
                    op: "set_layer_weights",
                    lhs: current.shape().to_vec(),
                    rhs: w.shape().to_vec(),
                },
            });
        }
        self.layers[layer].weights = Some(w);
        Ok(())
    }

    pub fn set_layer_bias(&mut self, layer: usize, b: Tensor) -> Result<()> {
        let current = self.layers[layer].bias.as_ref().ok_or_else(|| {
            NetError::Architecture(format!("layer {layer} has no bias"))
        })?;
        if current.shape() != b.shape() {
            return Err(NetError::Tensor {
                layer,
                source: TensorError::ShapeMismatch {
                    op: "set_layer_bias",
                    lhs: current.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                },
            });
        }
        self.layers[layer].bias = Some(b);
        Ok(())
    }

    pub(crate) fn layer_mut(&mut self, layer: usize) -> &mut Layer {
        &mut self.layers[layer]
    }

    /// Forward pass over a batch shaped `(N, input_shape...)`, recording
    /// every layer's pre-activation and activation.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        let expected: Vec<usize> = self.input_shape.clone();
        if x.rank() != expected.len() + 1 || x.shape()[1..] != expected[..] {
            return Err(NetError::InputShape {
                layer: 0,
                expected,
                got: x.shape().to_vec(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer_forward(layer, &h, l)?;
            let out = layer.activation.apply(&a).map_err(NetError::at(l))?;
            pre.push(a);
            post.push(out.clone());
            h = out;
        }
        Ok(ForwardTrace {
            input: x.clone(),
            pre,
            post,
        })
    }

    /// Argmax class per batch row (classifier heads).
    pub fn predict_classes(&self, x: &Tensor) -> Result<Vec<usize>> {
        let trace = self.forward(x)?;
        Ok(argmax_rows(trace.output()))
    }

    /// Continuous hash codes `u(x)` for hasher heads.
    pub fn continuous_codes(&self, x: &Tensor) -> Result<Tensor> {
        if !matches!(self.head, Head::Hasher { .. }) {
            return Err(NetError::LossPairing(
                "continuous codes require a hasher head".into(),
            ));
        }
        Ok(self.forward(x)?.output().clone())
    }

    /// Checks the head/loss invariants: cross-entropy needs a classifier,
    /// the pairwise hashing loss needs a hasher.
    pub fn check_loss_pairing(&self, kind: LossKind) -> Result<()> {
        match (kind, self.head) {
            (LossKind::CrossEntropy, Head::Classifier { .. }) => Ok(()),
            (LossKind::PairwiseHash, Head::Hasher { .. }) => Ok(()),
            (LossKind::SquaredError, _) => Ok(()),
            (kind, head) => Err(NetError::LossPairing(format!(
                "{kind:?} cannot drive a {head:?} head"
            ))),
        }
    }
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let (n, d) = (t.shape()[0], t.shape()[1]);
    (0..n)
        .map(|i| {
            let row = &t.data()[i * d..(i + 1) * d];
            let mut best = 0;
            for j in 1..d {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn layer_forward(layer: &Layer, h: &Tensor, l: usize) -> Result<Tensor> {
    match &layer.kind {
        LayerKind::Dense { in_features, out_features } => {
            if h.rank() != 2 || h.shape()[1] != *in_features {
                return Err(NetError::InputShape {
                    layer: l,
                    expected: vec![0, *in_features],
                    got: h.shape().to_vec(),
                });
            }
            let w = layer.weights.as_ref().expect("dense layer has weights");
            let b = layer.bias.as_ref().expect("dense layer has bias");
            let mut a = h
                .matmul(&w.transpose().map_err(NetError::at(l))?)
                .map_err(NetError::at(l))?;
            let n = a.shape()[0];
            let data = a.data_mut();
            for i in 0..n {
                for j in 0..*out_features {
                    data[i * out_features + j] += b.data()[j];
                }
            }
            Ok(a)
        }
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
        } => {
            if h.rank() != 4 || h.shape()[1] != *in_channels {
                return Err(NetError::InputShape {
                    layer: l,
                    expected: vec![0, *in_channels, 0, 0],
                    got: h.shape().to_vec(),
                });
            }
            let w = layer.weights.as_ref().expect("conv layer has weights");
            let b = layer.bias.as_ref().expect("conv layer has bias");
            conv2d_forward(h, w, b, *out_channels, *kernel, *padding).map_err(NetError::at(l))
        }
        LayerKind::Flatten => {
            let n = h.shape()[0];
            let features: usize = h.shape()[1..].iter().product();
            h.reshape(vec![n, features]).map_err(NetError::at(l))
        }
        LayerKind::MaxPool2x2 => maxpool2x2_forward(h).map_err(NetError::at(l)),
    }
}

/// Stride-1 cross-correlation with zero padding.
fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    out_c: usize,
    k: usize,
    padding: Padding,
) -> std::result::Result<Tensor, TensorError> {
    let (n, in_c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let pad = match padding {
        Padding::Valid => 0usize,
        Padding::Same => (k - 1) / 2,
    };
    let (oh, ow) = match padding {
        Padding::Valid => (h - k + 1, wd - k + 1),
        Padding::Same => (h, wd),
    };
    let mut out = vec![0.0; n * out_c * oh * ow];
    let xs = x.data();
    let ws = w.data();
    for ni in 0..n {
        for o in 0..out_c {
            let bias = b.data()[o];
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias;
                    for i in 0..in_c {
                        for p in 0..k {
                            let sy = y + p;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            let sy = sy - pad;
                            for q in 0..k {
                                let sx = xx + q;
                                if sx < pad || sx - pad >= wd {
                                    continue;
                                }
                                let sx = sx - pad;
                                acc += ws[((o * in_c + i) * k + p) * k + q]
                                    * xs[((ni * in_c + i) * h + sy) * wd + sx];
                            }
                        }
                    }
                    out[((ni * out_c + o) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    let t = Tensor::new(vec![n, out_c, oh, ow], out)?;
    Ok(t)
}

fn maxpool2x2_forward(x: &Tensor) -> std::result::Result<Tensor, TensorError> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = (ni * c + ci) * h;
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = xs[(base + 2 * y + dy) * w + 2 * xx + dx];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out[((ni * c + ci) * oh + y) * ow + xx] = best;
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Backward helpers shared with the feedback module: routes a gradient
/// through the parameter-free layers.
pub(crate) fn maxpool2x2_backward(
    x: &Tensor,
    grad_out: &Tensor,
) -> std::result::Result<Tensor, TensorError> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.data();
    let gs = grad_out.data();
    let mut out = vec![0.0; n * c * h * w];
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = (ni * c + ci) * h;
                    // First maximum in scan order receives the gradient.
                    let (mut by, mut bx, mut best) = (0, 0, f64::NEG_INFINITY);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = xs[(base + 2 * y + dy) * w + 2 * xx + dx];
                            if v > best {
                                best = v;
                                by = dy;
                                bx = dx;
                            }
                        }
                    }
                    out[(base + 2 * y + by) * w + 2 * xx + bx] +=
                        gs[((ni * c + ci) * oh + y) * ow + xx];
                }
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}
