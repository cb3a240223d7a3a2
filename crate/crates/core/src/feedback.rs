//! Credit assignment: error-signal transport under five rules, plus the
//! ADAM optimizer and the training loop.
//!
//! Every rule shares the same recursion. The output error is seeded from
//! the loss gradient through the head's activation derivative, and each
//! layer's error is the next layer's error transported backward and gated
//! by the local derivative. The rules differ only in the transport map
//! `V` built from the forward weights `W`:
//!
//! - `BP`:   `V = W^T` (full weight transport)
//! - `FA`:   `V = B`, a fixed random matrix drawn at init
//! - `uSF`:  `V = sign(W^T)`
//! - `frSF`: `V = M o sign(W^T)` with `M` drawn once and frozen
//! - `brSF`: like frSF, but `M` is redrawn after every parameter update
//!
//! For convolution layers the maps apply elementwise to the kernel and
//! the transport is the corresponding transposed convolution. Biases are
//! always updated with their true local gradient: the rules alter only
//! the inter-layer transport, which biases do not participate in.

use thiserror::Error;

use crate::activation::Activation;
use crate::net::{ForwardTrace, LayerKind, LossKind, NetError, Network, Padding, Targets};
use crate::rng::{stream_id, SeededRng};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeedbackRule {
    Bp,
    Fa,
    Usf,
    Frsf,
    Brsf,
}

impl FeedbackRule {
    pub const ALL: [FeedbackRule; 5] = [
        FeedbackRule::Bp,
        FeedbackRule::Fa,
        FeedbackRule::Usf,
        FeedbackRule::Frsf,
        FeedbackRule::Brsf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeedbackRule::Bp => "bp",
            FeedbackRule::Fa => "fa",
            FeedbackRule::Usf => "usf",
            FeedbackRule::Frsf => "frsf",
            FeedbackRule::Brsf => "brsf",
        }
    }

    pub fn parse(s: &str) -> Option<FeedbackRule> {
        match s.to_ascii_lowercase().as_str() {
            "bp" => Some(FeedbackRule::Bp),
            "fa" => Some(FeedbackRule::Fa),
            "usf" => Some(FeedbackRule::Usf),
            "frsf" => Some(FeedbackRule::Frsf),
            "brsf" => Some(FeedbackRule::Brsf),
            _ => None,
        }
    }

    fn uses_magnitudes(self) -> bool {
        matches!(self, FeedbackRule::Frsf | FeedbackRule::Brsf)
    }
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("feedback state not initialized for layer {layer}")]
    Uninitialized { layer: usize },
    #[error("feedback state was built for a different network (layer {layer})")]
    StateMismatch { layer: usize },
    #[error("layer {layer}: {source}")]
    Tensor {
        layer: usize,
        #[source]
        source: TensorError,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("training requires a non-empty dataset")]
    EmptyDataset,
}

type Result<T> = std::result::Result<T, FeedbackError>;

fn at(layer: usize) -> impl FnOnce(TensorError) -> FeedbackError {
    move |source| FeedbackError::Tensor { layer, source }
}

/// Per-layer feedback state: FA's fixed matrices `B` and the sign-rule
/// magnitude matrices `M`, all stored in transport shape (dense: the
/// shape of `W^T`; conv: the kernel shape).
#[derive(Debug, Clone)]
pub struct FeedbackState {
    rule: FeedbackRule,
    b: Vec<Option<Tensor>>,
    m: Vec<Option<Tensor>>,
    creation_seed: u64,
    draws: u64,
}

fn transport_shape(w: &Tensor) -> Vec<usize> {
    if w.rank() == 2 {
        vec![w.shape()[1], w.shape()[0]]
    } else {
        w.shape().to_vec()
    }
}

impl FeedbackState {
    /// Draws the rule's random matrices for every weighted layer of `net`.
    ///
    /// FA matrices use the same fan-in-scaled range as the layer's forward
    /// init; magnitudes are uniform on (0, 1] so no sign information is
    /// ever destroyed.
    pub fn init(net: &Network, rule: FeedbackRule, seed: u64) -> FeedbackState {
        let mut b = Vec::with_capacity(net.num_layers());
        let mut m = Vec::with_capacity(net.num_layers());
        for (l, layer) in net.layers().iter().enumerate() {
            match (&layer.kind, layer.weights.as_ref()) {
                (_, None) => {
                    b.push(None);
                    m.push(None);
                }
                (kind, Some(w)) => {
                    let shape = transport_shape(w);
                    if rule == FeedbackRule::Fa {
                        let fan_in = match kind {
                            LayerKind::Dense { in_features, .. } => *in_features,
                            LayerKind::Conv2d {
                                in_channels,
                                kernel,
                                ..
                            } => in_channels * kernel * kernel,
                            _ => unreachable!("weighted layers are dense or conv"),
                        };
                        let gain2 = if layer.activation == Activation::Relu { 2.0 } else { 1.0 };
                        let bound = (3.0 * gain2 / fan_in as f64).sqrt();
                        let mut rng = SeededRng::new(seed, stream_id("fa", &[l as u64]));
                        b.push(Some(
                            crate::rng::sample_uniform(&mut rng, shape.clone(), -bound, bound)
                                .expect("valid range"),
                        ));
                    } else {
                        b.push(None);
                    }
                    if rule.uses_magnitudes() {
                        m.push(Some(draw_magnitudes(seed, l, 0, shape)));
                    } else {
                        m.push(None);
                    }
                }
            }
        }
        FeedbackState {
            rule,
            b,
            m,
            creation_seed: seed,
            draws: 0,
        }
    }

    pub fn rule(&self) -> FeedbackRule {
        self.rule
    }

    pub fn creation_seed(&self) -> u64 {
        self.creation_seed
    }

    /// Transport map `V` for one layer's weights.
    ///
    /// Dense layers return the `(in, out)` matrix (`W^T` under BP); conv
    /// layers return the elementwise-mapped kernel used by the transposed
    /// convolution. Under brSF the magnitudes are marked stale and
    /// redrawn by the next [`weight_update`].
    pub fn feedback_matrix(&self, w: &Tensor, layer: usize) -> Result<Tensor> {
        if layer >= self.b.len() {
            return Err(FeedbackError::StateMismatch { layer });
        }
        let base = if w.rank() == 2 {
            w.transpose().map_err(at(layer))?
        } else {
            w.clone()
        };
        match self.rule {
            FeedbackRule::Bp => Ok(base),
            FeedbackRule::Fa => {
                let b = self.b[layer]
                    .as_ref()
                    .ok_or(FeedbackError::Uninitialized { layer })?;
                if b.shape() != base.shape() {
                    return Err(FeedbackError::StateMismatch { layer });
                }
                Ok(b.clone())
            }
            FeedbackRule::Usf => base.sign().map_err(at(layer)),
            FeedbackRule::Frsf | FeedbackRule::Brsf => {
                let m = self.m[layer]
                    .as_ref()
                    .ok_or(FeedbackError::Uninitialized { layer })?;
                if m.shape() != base.shape() {
                    return Err(FeedbackError::StateMismatch { layer });
                }
                m.hadamard(&base.sign().map_err(at(layer))?).map_err(at(layer))
            }
        }
    }

    /// Redraws all magnitude matrices (brSF, once per parameter update).
    fn redraw_magnitudes(&mut self) {
        self.draws += 1;
        for (l, slot) in self.m.iter_mut().enumerate() {
            if let Some(old) = slot.as_ref() {
                *slot = Some(draw_magnitudes(
                    self.creation_seed,
                    l,
                    self.draws,
                    old.shape().to_vec(),
                ));
            }
        }
    }

    /// Order-stable FNV-1a digest over the bit patterns of all `B` and
    /// `M` matrices; used to check the immutability invariants.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |t: &Option<Tensor>| {
            if let Some(t) = t {
                for &v in t.data() {
                    for byte in v.to_bits().to_le_bytes() {
                        h ^= u64::from(byte);
                        h = h.wrapping_mul(0x100000001b3);
                    }
                }
            }
        };
        for t in &self.b {
            eat(t);
        }
        for t in &self.m {
            eat(t);
        }
        h
    }

    /// Magnitude matrix for one layer (frSF/brSF only).
    pub fn magnitudes(&self, layer: usize) -> Option<&Tensor> {
        self.m.get(layer).and_then(Option::as_ref)
    }

    /// Overwrites every magnitude entry with a constant. With 1.0 this
    /// reduces frSF transport to uSF exactly, which the degeneracy checks
    /// exploit; the value must stay positive to preserve sign concordance.
    pub fn set_all_magnitudes(&mut self, value: f64) -> Result<()> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(FeedbackError::Tensor {
                layer: 0,
                source: TensorError::BadRange {
                    lo: value,
                    hi: f64::INFINITY,
                },
            });
        }
        for slot in self.m.iter_mut() {
            if let Some(t) = slot.as_ref() {
                *slot = Some(Tensor::filled(t.shape().to_vec(), value).expect("constant fill"));
            }
        }
        Ok(())
    }
}

fn draw_magnitudes(seed: u64, layer: usize, draw: u64, shape: Vec<usize>) -> Tensor {
    let mut rng = SeededRng::new(seed, stream_id("mag", &[layer as u64, draw]));
    // 1 - U[0,1) lands in (0,1]: strictly positive magnitudes.
    let u = crate::rng::sample_uniform(&mut rng, shape, 0.0, 1.0).expect("valid range");
    u.map("magnitudes", |v| 1.0 - v).expect("finite")
}

/// Error signals `delta_l` for every layer, output layer last.
///
/// `loss_grad` is the gradient of the scalar loss with respect to the
/// network output (batch factor included), as produced by
/// [`crate::net::loss_grad_output`].
pub fn backward_error_signals(
    net: &Network,
    trace: &ForwardTrace,
    state: &FeedbackState,
    loss_grad: &Tensor,
) -> Result<Vec<Tensor>> {
    let layers = net.layers();
    let last = layers.len() - 1;
    if trace.pre.len() != layers.len() {
        return Err(FeedbackError::StateMismatch { layer: last });
    }
    let mut deltas = vec![Tensor::zeros(vec![1]); layers.len()];
    deltas[last] = gate(loss_grad, layers[last].activation, &trace.pre[last], last)?;
    for l in (0..last).rev() {
        let upstream = transport(net, state, l + 1, &deltas[l + 1], trace)?;
        deltas[l] = gate(&upstream, layers[l].activation, &trace.pre[l], l)?;
    }
    Ok(deltas)
}

/// Gradient of the loss with respect to the *input batch*, transported
/// with the state's rule. Under BP this is the true input gradient;
/// under the sign rules it is the deployed model's approximate gradient,
/// which is exactly what gradient-based attackers consume.
pub fn input_gradient(
    net: &Network,
    trace: &ForwardTrace,
    state: &FeedbackState,
    loss_grad: &Tensor,
) -> Result<Tensor> {
    let deltas = backward_error_signals(net, trace, state, loss_grad)?;
    transport(net, state, 0, &deltas[0], trace)
}

fn gate(
    upstream: &Tensor,
    activation: Activation,
    pre: &Tensor,
    layer: usize,
) -> Result<Tensor> {
    if activation == Activation::Identity {
        return Ok(upstream.clone());
    }
    let deriv = activation.derivative(pre).map_err(at(layer))?;
    upstream.hadamard(&deriv).map_err(at(layer))
}

/// Moves `delta` at layer `l`'s output to layer `l`'s input side.
fn transport(
    net: &Network,
    state: &FeedbackState,
    layer: usize,
    delta: &Tensor,
    trace: &ForwardTrace,
) -> Result<Tensor> {
    let l = &net.layers()[layer];
    match &l.kind {
        LayerKind::Dense { .. } => {
            let v = state.feedback_matrix(l.weights.as_ref().expect("dense weights"), layer)?;
            // rows delta (N,out) times V^T (out,in) -> (N,in)
            delta
                .matmul(&v.transpose().map_err(at(layer))?)
                .map_err(at(layer))
        }
        LayerKind::Conv2d { padding, .. } => {
            let kernel =
                state.feedback_matrix(l.weights.as_ref().expect("conv weights"), layer)?;
            let input = trace.input_to(layer);
            conv2d_input_transport(delta, &kernel, *padding, input.shape()).map_err(at(layer))
        }
        LayerKind::Flatten => {
            let prev_shape = trace.input_to(layer).shape().to_vec();
            delta.reshape(prev_shape).map_err(at(layer))
        }
        LayerKind::MaxPool2x2 => {
            crate::net::maxpool2x2_backward(trace.input_to(layer), delta).map_err(at(layer))
        }
    }
}

/// Transposed convolution: scatters output-side error back to the input
/// feature map using the (possibly sign-mapped) kernel.
fn conv2d_input_transport(
    delta: &Tensor,
    kernel: &Tensor,
    padding: Padding,
    input_shape: &[usize],
) -> std::result::Result<Tensor, TensorError> {
    let (n, out_c, oh, ow) = (
        delta.shape()[0],
        delta.shape()[1],
        delta.shape()[2],
        delta.shape()[3],
    );
    let (in_c, h, w) = (input_shape[1], input_shape[2], input_shape[3]);
    let k = kernel.shape()[2];
    let pad = match padding {
        Padding::Valid => 0usize,
        Padding::Same => (k - 1) / 2,
    };
    let ds = delta.data();
    let ks = kernel.data();
    let mut out = vec![0.0; n * in_c * h * w];
    for ni in 0..n {
        for o in 0..out_c {
            for yo in 0..oh {
                for xo in 0..ow {
                    let d = ds[((ni * out_c + o) * oh + yo) * ow + xo];
                    if d == 0.0 {
                        continue;
                    }
                    for i in 0..in_c {
                        for p in 0..k {
                            let sy = yo + p;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            let sy = sy - pad;
                            for q in 0..k {
                                let sx = xo + q;
                                if sx < pad || sx - pad >= w {
                                    continue;
                                }
                                let sx = sx - pad;
                                out[((ni * in_c + i) * h + sy) * w + sx] +=
                                    d * ks[((o * in_c + i) * k + p) * k + q];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, in_c, h, w], out)
}

/// Pseudo-gradients for one weighted layer. `delta` already carries the
/// batch factor from the loss gradient, so these accumulate plain sums.
fn layer_gradients(
    layer_kind: &LayerKind,
    delta: &Tensor,
    input: &Tensor,
    layer: usize,
) -> Result<(Tensor, Tensor)> {
    match layer_kind {
        LayerKind::Dense { .. } => {
            // (out,N) x (N,in) -> (out,in)
            let gw = delta
                .transpose()
                .map_err(at(layer))?
                .matmul(input)
                .map_err(at(layer))?;
            let (n, d) = (delta.shape()[0], delta.shape()[1]);
            let mut gb = vec![0.0; d];
            for i in 0..n {
                for j in 0..d {
                    gb[j] += delta.data()[i * d + j];
                }
            }
            Ok((gw, Tensor::new(vec![d], gb).map_err(at(layer))?))
        }
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
        } => {
            let (n, _, oh, ow) = (
                delta.shape()[0],
                delta.shape()[1],
                delta.shape()[2],
                delta.shape()[3],
            );
            let (h, w) = (input.shape()[2], input.shape()[3]);
            let k = *kernel;
            let pad = match padding {
                Padding::Valid => 0usize,
                Padding::Same => (k - 1) / 2,
            };
            let ds = delta.data();
            let xs = input.data();
            let mut gw = vec![0.0; out_channels * in_channels * k * k];
            let mut gb = vec![0.0; *out_channels];
            for ni in 0..n {
                for o in 0..*out_channels {
                    for yo in 0..oh {
                        for xo in 0..ow {
                            let d = ds[((ni * out_channels + o) * oh + yo) * ow + xo];
                            if d == 0.0 {
                                continue;
                            }
                            gb[o] += d;
                            for i in 0..*in_channels {
                                for p in 0..k {
                                    let sy = yo + p;
                                    if sy < pad || sy - pad >= h {
                                        continue;
                                    }
                                    let sy = sy - pad;
                                    for q in 0..k {
                                        let sx = xo + q;
                                        if sx < pad || sx - pad >= w {
                                            continue;
                                        }
                                        let sx = sx - pad;
                                        gw[((o * in_channels + i) * k + p) * k + q] +=
                                            d * xs[((ni * in_channels + i) * h + sy) * w + sx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Ok((
                Tensor::new(vec![*out_channels, *in_channels, k, k], gw).map_err(at(layer))?,
                Tensor::new(vec![*out_channels], gb).map_err(at(layer))?,
            ))
        }
        _ => unreachable!("gradients requested for a parameter-free layer"),
    }
}

/// Per-parameter-group learning rates: the head (last layer) can train
/// faster than the backbone, as in fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub backbone: f64,
    pub head: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        LearningRates {
            backbone: lr,
            head: lr,
        }
    }

    fn for_layer(&self, layer: usize, last: usize) -> f64 {
        if layer == last {
            self.head
        } else {
            self.backbone
        }
    }
}

/// ADAM accumulator state for every weight and bias tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Option<Tensor>>,
    v_w: Vec<Option<Tensor>>,
    m_b: Vec<Option<Tensor>>,
    v_b: Vec<Option<Tensor>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled L2 coefficient, added to the weight gradient (not biases).
    pub weight_decay: f64,
    pub lrs: LearningRates,
}

impl AdamState {
    pub fn new(net: &Network, lrs: LearningRates, weight_decay: f64) -> AdamState {
        let zero_like = |t: &Option<Tensor>| t.as_ref().map(|t| Tensor::zeros(t.shape().to_vec()));
        AdamState {
            m_w: net.layers().iter().map(|l| zero_like(&l.weights)).collect(),
            v_w: net.layers().iter().map(|l| zero_like(&l.weights)).collect(),
            m_b: net.layers().iter().map(|l| zero_like(&l.bias)).collect(),
            v_b: net.layers().iter().map(|l| zero_like(&l.bias)).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            lrs,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn apply(
        &mut self,
        param: &mut Tensor,
        grad: &Tensor,
        moment_slot: (usize, bool),
        lr: f64,
    ) {
        let (layer, is_weight) = moment_slot;
        let (m, v) = if is_weight {
            (
                self.m_w[layer].as_mut().expect("moment allocated"),
                self.v_w[layer].as_mut().expect("moment allocated"),
            )
        } else {
            (
                self.m_b[layer].as_mut().expect("moment allocated"),
                self.v_b[layer].as_mut().expect("moment allocated"),
            )
        };
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let md = m.data_mut();
        let vd = v.data_mut();
        let pd = param.data_mut();
        for i in 0..pd.len() {
            let g = grad.data()[i];
            md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * g;
            vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * g * g;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// One ADAM step from the error signals of one batch. The weight
/// pseudo-gradient is `sum_batch(delta h^T) + lambda W` (the batch mean is
/// already inside `delta` via the loss gradient); biases receive their
/// local gradient with no decay. Under brSF the magnitude matrices are
/// redrawn after the step.
pub fn weight_update(
    net: &mut Network,
    trace: &ForwardTrace,
    deltas: &[Tensor],
    adam: &mut AdamState,
    state: &mut FeedbackState,
) -> Result<()> {
    adam.step += 1;
    let last = net.num_layers() - 1;
    for l in 0..net.num_layers() {
        if !net.layers()[l].is_weighted() {
            continue;
        }
        let kind = net.layers()[l].kind.clone();
        let (mut gw, gb) = layer_gradients(&kind, &deltas[l], trace.input_to(l), l)?;
        let lr = adam.lrs.for_layer(l, last);
        let lambda = adam.weight_decay;
        {
            let layer = net.layer_mut(l);
            let w = layer.weights.as_mut().expect("weighted layer");
            if lambda != 0.0 {
                let gwd = gw.data_mut();
                for (g, &wv) in gwd.iter_mut().zip(w.data()) {
                    *g += lambda * wv;
                }
            }
            adam.apply(w, &gw, (l, true), lr);
            let b = layer.bias.as_mut().expect("weighted layer");
            adam.apply(b, &gb, (l, false), lr);
        }
    }
    if state.rule() == FeedbackRule::Brsf {
        state.redraw_magnitudes();
    }
    Ok(())
}

/// Training-loop configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub rule: FeedbackRule,
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lrs: LearningRates,
    pub weight_decay: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn new(rule: FeedbackRule, loss: LossKind, epochs: usize, batch_size: usize) -> Self {
        TrainConfig {
            rule,
            loss,
            epochs,
            batch_size,
            lrs: LearningRates::uniform(1e-3),
            weight_decay: 5e-4,
            seed: 0,
            shuffle: true,
        }
    }
}

/// Extracts batch rows (first axis) in the given order.
pub fn gather_examples(x: &Tensor, idx: &[usize]) -> Tensor {
    let per: usize = x.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&x.data()[i * per..(i + 1) * per]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("subset of a valid tensor")
}

/// What [`train`] hands back: the per-epoch mean loss and the feedback
/// state as it stood after the last update (FA's `B` and frSF's `M` are
/// the deployed transport of the trained model).
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub state: FeedbackState,
}

/// Mini-batch training with the configured rule. Deterministic given
/// `cfg.seed`.
pub fn train(
    net: &mut Network,
    inputs: &Tensor,
    targets: &Targets,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let n = inputs.shape()[0];
    if n == 0 || targets.is_empty() {
        return Err(FeedbackError::EmptyDataset);
    }
    net.check_loss_pairing(cfg.loss)?;
    let mut state = FeedbackState::init(net, cfg.rule, cfg.seed);
    let mut adam = AdamState::new(net, cfg.lrs, cfg.weight_decay);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.shuffle {
            let mut rng = SeededRng::new(cfg.seed, stream_id("shuffle", &[epoch as u64]));
            rng.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let x = gather_examples(inputs, chunk);
            let t = targets.take(chunk);
            let trace = net.forward(&x)?;
            let batch_loss = crate::net::loss(cfg.loss, trace.output(), &t)?;
            epoch_loss += batch_loss * chunk.len() as f64;
            let lg = crate::net::loss_grad_output(cfg.loss, trace.output(), &t)?;
            let deltas = backward_error_signals(net, &trace, &state, &lg)?;
            weight_update(net, &trace, &deltas, &mut adam, &mut state)?;
        }
        curve.push(epoch_loss / n as f64);
    }
    Ok(TrainReport {
        loss_curve: curve,
        state,
    })
}
