//! concord-core: a desk-scale neural-network training engine with pluggable
//! credit-assignment rules.
//!
//! The crate is organized around five pieces:
//!
//! - [`tensor`] / [`rng`]: a minimal dense f64 tensor and deterministic
//!   seeded randomness with independent streams.
//! - [`net`]: feedforward networks (dense / conv2d / flatten / 2x2 max-pool),
//!   forward traces, and losses.
//! - [`feedback`]: the credit-assignment rules (BP, FA, uSF, frSF, brSF),
//!   error-signal transport, the ADAM optimizer, and the training loop.
//! - [`attacks`]: white-box (FGSM, PGD, HAG) and decision-based black-box
//!   (Boundary, HopSkipJump) adversarial example generators.
//! - [`retrieval`]: sign binarization, Hamming ranking, and mAP@k evaluation
//!   for hashing-based retrieval.
//!
//! Everything is f64 and deterministic given a seed; there is no global
//! state. Tensors are immutable values once returned and safe to share
//! across threads. Generators are single-owner: parallel call sites split
//! distinct stream ids instead of sharing one generator.

pub mod activation;
pub mod attacks;
pub mod checkpoint;
pub mod feedback;
pub mod net;
pub mod retrieval;
pub mod rng;
pub mod tensor;

pub use activation::Activation;
pub use feedback::{AdamState, FeedbackRule, FeedbackState, LearningRates, TrainConfig};
pub use net::{Head, Layer, LayerKind, LossKind, Network, Targets};
pub use rng::SeededRng;
pub use tensor::{Tensor, TensorError};
