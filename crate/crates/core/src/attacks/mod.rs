//! Adversarial example generators.
//!
//! White-box attacks ([`fgsm`], [`pgd`], [`hag`]) consume model gradients
//! transported by whichever [`FeedbackState`] the caller supplies: BP for
//! the standard attacker assumption, or the deployed rule's state for the
//! "attacker sees the model's own feedback" variant.
//!
//! Black-box attacks ([`boundary_attack`], [`hsja`]) see nothing but a
//! [`DecisionOracle`]: the trait exposes labels only, so they cannot read
//! weights by construction.
//!
//! [`FeedbackState`]: crate::feedback::FeedbackState

mod blackbox;
mod whitebox;

pub use blackbox::{boundary_attack, hsja, DecisionOracle, NetworkOracle};
pub use whitebox::{fgsm, hag, hag_surrogate, pgd};

use thiserror::Error;

use crate::feedback::FeedbackError;
use crate::net::{NetError, Network};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackFamily {
    Fgsm,
    Pgd,
    Hag,
    Boundary,
    Hsja,
}

impl AttackFamily {
    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Pgd => "pgd",
            AttackFamily::Hag => "hag",
            AttackFamily::Boundary => "boundary",
            AttackFamily::Hsja => "hsja",
        }
    }

    pub fn parse(s: &str) -> Option<AttackFamily> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Some(AttackFamily::Fgsm),
            "pgd" => Some(AttackFamily::Pgd),
            "hag" => Some(AttackFamily::Hag),
            "boundary" | "ba" => Some(AttackFamily::Boundary),
            "hsja" | "hopskipjump" => Some(AttackFamily::Hsja),
            _ => None,
        }
    }

    pub fn is_black_box(self) -> bool {
        matches!(self, AttackFamily::Boundary | AttackFamily::Hsja)
    }
}

/// Attack parameters. White-box families use the L-inf budget `epsilon`,
/// step size `alpha`, and iteration count `steps`; black-box families
/// ignore `alpha`/`steps` and honor `query_budget`. `data_range` is the
/// valid pixel interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub family: AttackFamily,
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub query_budget: usize,
    pub data_range: (f64, f64),
}

impl AttackSpec {
    pub fn fgsm(epsilon: f64, data_range: (f64, f64)) -> AttackSpec {
        AttackSpec {
            family: AttackFamily::Fgsm,
            epsilon,
            alpha: epsilon,
            steps: 1,
            query_budget: 0,
            data_range,
        }
    }

    /// PGD with the conventional step size `alpha = epsilon / 3`.
    pub fn pgd(epsilon: f64, steps: usize, data_range: (f64, f64)) -> AttackSpec {
        AttackSpec {
            family: AttackFamily::Pgd,
            epsilon,
            alpha: epsilon / 3.0,
            steps,
            query_budget: 0,
            data_range,
        }
    }

    pub fn hag(epsilon: f64, steps: usize, data_range: (f64, f64)) -> AttackSpec {
        AttackSpec {
            family: AttackFamily::Hag,
            epsilon,
            alpha: if steps == 0 { epsilon } else { epsilon / steps as f64 },
            steps,
            query_budget: 0,
            data_range,
        }
    }

    pub fn boundary(epsilon: f64, query_budget: usize, data_range: (f64, f64)) -> AttackSpec {
        AttackSpec {
            family: AttackFamily::Boundary,
            epsilon,
            alpha: 0.0,
            steps: 0,
            query_budget,
            data_range,
        }
    }

    pub fn hsja(epsilon: f64, query_budget: usize, data_range: (f64, f64)) -> AttackSpec {
        AttackSpec {
            family: AttackFamily::Hsja,
            epsilon,
            alpha: 0.0,
            steps: 0,
            query_budget,
            data_range,
        }
    }

    pub(crate) fn validate(&self, expected: AttackFamily) -> Result<()> {
        if self.family != expected {
            return Err(AttackError::Spec(format!(
                "spec is for {} but {} was invoked",
                self.family.name(),
                expected.name()
            )));
        }
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(AttackError::Spec(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if self.data_range.0 >= self.data_range.1 {
            return Err(AttackError::Spec(format!(
                "data range [{}, {}] is empty",
                self.data_range.0, self.data_range.1
            )));
        }
        match expected {
            AttackFamily::Pgd | AttackFamily::Hag => {
                if self.steps < 1 {
                    return Err(AttackError::Spec("iterated attacks need steps >= 1".into()));
                }
                if self.alpha <= 0.0 && self.epsilon > 0.0 {
                    return Err(AttackError::Spec("step size alpha must be positive".into()));
                }
            }
            AttackFamily::Boundary | AttackFamily::Hsja => {
                if self.query_budget == 0 {
                    return Err(AttackError::Spec(
                        "black-box attacks need a positive query budget".into(),
                    ));
                }
            }
            AttackFamily::Fgsm => {}
        }
        Ok(())
    }
}

/// Outcome of one attack on one input.
#[derive(Debug, Clone)]
pub struct AdversarialResult {
    pub x_adv: Tensor,
    /// Label flipped (classifiers) or the Hamming-shift threshold reached
    /// (hashers).
    pub success: bool,
    /// Model evaluations consumed (oracle queries for black-box attacks,
    /// forward/gradient passes for white-box ones).
    pub queries_used: usize,
    pub achieved_linf: f64,
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack spec: {0}")]
    Spec(String),
    #[error("no adversarial starting point found within the query budget")]
    StartNotFound,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub(crate) type Result<T> = std::result::Result<T, AttackError>;

/// Predicted label for a single-example batch. Multi-output heads use
/// argmax; scalar heads threshold at 0.5 (binary targets in {0,1}).
pub fn predict_label(net: &Network, x: &Tensor) -> Result<usize> {
    let out = net.forward(x)?.output().clone();
    if out.shape()[1] == 1 {
        Ok(usize::from(out.data()[0] > 0.5))
    } else {
        Ok(crate::net::argmax_rows(&out)[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation_catches_bad_epsilon() {
        let mut spec = AttackSpec::fgsm(-0.1, (0.0, 1.0));
        assert!(matches!(
            spec.validate(AttackFamily::Fgsm),
            Err(AttackError::Spec(_))
        ));
        spec.epsilon = 0.1;
        assert!(spec.validate(AttackFamily::Fgsm).is_ok());
        assert!(matches!(
            spec.validate(AttackFamily::Pgd),
            Err(AttackError::Spec(_))
        ));
    }

    #[test]
    fn black_box_specs_need_budget() {
        let spec = AttackSpec::boundary(0.3, 0, (0.0, 1.0));
        assert!(matches!(
            spec.validate(AttackFamily::Boundary),
            Err(AttackError::Spec(_))
        ));
    }
}
