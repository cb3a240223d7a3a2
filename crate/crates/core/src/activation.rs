//! Layer nonlinearities and their derivatives.

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, a: &Tensor) -> Result<Tensor, TensorError> {
        match self {
            Activation::Relu => a.map("relu", |v| if v > 0.0 { v } else { 0.0 }),
            Activation::Tanh => a.map("tanh", f64::tanh),
            Activation::Identity => Ok(a.clone()),
            Activation::Sigmoid => a.map("sigmoid", sigmoid),
        }
    }

    /// Derivative evaluated at the pre-activation. relu'(0) is taken as 0,
    /// consistent with sign(0) = 0 transmitting no feedback.
    pub fn derivative(self, a: &Tensor) -> Result<Tensor, TensorError> {
        match self {
            Activation::Relu => a.map("relu'", |v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Tanh => a.map("tanh'", |v| {
                let t = v.tanh();
                1.0 - t * t
            }),
            Activation::Identity => Ok(Tensor::filled(a.shape().to_vec(), 1.0)?),
            Activation::Sigmoid => a.map("sigmoid'", |v| {
                let s = sigmoid(v);
                s * (1.0 - s)
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let a = Tensor::new(vec![4], vec![-2.0, -0.5, 0.0, 3.0]).unwrap();
        let h = Activation::Relu.apply(&a).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0, 0.0, 3.0]);
        let d = Activation::Relu.derivative(&a).unwrap();
        assert_eq!(d.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let a = Tensor::new(vec![5], vec![-1.2, -0.3, 0.4, 0.9, 2.1]).unwrap();
        let h = 1e-6;
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Identity] {
            let d = act.derivative(&a).unwrap();
            for (i, &x) in a.data().iter().enumerate() {
                let plus = act
                    .apply(&Tensor::new(vec![1], vec![x + h]).unwrap())
                    .unwrap()
                    .data()[0];
                let minus = act
                    .apply(&Tensor::new(vec![1], vec![x - h]).unwrap())
                    .unwrap()
                    .data()[0];
                let fd = (plus - minus) / (2.0 * h);
                assert!(
                    (fd - d.data()[i]).abs() < 1e-6,
                    "{} at {x}: fd {fd} vs {}",
                    act.name(),
                    d.data()[i]
                );
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        let a = Tensor::new(vec![2], vec![-745.0, 745.0]).unwrap();
        let h = Activation::Sigmoid.apply(&a).unwrap();
        assert!(h.data()[0] >= 0.0 && h.data()[1] <= 1.0);
    }
}
