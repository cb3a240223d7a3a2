//! Dense row-major f64 tensors.
//!
//! This is deliberately a minimal kernel, not a BLAS: flat `Vec<f64>`
//! storage with an explicit shape, so any test oracle can re-index the
//! same data with plain loops. Two invariants hold for every value that
//! leaves this module:
//!
//! - `product(shape) == data.len()`
//! - every element is finite
//!
//! Operations that receive or would produce a non-finite value return
//! [`TensorError::NonFinite`] instead of letting NaN/Inf propagate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} declares {expected} elements but data holds {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: non-finite value {value} at flat index {index}")]
    NonFinite {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("invalid sampling range: lo {lo} must be strictly below hi {hi}")]
    BadRange { lo: f64, hi: f64 },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} contains a zero dimension")]
    ZeroDim { shape: Vec<usize> },
}

type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a tensor, validating element count and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim { shape });
        }
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        let t = Tensor { shape, data };
        t.ensure_finite("new")?;
        Ok(t)
    }

    /// Builds a tensor without the finiteness scan. Callers guarantee the
    /// data is finite; kernels that accumulate (matmul, conv) re-validate
    /// their outputs instead of their inputs.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor::from_raw(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = numel(&shape);
        Tensor::new(shape, vec![value; n])
    }

    /// 2-D convenience constructor used heavily in tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![r, c],
                    rhs: vec![r, row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Consumes the tensor and returns its flat data.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn ensure_finite(&self, op: &'static str) -> Result<()> {
        for (index, &value) in self.data.iter().enumerate() {
            if !value.is_finite() {
                return Err(TensorError::NonFinite { op, index, value });
            }
        }
        Ok(())
    }

    /// Reinterprets the flat data under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim { shape });
        }
        if numel(&shape) != self.data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected: self.data.len(),
                actual: self.data.len(),
            });
        }
        Ok(Tensor::from_raw(shape, self.data.clone()))
    }

    /// Row-major flat index for a 2-D tensor.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::BadRank {
                op: "matmul",
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        if rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        self.ensure_finite("matmul")?;
        rhs.ensure_finite("matmul")?;
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0; m * n];
        // i-k-j loop order keeps the rhs row contiguous in the inner loop.
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &rhs.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] += a * row[j];
                }
            }
        }
        let out = Tensor::from_raw(vec![m, n], out);
        out.ensure_finite("matmul")?;
        Ok(out)
    }

    /// Elementwise product of same-shaped tensors.
    pub fn hadamard(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(TensorError::ShapeMismatch {
                op: "hadamard",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        self.ensure_finite("hadamard")?;
        rhs.ensure_finite("hadamard")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor::from_raw(self.shape.clone(), data))
    }

    /// Elementwise sign with sign(0) = 0; every output entry is -1, 0, or +1.
    pub fn sign(&self) -> Result<Tensor> {
        self.ensure_finite("sign")?;
        let data = self
            .data
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Tensor::from_raw(self.shape.clone(), data))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::BadRank {
                op: "transpose",
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_raw(vec![c, r], data))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with("add", rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with("sub", rhs, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Result<Tensor> {
        self.map("scale", |v| v * factor)
    }

    pub fn abs(&self) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|v| v.abs()).collect())
    }

    /// Applies `f` elementwise; the result is re-validated so a closure
    /// cannot smuggle NaN/Inf into circulation.
    pub fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        let t = Tensor::from_raw(self.shape.clone(), data);
        t.ensure_finite(op)?;
        Ok(t)
    }

    fn zip_with(
        &self,
        op: &'static str,
        rhs: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let data: Vec<f64> = self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect();
        let t = Tensor::from_raw(self.shape.clone(), data);
        t.ensure_finite(op)?;
        Ok(t)
    }

    pub fn dot(&self, rhs: &Tensor) -> Result<f64> {
        if self.shape != rhs.shape {
            return Err(TensorError::ShapeMismatch {
                op: "dot",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        Ok(self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).sum())
    }

    /// Largest absolute elementwise difference between same-shaped tensors.
    pub fn max_abs_diff(&self, rhs: &Tensor) -> Result<f64> {
        if self.shape != rhs.shape {
            return Err(TensorError::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Clamps every element into `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if lo > hi {
            return Err(TensorError::BadRange { lo, hi });
        }
        self.map("clamp", |v| v.min(hi).max(lo))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    /// Independent brute-force matmul: direct definition, no shared code
    /// with `Tensor::matmul`.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    fn random_tensor(rng: &mut SeededRng, shape: Vec<usize>) -> Tensor {
        crate::rng::sample_uniform(rng, shape, -1.0, 1.0).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_row_times_column() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = SeededRng::new(7, 0);
        let a = random_tensor(&mut rng, vec![5, 5]);
        let b = random_tensor(&mut rng, vec![5, 5]);
        let got = a.matmul(&b).unwrap();
        let want = matmul_oracle(&a, &b);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "got {g}, oracle {w}");
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        let err = a.matmul(&b).unwrap_err();
        match err {
            TensorError::ShapeMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn hadamard_annihilator_and_hand_arithmetic() {
        let a = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let z = Tensor::zeros(vec![3]);
        assert_eq!(a.hadamard(&z).unwrap().data(), &[0.0, 0.0, 0.0]);

        let p = Tensor::new(vec![2], vec![2.0, -3.0]).unwrap();
        let q = Tensor::new(vec![2], vec![4.0, 5.0]).unwrap();
        assert_eq!(p.hadamard(&q).unwrap().data(), &[8.0, -15.0]);
    }

    #[test]
    fn hadamard_commutes() {
        let mut rng = SeededRng::new(11, 0);
        let a = random_tensor(&mut rng, vec![4, 4]);
        let b = random_tensor(&mut rng, vec![4, 4]);
        assert_eq!(a.hadamard(&b).unwrap(), b.hadamard(&a).unwrap());
    }

    #[test]
    fn hadamard_shape_mismatch() {
        let a = Tensor::zeros(vec![2, 2]);
        let b = Tensor::zeros(vec![4]);
        assert!(matches!(
            a.hadamard(&b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn sign_definition_and_idempotence() {
        let t = Tensor::from_rows(&[vec![2.0, -3.0], vec![0.0, 1.0]]).unwrap();
        let s = t.sign().unwrap();
        assert_eq!(s.data(), &[1.0, -1.0, 0.0, 1.0]);
        assert_eq!(s.sign().unwrap(), s);

        let neg = Tensor::filled(vec![5], -0.25).unwrap();
        assert!(neg.sign().unwrap().data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn sample_uniform_mean_close_to_half() {
        let mut rng = SeededRng::new(99, 3);
        let t = crate::rng::sample_uniform(&mut rng, vec![10_000], 0.0, 1.0).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn sample_uniform_is_deterministic_per_seed() {
        let mut a = SeededRng::new(5, 17);
        let mut b = SeededRng::new(5, 17);
        let ta = crate::rng::sample_uniform(&mut a, vec![32], -2.0, 2.0).unwrap();
        let tb = crate::rng::sample_uniform(&mut b, vec![32], -2.0, 2.0).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn sample_uniform_degenerate_range_errors() {
        let mut rng = SeededRng::new(1, 0);
        assert!(matches!(
            crate::rng::sample_uniform(&mut rng, vec![4], 1.0, 1.0),
            Err(TensorError::BadRange { .. })
        ));
    }

    #[test]
    fn nan_input_raises() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite { .. })
        ));
        // A closure cannot launder NaN through map either.
        let t = Tensor::zeros(vec![2]);
        assert!(matches!(
            t.map("bad", |v| v / v),
            Err(TensorError::NonFinite { .. })
        ));
        // Ops scan operands, so even a raw tensor cannot propagate NaN.
        let evil = Tensor::from_raw(vec![1], vec![f64::NAN]);
        assert!(evil.sign().is_err());
        assert!(evil.hadamard(&evil).is_err());
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(
            Tensor::new(vec![0, 3], vec![]),
            Err(TensorError::ZeroDim { .. })
        ));
    }

    proptest! {
        #[test]
        fn matmul_associative(seed in 0u64..512) {
            let mut rng = SeededRng::new(seed, 1);
            let m = 2 + (seed % 3) as usize;
            let k = 2 + (seed % 4) as usize;
            let n = 2 + (seed % 2) as usize;
            let p = 3;
            let a = random_tensor(&mut rng, vec![m, k]);
            let b = random_tensor(&mut rng, vec![k, n]);
            let c = random_tensor(&mut rng, vec![n, p]);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (l, r) in left.data().iter().zip(right.data()) {
                let scale = l.abs().max(r.abs()).max(1e-12);
                prop_assert!(((l - r).abs() / scale) < 1e-9);
            }
        }

        #[test]
        fn sign_entries_are_ternary(seed in 0u64..256) {
            let mut rng = SeededRng::new(seed, 2);
            let t = random_tensor(&mut rng, vec![6, 3]);
            let s = t.sign().unwrap();
            prop_assert!(s.data().iter().all(|&v| v == -1.0 || v == 0.0 || v == 1.0));
        }

        #[test]
        fn abs_times_sign_reconstructs(seed in 0u64..256) {
            let mut rng = SeededRng::new(seed, 3);
            // Entries drawn away from zero so the decomposition is exact.
            let t = crate::rng::sample_uniform(&mut rng, vec![5, 4], 0.5, 2.0)
                .unwrap()
                .hadamard(&random_tensor(&mut rng, vec![5, 4]).sign().unwrap())
                .unwrap();
            prop_assume!(t.data().iter().all(|&v| v != 0.0));
            let rebuilt = t.abs().hadamard(&t.sign().unwrap()).unwrap();
            prop_assert_eq!(rebuilt, t);
        }
    }
}
