//! Task losses and their output gradients.
//!
//! All losses reduce a batch to one scalar by averaging per-example (or,
//! for the pairwise hashing loss, per-pair) terms. [`loss_grad_output`]
//! returns the exact gradient of that scalar with respect to the network
//! output, batch factor included, so a finite-difference probe of
//! [`loss`] reproduces it coordinate by coordinate.

use crate::net::NetError;
use crate::tensor::Tensor;

type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Half sum of squared residuals per example.
    SquaredError,
    /// Softmax cross-entropy over logits.
    CrossEntropy,
    /// Contrastive loss on continuous codes: similar pairs are pulled to
    /// small Hamming-surrogate distance, dissimilar pairs pushed beyond a
    /// margin of half the code length.
    PairwiseHash,
}

/// Training targets. Classifier tasks use `Classes`; regression-style
/// targets use `Values`; the pairwise hashing loss derives pair
/// similarity from `LabelSets` bitmaps (shared bit = similar).
#[derive(Debug, Clone)]
pub enum Targets {
    Values(Tensor),
    Classes(Vec<usize>),
    LabelSets(Vec<u64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(t) => t.shape()[0],
            Targets::Classes(c) => c.len(),
            Targets::LabelSets(l) => l.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row subset in the given order; used for mini-batching.
    pub fn take(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Values(t) => {
                let d = t.shape()[1];
                let mut data = Vec::with_capacity(idx.len() * d);
                for &i in idx {
                    data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
                }
                Targets::Values(Tensor::new(vec![idx.len(), d], data).expect("subset of valid"))
            }
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::LabelSets(l) => Targets::LabelSets(idx.iter().map(|&i| l[i]).collect()),
        }
    }
}

fn bad(kind: LossKind, what: &str) -> NetError {
    NetError::LossPairing(format!("{kind:?}: {what}"))
}

fn check_rows(kind: LossKind, output: &Tensor, targets: &Targets) -> Result<(usize, usize)> {
    if output.rank() != 2 {
        return Err(bad(kind, "network output must be a (batch, dim) tensor"));
    }
    let (n, d) = (output.shape()[0], output.shape()[1]);
    if targets.len() != n {
        return Err(bad(kind, "target count differs from batch size"));
    }
    Ok((n, d))
}

/// Batch-mean loss scalar.
pub fn loss(kind: LossKind, output: &Tensor, targets: &Targets) -> Result<f64> {
    let (n, d) = check_rows(kind, output, targets)?;
    match (kind, targets) {
        (LossKind::SquaredError, _) => {
            let want = values_for(targets, n, d)?;
            let mut total = 0.0;
            for (o, t) in output.data().iter().zip(want.data()) {
                let r = o - t;
                total += 0.5 * r * r;
            }
            Ok(total / n as f64)
        }
        (LossKind::CrossEntropy, Targets::Classes(classes)) => {
            let mut total = 0.0;
            for (i, &class) in classes.iter().enumerate() {
                if class >= d {
                    return Err(bad(kind, "class index out of range"));
                }
                let row = &output.data()[i * d..(i + 1) * d];
                total -= log_softmax_at(row, class);
            }
            Ok(total / n as f64)
        }
        (LossKind::CrossEntropy, _) => Err(bad(kind, "needs class-index targets")),
        (LossKind::PairwiseHash, Targets::LabelSets(labels)) => {
            let bits = d as f64;
            let margin = bits / 2.0;
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..n {
                for j in (i + 1)..n {
                    let u_i = &output.data()[i * d..(i + 1) * d];
                    let u_j = &output.data()[j * d..(j + 1) * d];
                    let dot: f64 = u_i.iter().zip(u_j).map(|(a, b)| a * b).sum();
                    let dist = 0.5 * (bits - dot);
                    let similar = labels[i] & labels[j] != 0;
                    total += if similar {
                        dist
                    } else {
                        (margin - dist).max(0.0)
                    };
                    pairs += 1;
                }
            }
            if pairs == 0 {
                return Ok(0.0);
            }
            Ok(total / pairs as f64)
        }
        (LossKind::PairwiseHash, _) => Err(bad(kind, "needs label-set targets")),
    }
}

/// Gradient of [`loss`] with respect to the network output (same shape as
/// `output`, batch factor folded in).
pub fn loss_grad_output(kind: LossKind, output: &Tensor, targets: &Targets) -> Result<Tensor> {
    let (n, d) = check_rows(kind, output, targets)?;
    match (kind, targets) {
        (LossKind::SquaredError, _) => {
            let want = values_for(targets, n, d)?;
            let scale = 1.0 / n as f64;
            let data = output
                .data()
                .iter()
                .zip(want.data())
                .map(|(o, t)| (o - t) * scale)
                .collect();
            Ok(Tensor::new(vec![n, d], data).map_err(super::NetError::at(0))?)
        }
        (LossKind::CrossEntropy, Targets::Classes(classes)) => {
            let mut data = vec![0.0; n * d];
            let scale = 1.0 / n as f64;
            for (i, &class) in classes.iter().enumerate() {
                if class >= d {
                    return Err(bad(kind, "class index out of range"));
                }
                let row = &output.data()[i * d..(i + 1) * d];
                let probs = softmax(row);
                for j in 0..d {
                    let indicator = if j == class { 1.0 } else { 0.0 };
                    data[i * d + j] = (probs[j] - indicator) * scale;
                }
            }
            Ok(Tensor::new(vec![n, d], data).map_err(super::NetError::at(0))?)
        }
        (LossKind::CrossEntropy, _) => Err(bad(kind, "needs class-index targets")),
        (LossKind::PairwiseHash, Targets::LabelSets(labels)) => {
            let bits = d as f64;
            let margin = bits / 2.0;
            let mut grad = vec![0.0; n * d];
            let pairs = n * (n - 1) / 2;
            if pairs == 0 {
                return Ok(Tensor::zeros(vec![n, d]));
            }
            let scale = 1.0 / pairs as f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    let u_i: Vec<f64> = output.data()[i * d..(i + 1) * d].to_vec();
                    let u_j: Vec<f64> = output.data()[j * d..(j + 1) * d].to_vec();
                    let dot: f64 = u_i.iter().zip(&u_j).map(|(a, b)| a * b).sum();
                    let dist = 0.5 * (bits - dot);
                    let similar = labels[i] & labels[j] != 0;
                    // d(dist)/d(u_i) = -u_j / 2 and symmetrically for u_j.
                    let coeff = if similar {
                        -0.5
                    } else if margin - dist > 0.0 {
                        0.5
                    } else {
                        0.0
                    };
                    if coeff != 0.0 {
                        for t in 0..d {
                            grad[i * d + t] += coeff * u_j[t] * scale;
                            grad[j * d + t] += coeff * u_i[t] * scale;
                        }
                    }
                }
            }
            Ok(Tensor::new(vec![n, d], grad).map_err(super::NetError::at(0))?)
        }
        (LossKind::PairwiseHash, _) => Err(bad(kind, "needs label-set targets")),
    }
}

fn values_for(targets: &Targets, n: usize, d: usize) -> Result<Tensor> {
    match targets {
        Targets::Values(t) => {
            if t.shape() != [n, d] {
                return Err(bad(LossKind::SquaredError, "target shape differs from output"));
            }
            Ok(t.clone())
        }
        Targets::Classes(classes) => {
            let mut data = vec![0.0; n * d];
            for (i, &c) in classes.iter().enumerate() {
                if c >= d {
                    return Err(bad(LossKind::SquaredError, "class index out of range"));
                }
                data[i * d + c] = 1.0;
            }
            Ok(Tensor::new(vec![n, d], data).expect("one-hot is valid"))
        }
        Targets::LabelSets(_) => Err(bad(
            LossKind::SquaredError,
            "label-set targets only pair with the hashing loss",
        )),
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(row: &[f64], class: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    (row[class] - max) - log_sum
}
