//! Hashing-based retrieval: sign binarization, Hamming ranking, and
//! mAP@k evaluation.
//!
//! Codes are vectors of +-1 bits. Relevance between a query and a
//! database item is a non-empty label intersection (multi-label
//! convention). Average precision is normalized by the number of
//! relevant items actually retrieved in the top k, and ranking ties are
//! broken by ascending item id so results are reproducible.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("hash codes differ in length: {lhs} vs {rhs}")]
    LengthMismatch { lhs: usize, rhs: usize },
    #[error("retrieval index is empty")]
    EmptyIndex,
    #[error("index arrays differ in length")]
    RaggedIndex,
    #[error("item ids must be unique (duplicate {0})")]
    DuplicateId(u64),
    #[error("k cutoff must be at least 1")]
    BadCutoff,
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt index file: {0} at byte {1}")]
    Corrupt(&'static str, usize),
}

type Result<T> = std::result::Result<T, RetrievalError>;

/// Fixed-length vector of +-1 bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashCode {
    bits: Vec<i8>,
}

impl HashCode {
    pub fn new(bits: Vec<i8>) -> Option<HashCode> {
        if bits.iter().all(|&b| b == 1 || b == -1) {
            Some(HashCode { bits })
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[i8] {
        &self.bits
    }
}

/// Sign binarization of continuous codes. Zero activations map to -1:
/// codes must be strictly +-1, so the tie is broken deterministically
/// (unlike the feedback transport, where sign(0)=0 transmits nothing).
pub fn binarize(u: &Tensor) -> HashCode {
    HashCode {
        bits: u.data().iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect(),
    }
}

/// Binarizes each row of a `(n, bits)` tensor.
pub fn binarize_rows(u: &Tensor) -> Vec<HashCode> {
    let (n, d) = (u.shape()[0], u.shape()[1]);
    (0..n)
        .map(|i| {
            HashCode {
                bits: u.data()[i * d..(i + 1) * d]
                    .iter()
                    .map(|&v| if v > 0.0 { 1 } else { -1 })
                    .collect(),
            }
        })
        .collect()
}

/// Number of differing positions; equals `(k - a.b) / 2` for +-1 codes.
pub fn hamming(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.len() != b.len() {
        return Err(RetrievalError::LengthMismatch {
            lhs: a.len(),
            rhs: b.len(),
        });
    }
    Ok(a.bits
        .iter()
        .zip(&b.bits)
        .filter(|(x, y)| x != y)
        .count() as u32)
}

/// Immutable database of codes with parallel labels and ids.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    codes: Vec<HashCode>,
    labels: Vec<u64>,
    ids: Vec<u64>,
}

impl RetrievalIndex {
    /// Labels are bitmaps; two items are relevant to each other when the
    /// bitmaps intersect.
    pub fn new(codes: Vec<HashCode>, labels: Vec<u64>, ids: Vec<u64>) -> Result<RetrievalIndex> {
        if codes.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if codes.len() != labels.len() || codes.len() != ids.len() {
            return Err(RetrievalError::RaggedIndex);
        }
        let mut seen = std::collections::HashSet::with_capacity(ids.len());
        for &id in &ids {
            if !seen.insert(id) {
                return Err(RetrievalError::DuplicateId(id));
            }
        }
        Ok(RetrievalIndex { codes, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[HashCode] {
        &self.codes
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn code_bits(&self) -> usize {
        self.codes[0].len()
    }
}

/// Item ids by ascending Hamming distance to the query, ties broken by
/// ascending id.
pub fn rank(query: &HashCode, index: &RetrievalIndex) -> Result<Vec<u64>> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let mut scored: Vec<(u32, u64)> = index
        .codes
        .iter()
        .zip(&index.ids)
        .map(|(c, &id)| Ok((hamming(query, c)?, id)))
        .collect::<Result<_>>()?;
    scored.sort_unstable();
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// Mean average precision over the top `k` ranked results.
///
/// `AP_k = sum_{i<=k} P(i) rel(i) / max(1, relevant retrieved in top k)`;
/// queries that retrieve nothing relevant contribute zero.
pub fn map_at_k(
    queries: &[(HashCode, u64)],
    index: &RetrievalIndex,
    k_cutoff: usize,
) -> Result<f64> {
    if k_cutoff < 1 {
        return Err(RetrievalError::BadCutoff);
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if queries.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (code, labels) in queries {
        let ranked = rank(code, index)?;
        let depth = k_cutoff.min(ranked.len());
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (pos, id) in ranked[..depth].iter().enumerate() {
            let idx = index.ids.iter().position(|i| i == id).expect("ranked id");
            if labels & index.labels[idx] != 0 {
                hits += 1;
                precision_sum += hits as f64 / (pos + 1) as f64;
            }
        }
        total += precision_sum / hits.max(1) as f64;
    }
    Ok(total / queries.len() as f64)
}

// --- persistence ------------------------------------------------------

const MAGIC: &[u8; 4] = b"HIDX";
const VERSION: u32 = 1;

/// Serializes the index: header, then one record per item of
/// `(id u64, bit-packed code, label bitmap u64)`. Codes pack bit `j`
/// into byte `j / 8` at position `j % 8` (LSB first), with +1 encoded
/// as a set bit.
pub fn save_index(index: &RetrievalIndex, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(index.code_bits() as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    let nbytes = index.code_bits().div_ceil(8);
    for i in 0..index.len() {
        out.extend_from_slice(&index.ids[i].to_le_bytes());
        let mut packed = vec![0u8; nbytes];
        for (j, &b) in index.codes[i].bits().iter().enumerate() {
            if b == 1 {
                packed[j / 8] |= 1 << (j % 8);
            }
        }
        out.extend_from_slice(&packed);
        out.extend_from_slice(&index.labels[i].to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<RetrievalIndex> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(RetrievalError::Corrupt("truncated", *pos));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(RetrievalError::Corrupt("bad magic", 0));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(RetrievalError::Corrupt("unsupported version", 4));
    }
    let bits = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    let nbytes = bits.div_ceil(8);
    let mut codes = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        let packed = take(&mut pos, nbytes)?;
        let mut code = Vec::with_capacity(bits);
        for j in 0..bits {
            let set = packed[j / 8] >> (j % 8) & 1 == 1;
            code.push(if set { 1 } else { -1 });
        }
        codes.push(HashCode { bits: code });
        labels.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
    }
    RetrievalIndex::new(codes, labels, ids)
}
