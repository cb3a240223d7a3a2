//! Dataset ingestion: MNIST-format IDX files, CIFAR-10 binary batches,
//! and seeded synthetic Gaussian blobs.
//!
//! All loaders return inputs scaled into [0, 1] and integer class labels.
//! Format errors carry the byte offset at which parsing failed.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use concord_core::rng::{stream_id, SeededRng};
use concord_core::tensor::Tensor;
use thiserror::Error;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073; // 1 label byte + 3 * 32 * 32 pixels

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic 0x{got:08x} at byte 0 (expected 0x{want:08x})")]
    BadMagic { path: PathBuf, got: u32, want: u32 },
    #[error("{path}: truncated at byte {offset} ({what})")]
    Truncated {
        path: PathBuf,
        offset: usize,
        what: &'static str,
    },
    #[error("{path}: {what} at byte {offset}")]
    Malformed {
        path: PathBuf,
        offset: usize,
        what: String,
    },
}

type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Inputs in [0,1] with integer class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Tensor,
    pub classes: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Per-example input shape (without the batch axis).
    pub fn example_shape(&self) -> Vec<usize> {
        self.inputs.shape()[1..].to_vec()
    }

    /// Label bitmaps for retrieval relevance (bit c set for class c).
    pub fn label_sets(&self) -> Vec<u64> {
        self.classes.iter().map(|&c| 1u64 << c).collect()
    }

    /// Keeps the first `limit` examples (after any loader ordering).
    pub fn truncate(&mut self, limit: usize) {
        if limit == 0 || limit >= self.len() {
            return;
        }
        let per: usize = self.inputs.shape()[1..].iter().product();
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = limit;
        let data = self.inputs.data()[..limit * per].to_vec();
        self.inputs = Tensor::new(shape, data).expect("prefix of a valid tensor");
        self.classes.truncate(limit);
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path, what: &'static str) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset,
            what,
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parses an IDX image file (magic 0x00000803, big-endian dims).
fn parse_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            got: magic,
            want: IDX_IMAGES_MAGIC,
        });
    }
    let count = be_u32(&bytes, 4, path, "image count")? as usize;
    let rows = be_u32(&bytes, 8, path, "row count")? as usize;
    let cols = be_u32(&bytes, 12, path, "column count")? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(DataError::Malformed {
            path: path.to_path_buf(),
            offset: bytes.len().min(expected),
            what: format!(
                "header declares {count}x{rows}x{cols} pixels ({expected} bytes) but file has {}",
                bytes.len()
            ),
        });
    }
    Ok((bytes[16..].to_vec(), count, rows, cols))
}

/// Parses an IDX label file (magic 0x00000801).
fn parse_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            got: magic,
            want: IDX_LABELS_MAGIC,
        });
    }
    let count = be_u32(&bytes, 4, path, "label count")? as usize;
    if bytes.len() != 8 + count {
        return Err(DataError::Malformed {
            path: path.to_path_buf(),
            offset: bytes.len().min(8 + count),
            what: format!(
                "header declares {count} labels but file has {} payload bytes",
                bytes.len().saturating_sub(8)
            ),
        });
    }
    Ok(bytes[8..].to_vec())
}

/// Loads an MNIST-format directory: `train-images-idx3-ubyte`,
/// `train-labels-idx1-ubyte`, `t10k-images-idx3-ubyte`,
/// `t10k-labels-idx1-ubyte`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let labels_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let (pixels, count, rows, cols) = parse_idx_images(&images_path)?;
    let labels = parse_idx_labels(&labels_path)?;
    if labels.len() != count {
        return Err(DataError::Malformed {
            path: labels_path,
            offset: 8,
            what: format!("{} labels for {count} images", labels.len()),
        });
    }
    let data: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let inputs = Tensor::new(vec![count, 1, rows, cols], data).map_err(|e| {
        DataError::Malformed {
            path: images_path,
            offset: 16,
            what: e.to_string(),
        }
    })?;
    let classes: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    Ok(Dataset {
        inputs,
        classes,
        num_classes: 10,
    })
}

/// Loads CIFAR-10 binary batches: `data_batch_*.bin` for train,
/// `test_batch.bin` for test. Each record is one label byte followed by
/// 3072 channel-major pixel bytes.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<PathBuf> = match split {
        Split::Train => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .filter(|p| p.exists())
            .collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    if files.is_empty() {
        return Err(DataError::Io {
            path: dir.join("data_batch_1.bin"),
            source: io::Error::new(io::ErrorKind::NotFound, "no CIFAR-10 batch files"),
        });
    }
    let mut data = Vec::new();
    let mut classes = Vec::new();
    for path in files {
        let bytes = read_file(&path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(DataError::Malformed {
                path,
                offset: bytes.len() - bytes.len() % CIFAR_RECORD,
                what: format!(
                    "file length {} is not a multiple of the {CIFAR_RECORD}-byte record",
                    bytes.len()
                ),
            });
        }
        for (r, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            let label = record[0];
            if label > 9 {
                return Err(DataError::Malformed {
                    path,
                    offset: r * CIFAR_RECORD,
                    what: format!("label byte {label} outside 0..=9"),
                });
            }
            classes.push(label as usize);
            data.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    let n = classes.len();
    let inputs = Tensor::new(vec![n, 3, 32, 32], data).expect("record-aligned pixel data");
    Ok(Dataset {
        inputs,
        classes,
        num_classes: 10,
    })
}

/// Seeded Gaussian blobs: `classes` cluster centers in `[0.25, 0.75]^dim`
/// with isotropic noise, clamped to [0, 1]. Train and test splits draw
/// from disjoint streams of the same seed.
pub fn synthetic_blobs(
    dim: usize,
    classes: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
    split: Split,
) -> Dataset {
    let split_salt = match split {
        Split::Train => 0u64,
        Split::Test => 1u64,
    };
    let mut centers = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut rng = SeededRng::new(seed, stream_id("blob-center", &[c as u64]));
        centers.push((0..dim).map(|_| rng.uniform(0.25, 0.75)).collect::<Vec<f64>>());
    }
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let mut rng = SeededRng::new(seed, stream_id("blob-point", &[c as u64, split_salt]));
        for _ in 0..per_class {
            for d in 0..dim {
                let v = centers[c][d] + spread * rng.normal();
                data.push(v.clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    let n = labels.len();
    Dataset {
        inputs: Tensor::new(vec![n, dim], data).expect("clamped finite values"),
        classes: labels,
        num_classes: classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx_images(path: &Path, count: usize, rows: usize, cols: usize) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(count as u32).to_be_bytes());
        bytes.extend_from_slice(&(rows as u32).to_be_bytes());
        bytes.extend_from_slice(&(cols as u32).to_be_bytes());
        for i in 0..count * rows * cols {
            bytes.push((i % 251) as u8);
        }
        fs::write(path, bytes).unwrap();
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        bytes.extend_from_slice(labels);
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn idx_round_trip_shapes_and_range() {
        let dir = tempfile::tempdir().unwrap();
        write_idx_images(&dir.path().join("train-images-idx3-ubyte"), 6, 28, 28);
        write_idx_labels(
            &dir.path().join("train-labels-idx1-ubyte"),
            &[0, 5, 9, 1, 2, 3],
        );
        let ds = load_mnist(dir.path(), Split::Train).unwrap();
        assert_eq!(ds.inputs.shape(), &[6, 1, 28, 28]);
        assert_eq!(ds.classes, vec![0, 5, 9, 1, 2, 3]);
        assert!(ds
            .inputs
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn idx_bad_magic_reports_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train-images-idx3-ubyte");
        fs::write(&path, 99u32.to_be_bytes()).unwrap();
        write_idx_labels(&dir.path().join("train-labels-idx1-ubyte"), &[0]);
        match load_mnist(dir.path(), Split::Train) {
            Err(DataError::BadMagic { got, want, .. }) => {
                assert_eq!(got, 99);
                assert_eq!(want, IDX_IMAGES_MAGIC);
            }
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn idx_length_cross_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train-images-idx3-ubyte");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        bytes.extend_from_slice(&2u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&4u32.to_be_bytes());
        bytes.extend_from_slice(&[7u8; 20]); // should be 32 payload bytes
        fs::write(&path, bytes).unwrap();
        write_idx_labels(&dir.path().join("train-labels-idx1-ubyte"), &[0, 1]);
        assert!(matches!(
            load_mnist(dir.path(), Split::Train),
            Err(DataError::Malformed { .. })
        ));
    }

    #[test]
    fn cifar_labels_in_range_and_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for r in 0..4u8 {
            bytes.push(r % 10);
            bytes.extend(std::iter::repeat_n(128u8, 3072));
        }
        fs::write(dir.path().join("test_batch.bin"), &bytes).unwrap();
        let ds = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!(ds.inputs.shape(), &[4, 3, 32, 32]);
        assert!(ds.classes.iter().all(|&c| c <= 9));
    }

    #[test]
    fn cifar_bad_label_byte_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = vec![11u8];
        bytes.extend(std::iter::repeat_n(0u8, 3072));
        fs::write(dir.path().join("test_batch.bin"), &bytes).unwrap();
        assert!(matches!(
            load_cifar10(dir.path(), Split::Test),
            Err(DataError::Malformed { offset: 0, .. })
        ));
    }

    #[test]
    fn cifar_truncated_record_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("test_batch.bin"), vec![0u8; 3072]).unwrap();
        assert!(matches!(
            load_cifar10(dir.path(), Split::Test),
            Err(DataError::Malformed { .. })
        ));
    }

    #[test]
    fn blobs_are_deterministic_and_split_disjoint() {
        let a = synthetic_blobs(8, 3, 10, 0.05, 7, Split::Train);
        let b = synthetic_blobs(8, 3, 10, 0.05, 7, Split::Train);
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.classes, b.classes);
        let t = synthetic_blobs(8, 3, 10, 0.05, 7, Split::Test);
        assert_ne!(a.inputs, t.inputs);
        assert_eq!(a.len(), 30);
        assert_eq!(a.example_shape(), vec![8]);
    }

    #[test]
    fn truncate_keeps_prefix() {
        let mut ds = synthetic_blobs(4, 2, 10, 0.05, 1, Split::Train);
        ds.truncate(7);
        assert_eq!(ds.len(), 7);
        assert_eq!(ds.inputs.shape(), &[7, 4]);
    }
}
