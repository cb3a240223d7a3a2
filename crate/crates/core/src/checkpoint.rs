//! Versioned binary model checkpoints.
//!
//! Layout (all integers little-endian, all floats stored as raw IEEE-754
//! bit patterns, so a byte-identical file reloads to bit-identical
//! forward outputs):
//!
//! ```text
//! magic   b"CNET"
//! version u32 = 1
//! seed    u64                      init seed recorded at construction
//! head    u8 tag (0 classifier, 1 hasher) + u32 output dim
//! inshape u32 rank + u32 dims...
//! layers  u32 count, then per layer:
//!   kind      u8 (0 dense, 1 conv2d, 2 flatten, 3 maxpool2x2)
//!   act       u8 (0 relu, 1 tanh, 2 identity, 3 sigmoid)
//!   kind params (dense: in,out u32; conv: in_c,out_c,k u32 + pad u8)
//!   weights   u8 present flag + shape + f64 bits
//!   bias      u8 present flag + shape + f64 bits
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::activation::Activation;
use crate::net::{Head, Layer, LayerKind, NetError, Network, Padding};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CNET";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint magic at byte 0")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

type Result<T> = std::result::Result<T, CheckpointError>;

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let bytes = to_bytes(net);
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

pub fn to_bytes(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&net.init_seed().to_le_bytes());
    match net.head() {
        Head::Classifier { classes } => {
            out.push(0);
            out.extend_from_slice(&(classes as u32).to_le_bytes());
        }
        Head::Hasher { bits } => {
            out.push(1);
            out.extend_from_slice(&(bits as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(net.input_shape().len() as u32).to_le_bytes());
    for &d in net.input_shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.num_layers() as u32).to_le_bytes());
    for layer in net.layers() {
        match &layer.kind {
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                out.push(0);
                out.push(activation_tag(layer.activation));
                out.extend_from_slice(&(*in_features as u32).to_le_bytes());
                out.extend_from_slice(&(*out_features as u32).to_le_bytes());
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                out.push(1);
                out.push(activation_tag(layer.activation));
                out.extend_from_slice(&(*in_channels as u32).to_le_bytes());
                out.extend_from_slice(&(*out_channels as u32).to_le_bytes());
                out.extend_from_slice(&(*kernel as u32).to_le_bytes());
                out.push(match padding {
                    Padding::Valid => 0,
                    Padding::Same => 1,
                });
            }
            LayerKind::Flatten => {
                out.push(2);
                out.push(activation_tag(layer.activation));
            }
            LayerKind::MaxPool2x2 => {
                out.push(3);
                out.push(activation_tag(layer.activation));
            }
        }
        write_opt_tensor(&mut out, layer.weights.as_ref());
        write_opt_tensor(&mut out, layer.bias.as_ref());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let seed = r.u64()?;
    let head = match r.u8()? {
        0 => Head::Classifier {
            classes: r.u32()? as usize,
        },
        1 => Head::Hasher {
            bits: r.u32()? as usize,
        },
        t => return Err(CheckpointError::Corrupt(format!("head tag {t}"))),
    };
    let rank = r.u32()? as usize;
    let mut input_shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        input_shape.push(r.u32()? as usize);
    }
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind_tag = r.u8()?;
        let activation = activation_from_tag(r.u8()?)?;
        let kind = match kind_tag {
            0 => LayerKind::Dense {
                in_features: r.u32()? as usize,
                out_features: r.u32()? as usize,
            },
            1 => LayerKind::Conv2d {
                in_channels: r.u32()? as usize,
                out_channels: r.u32()? as usize,
                kernel: r.u32()? as usize,
                padding: match r.u8()? {
                    0 => Padding::Valid,
                    1 => Padding::Same,
                    p => return Err(CheckpointError::Corrupt(format!("padding tag {p}"))),
                },
            },
            2 => LayerKind::Flatten,
            3 => LayerKind::MaxPool2x2,
            t => return Err(CheckpointError::Corrupt(format!("layer tag {t}"))),
        };
        let weights = read_opt_tensor(&mut r)?;
        let bias = read_opt_tensor(&mut r)?;
        layers.push(Layer {
            kind,
            weights,
            bias,
            activation,
        });
    }
    Ok(Network::from_parts(layers, head, input_shape, seed)?)
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Identity => 2,
        Activation::Sigmoid => 3,
    }
}

fn activation_from_tag(t: u8) -> Result<Activation> {
    Ok(match t {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        2 => Activation::Identity,
        3 => Activation::Sigmoid,
        _ => return Err(CheckpointError::Corrupt(format!("activation tag {t}"))),
    })
}

fn write_opt_tensor(out: &mut Vec<u8>, t: Option<&Tensor>) {
    match t {
        None => out.push(0),
        Some(t) => {
            out.push(1);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
    }
}

fn read_opt_tensor(r: &mut Reader<'_>) -> Result<Option<Tensor>> {
    match r.u8()? {
        0 => Ok(None),
        1 => {
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_bits(r.u64()?));
            }
            Tensor::new(shape, data)
                .map(Some)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))
        }
        t => Err(CheckpointError::Corrupt(format!("tensor flag {t}"))),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Convenience wrapper for reading a file that may not exist yet.
pub fn load_if_exists(path: &Path) -> Result<Option<Network>> {
    if path.exists() {
        Ok(Some(load(path)?))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Head, LayerSpec};
    use crate::rng::SeededRng;
    use crate::Activation;

    fn sample_net() -> Network {
        Network::new(
            vec![1, 8, 8],
            &[
                LayerSpec::conv(3, 3, Padding::Same, Activation::Relu),
                LayerSpec::MaxPool2x2,
                LayerSpec::Flatten,
                LayerSpec::dense(10, Activation::Tanh),
            ],
            Head::Hasher { bits: 8 },
            2024,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_forward_bits() {
        let net = sample_net();
        let bytes = to_bytes(&net);
        let reloaded = from_bytes(&bytes).unwrap();
        let mut rng = SeededRng::new(1, 0);
        let x = crate::rng::sample_uniform(&mut rng, vec![2, 1, 8, 8], 0.0, 1.0).unwrap();
        let a = net.forward(&x).unwrap();
        let b = reloaded.forward(&x).unwrap();
        assert_eq!(a.output(), b.output());
        // And the serialized form is stable byte for byte.
        assert_eq!(bytes, to_bytes(&reloaded));
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let net = sample_net();
        let mut bytes = to_bytes(&net);
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn truncation_is_detected() {
        let net = sample_net();
        let bytes = to_bytes(&net);
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(
            from_bytes(cut),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = sample_net();
        save(&net, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(to_bytes(&net), to_bytes(&back));
        assert!(load_if_exists(&dir.path().join("missing.ckpt"))
            .unwrap()
            .is_none());
    }
}
