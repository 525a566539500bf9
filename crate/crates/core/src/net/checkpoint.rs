//! `SOPT` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SOPT"  u16 version
//! u32 C  u32 H  u32 W  u32 K  u32 layer_count
//! per layer: u32 tag [dims...]     1=Conv(out,kernel,stride,pad) 2=ReLU
//!                                  3=MaxPool2 4=Flatten 5=Dense(out)
//! u32 class_count, per class: u32 byte_len, UTF-8 bytes
//! per parameterized layer: weight TENS1 block, bias TENS1 block
//! ```

use std::fs;
use std::io::Read;
use std::path::Path;

use super::{LayerParams, LayerSpec, RecognitionNet};
use crate::error::{Error, Result};
use crate::tensor::{read_exact, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SOPT";
pub const CHECKPOINT_VERSION: u16 = 1;

const TAG_CONV: u32 = 1;
const TAG_RELU: u32 = 2;
const TAG_POOL: u32 = 3;
const TAG_FLATTEN: u32 = 4;
const TAG_DENSE: u32 = 5;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn get_u32<R: Read>(r: &mut R, what: &'static str) -> Result<usize> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b) as usize)
}

impl RecognitionNet {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for d in self.input {
            put_u32(&mut buf, d);
        }
        put_u32(&mut buf, self.classes.len());
        put_u32(&mut buf, self.layers.len());
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                } => {
                    put_u32(&mut buf, TAG_CONV as usize);
                    for d in [out_channels, kernel, stride, pad] {
                        put_u32(&mut buf, d);
                    }
                }
                LayerSpec::Relu => put_u32(&mut buf, TAG_RELU as usize),
                LayerSpec::MaxPool2 => put_u32(&mut buf, TAG_POOL as usize),
                LayerSpec::Flatten => put_u32(&mut buf, TAG_FLATTEN as usize),
                LayerSpec::Dense { out_features } => {
                    put_u32(&mut buf, TAG_DENSE as usize);
                    put_u32(&mut buf, out_features);
                }
            }
        }
        put_u32(&mut buf, self.classes.len());
        for name in &self.classes {
            put_u32(&mut buf, name.len());
            buf.extend_from_slice(name.as_bytes());
        }
        for p in self.params.iter().flatten() {
            p.weight.write_tens1(&mut buf).expect("Vec write");
            p.bias.write_tens1(&mut buf).expect("Vec write");
        }
        buf
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Parses a checkpoint. Nothing is returned unless the whole file parses.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "checkpoint magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let mut v = [0u8; 2];
        read_exact(&mut r, &mut v, "checkpoint version")?;
        let version = u16::from_le_bytes(v);
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                expected: CHECKPOINT_VERSION as u32,
                found: version as u32,
            });
        }
        let mut input = [0usize; 3];
        for d in &mut input {
            *d = get_u32(&mut r, "input shape")?;
        }
        let k = get_u32(&mut r, "class count")?;
        let n_layers = get_u32(&mut r, "layer count")?;
        let mut layers = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let layer = match get_u32(&mut r, "layer tag")? as u32 {
                TAG_CONV => LayerSpec::Conv {
                    out_channels: get_u32(&mut r, "conv dims")?,
                    kernel: get_u32(&mut r, "conv dims")?,
                    stride: get_u32(&mut r, "conv dims")?,
                    pad: get_u32(&mut r, "conv dims")?,
                },
                TAG_RELU => LayerSpec::Relu,
                TAG_POOL => LayerSpec::MaxPool2,
                TAG_FLATTEN => LayerSpec::Flatten,
                TAG_DENSE => LayerSpec::Dense {
                    out_features: get_u32(&mut r, "dense dims")?,
                },
                other => {
                    return Err(Error::Malformed {
                        what: "checkpoint",
                        detail: format!("unknown layer tag {other}"),
                    })
                }
            };
            layers.push(layer);
        }
        let n_classes = get_u32(&mut r, "class table")?;
        if n_classes != k {
            return Err(Error::Malformed {
                what: "checkpoint",
                detail: format!("class table has {n_classes} names for {k} classes"),
            });
        }
        let mut classes = Vec::with_capacity(k.min(1024));
        for _ in 0..n_classes {
            let len = get_u32(&mut r, "class name")?;
            if len > r.len() {
                return Err(Error::Truncation { what: "class name" });
            }
            let (name, rest) = r.split_at(len);
            r = rest;
            classes.push(String::from_utf8(name.to_vec()).map_err(|e| Error::Malformed {
                what: "checkpoint class name",
                detail: e.to_string(),
            })?);
        }
        let mut params = Vec::with_capacity(layers.len());
        for layer in &layers {
            if layer.has_params() {
                let weight = Tensor::read_tens1(&mut r)?;
                let bias = Tensor::read_tens1(&mut r)?;
                params.push(Some(LayerParams { weight, bias }));
            } else {
                params.push(None);
            }
        }
        if !r.is_empty() {
            return Err(Error::Malformed {
                what: "checkpoint",
                detail: format!("{} trailing bytes", r.len()),
            });
        }
        RecognitionNet::from_parts(layers, params, input, classes)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
