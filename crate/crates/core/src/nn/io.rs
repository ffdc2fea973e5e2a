//! Binary model files.
//!
//! Layout (all integers `u32` little-endian, all weights `f32` little-endian):
//!
//! ```text
//! magic "PXNN" | version | channels | width | height | classes | layer count
//! per layer: kind (u8) followed by
//!   0 conv2d    in, out, kernel, stride, padding (u8: 0 valid, 1 same), weights, bias
//!   1 dense     in, out, weights, bias
//!   2 relu
//!   3 max_pool  size, stride
//!   4 batch_norm channels, eps (f32), gamma, beta, mean, var
//!   5 softmax
//! every weight blob is a u32 count followed by that many f32 values
//! ```

use std::fs;
use std::path::Path;

use super::layer::{BatchNorm, Conv2d, Dense, Layer, MaxPool, Padding};
use super::model::Model;
use crate::error::{Error, Result};
use crate::image::ImageShape;

pub const MAGIC: &[u8; 4] = b"PXNN";
pub const VERSION: u32 = 1;

const MAX_DIM: u32 = 1 << 24;

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let input = model.input_shape();
    w.usize(input.channels);
    w.usize(input.width);
    w.usize(input.height);
    w.usize(model.num_classes());
    w.usize(model.layers().len());
    for layer in model.layers() {
        match layer {
            Layer::Conv2d(c) => {
                w.0.push(0);
                for v in [c.in_channels, c.out_channels, c.kernel, c.stride] {
                    w.usize(v);
                }
                w.0.push(match c.padding {
                    Padding::Valid => 0,
                    Padding::Same => 1,
                });
                w.blob(&c.weights);
                w.blob(&c.bias);
            }
            Layer::Dense(d) => {
                w.0.push(1);
                w.usize(d.inputs);
                w.usize(d.outputs);
                w.blob(&d.weights);
                w.blob(&d.bias);
            }
            Layer::Relu => w.0.push(2),
            Layer::MaxPool(p) => {
                w.0.push(3);
                w.usize(p.size);
                w.usize(p.stride);
            }
            Layer::BatchNorm(b) => {
                w.0.push(4);
                w.usize(b.channels);
                w.0.extend_from_slice(&b.eps.to_le_bytes());
                for v in [&b.gamma, &b.beta, &b.mean, &b.var] {
                    w.blob(v);
                }
            }
            Layer::Softmax => w.0.push(5),
        }
    }
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let channels = r.dim()?;
    let width = r.dim()?;
    let height = r.dim()?;
    let classes = r.dim()?;
    let count = r.dim()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let kind = r.take(1)?[0];
        let layer = match kind {
            0 => {
                let in_channels = r.dim()?;
                let out_channels = r.dim()?;
                let kernel = r.dim()?;
                let stride = r.dim()?;
                let padding = match r.take(1)?[0] {
                    0 => Padding::Valid,
                    1 => Padding::Same,
                    p => return Err(Error::Format(format!("unknown padding tag {p}"))),
                };
                Layer::Conv2d(Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weights: r.blob()?,
                    bias: r.blob()?,
                })
            }
            1 => {
                let inputs = r.dim()?;
                let outputs = r.dim()?;
                Layer::Dense(Dense {
                    inputs,
                    outputs,
                    weights: r.blob()?,
                    bias: r.blob()?,
                })
            }
            2 => Layer::Relu,
            3 => Layer::MaxPool(MaxPool {
                size: r.dim()?,
                stride: r.dim()?,
            }),
            4 => {
                let channels = r.dim()?;
                let eps = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
                Layer::BatchNorm(BatchNorm {
                    channels,
                    eps,
                    gamma: r.blob()?,
                    beta: r.blob()?,
                    mean: r.blob()?,
                    var: r.blob()?,
                })
            }
            5 => Layer::Softmax,
            k => return Err(Error::Format(format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model",
            bytes.len() - r.pos
        )));
    }
    Model::new(ImageShape::new(channels, width, height), classes, layers)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("model dimension exceeds u32"));
    }

    fn blob(&mut self, values: &[f32]) {
        self.usize(values.len());
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Length(format!("model file ends at byte {}", self.bytes.len())))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self.u32()?;
        if v > MAX_DIM {
            return Err(Error::Format(format!("implausible dimension {v}")));
        }
        Ok(v as usize)
    }

    fn blob(&mut self) -> Result<Vec<f32>> {
        let n = self.dim()?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("blob too large".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
