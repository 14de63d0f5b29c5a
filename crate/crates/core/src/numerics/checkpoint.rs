//! Encoder checkpoint file.
//!
//! ```text
//! "MRSE" | version u32 | layer count u32
//! per layer: in u32 | out u32 | activation tag u8
//! per layer: weight (out·in f32, row-major) | bias (out f32)
//! crc64 u64
//! ```
//! All integers and reals little-endian.

use std::path::Path;

use super::encoder::{Activation, EncoderParams, Layer};
use super::matrix::DenseMatrix;
use crate::binio::{FrameReader, FrameWriter};
use crate::error::{MrisError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MRSE";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_encoder(params: &EncoderParams<f32>, path: &Path) -> Result<()> {
    let mut w = FrameWriter::new(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(params.layers().len() as u32);
    for l in params.layers() {
        w.u32(l.input_dim() as u32);
        w.u32(l.output_dim() as u32);
        w.u8(l.activation.tag());
    }
    for l in params.layers() {
        w.f32s(l.weight.data());
        w.f32s(&l.bias);
    }
    w.write_to(path)
}

pub fn load_encoder(path: &Path) -> Result<EncoderParams<f32>> {
    let mut r = FrameReader::open(path, CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let n = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let input = r.u32()? as usize;
        let output = r.u32()? as usize;
        let tag = r.u8()?;
        let act = Activation::from_tag(tag)
            .ok_or_else(|| MrisError::format(r.path(), format!("unknown activation tag {tag}")))?;
        shapes.push((input, output, act));
    }
    let mut layers = Vec::with_capacity(n);
    for (input, output, act) in shapes {
        let weight = DenseMatrix::new(output, input, r.f32s(input * output)?)?;
        let bias = r.f32s(output)?;
        layers.push(Layer::new(weight, bias, act)?);
    }
    r.finish()?;
    EncoderParams::new(layers)
}
