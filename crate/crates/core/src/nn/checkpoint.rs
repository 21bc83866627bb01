//! Binary checkpoint format ("OFL1").
//!
//! Layout: the magic bytes `OFL1`, a little-endian u32 segment count,
//! then per segment a u8 layer kind (0 = conv, 1 = dense) and three
//! little-endian u32 dims (in_channels, out_channels, kernel). A
//! parameter checkpoint follows with one little-endian f32 per value;
//! mask files reuse the same header with a bit-packed payload instead
//! (see the pruning module).

use super::{LayerKind, LayerShape, ParamVector};
use std::io::{Read, Write};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"OFL1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (expected OFL1)")]
    BadMagic,
    #[error("unknown layer kind tag {0}")]
    BadKind(u8),
}

/// Writes the shared OFL1 header (magic + segment table).
pub fn write_segment_header<W: Write>(
    w: &mut W,
    segments: &[LayerShape],
) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&(segments.len() as u32).to_le_bytes())?;
    for s in segments {
        let kind = match s.kind {
            LayerKind::Conv => 0u8,
            LayerKind::Dense => 1u8,
        };
        w.write_all(&[kind])?;
        w.write_all(&(s.in_channels as u32).to_le_bytes())?;
        w.write_all(&(s.out_channels as u32).to_le_bytes())?;
        w.write_all(&(s.kernel as u32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads the shared OFL1 header back into a segment table.
pub fn read_segment_header<R: Read>(r: &mut R) -> Result<Vec<LayerShape>, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut n = [0u8; 4];
    r.read_exact(&mut n)?;
    let count = u32::from_le_bytes(n) as usize;
    let mut segments = Vec::with_capacity(count);
    for layer_id in 0..count {
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let kind = match kind[0] {
            0 => LayerKind::Conv,
            1 => LayerKind::Dense,
            k => return Err(CheckpointError::BadKind(k)),
        };
        let mut dims = [0u8; 12];
        r.read_exact(&mut dims)?;
        let in_channels = u32::from_le_bytes(dims[0..4].try_into().unwrap()) as usize;
        let out_channels = u32::from_le_bytes(dims[4..8].try_into().unwrap()) as usize;
        let kernel = u32::from_le_bytes(dims[8..12].try_into().unwrap()) as usize;
        segments.push(LayerShape {
            layer_id,
            kind,
            in_channels,
            out_channels,
            kernel,
        });
    }
    Ok(segments)
}

/// Writes a parameter checkpoint.
pub fn write_params<W: Write>(
    w: &mut W,
    params: &ParamVector<f32>,
) -> Result<(), CheckpointError> {
    write_segment_header(w, params.segments())?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a parameter checkpoint.
pub fn read_params<R: Read>(r: &mut R) -> Result<ParamVector<f32>, CheckpointError> {
    let segments = read_segment_header(r)?;
    let total: usize = segments.iter().map(|s| s.param_count()).sum();
    let mut buf = vec![0u8; total * 4];
    r.read_exact(&mut buf)?;
    let values = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ParamVector::from_values(segments, values).expect("lengths match by construction"))
}
