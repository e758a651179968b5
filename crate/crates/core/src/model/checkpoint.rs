//! Flat binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"KWASRCK1"
//! u32 header_len, header_len bytes of JSON (CheckpointHeader)
//! u32 tensor_count
//! per tensor: u32 name_len, name (UTF-8), u32 ndim, ndim x u64 dims,
//!             prod(dims) x f64
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{AsrModel, DecoderConfig, LoraConfig, NamedTensors};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"KWASRCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub decoder: DecoderConfig,
    pub lora: Option<LoraConfig>,
    pub stack: usize,
    pub d_audio: usize,
    #[serde(default)]
    pub transcript_anchor: Option<usize>,
}

impl CheckpointHeader {
    pub fn of(model: &AsrModel) -> Self {
        Self {
            decoder: model.decoder.config,
            lora: model.decoder.lora.as_ref().map(|l| l.config),
            stack: model.adapter.k,
            d_audio: model.adapter.d_in() / model.adapter.k,
            transcript_anchor: model.transcript_anchor,
        }
    }
}

pub fn write_checkpoint<W: Write>(model: &AsrModel, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&CheckpointHeader::of(model))?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let tensors = model.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, data) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(data.len() * 8);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<AsrModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let hlen = read_u32(&mut r)? as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: CheckpointHeader = serde_json::from_slice(&hbuf)?;
    let mut model = AsrModel::new(header.decoder, header.lora, header.stack, header.d_audio, 0)?
        .with_transcript_anchor(header.transcript_anchor);

    let count = read_u32(&mut r)? as usize;
    let mut slots = model.tensors_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            slots.len()
        )));
    }
    for (expected, slot) in slots.iter_mut() {
        let nlen = read_u32(&mut r)? as usize;
        let mut nbuf = vec![0u8; nlen];
        r.read_exact(&mut nbuf)?;
        let name = String::from_utf8(nbuf).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if &name != expected {
            return Err(Error::Checkpoint(format!("expected tensor {expected}, found {name}")));
        }
        let ndim = read_u32(&mut r)? as usize;
        let mut numel = 1usize;
        for _ in 0..ndim {
            numel *= read_u64(&mut r)? as usize;
        }
        if numel != slot.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: expected {} values, found {numel}",
                slot.len()
            )));
        }
        let mut buf = vec![0u8; numel * 8];
        r.read_exact(&mut buf)?;
        for (v, chunk) in slot.iter_mut().zip(buf.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    drop(slots);
    Ok(model)
}
