//! Little-endian binary files: feature matrices (`ACFT`), K-means codebooks
//! (`KMCB`) and encoder checkpoints (`ENCP`). Each starts with a four-byte
//! magic and a `u32` version.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unitfix_core::neural::{AdapterConfig, EncoderConfig, EncoderParams, Param};
use unitfix_core::quantizer::Codebook;

use crate::error::{Error, Result};
use crate::formats::text::write;

pub const VERSION: u32 = 1;
pub const ACFT: &[u8; 4] = b"ACFT";
pub const KMCB: &[u8; 4] = b"KMCB";
pub const ENCP: &[u8; 4] = b"ENCP";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], what: &'a str) -> Self {
        Self {
            bytes,
            pos: 0,
            what,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "{}: truncated at byte {}",
                self.what, self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format(format!("{}: size overflow", self.what)))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format(format!("{}: size overflow", self.what)))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!(
                "{}: not a {} file",
                self.what,
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported version {v}",
                self.what
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn header(magic: &[u8; 4]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend(VERSION.to_le_bytes());
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::io(path))
}

/// Row-major `frames × dim` feature matrix of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

pub fn encode_features(f: &Features) -> Vec<u8> {
    let mut out = header(ACFT);
    out.extend((f.frames as u64).to_le_bytes());
    out.extend((f.dim as u32).to_le_bytes());
    out.extend(f.data.iter().flat_map(|x| x.to_le_bytes()));
    out
}

pub fn decode_features(bytes: &[u8], what: &str) -> Result<Features> {
    let mut c = Cursor::new(bytes, what);
    c.header(ACFT)?;
    let frames = usize::try_from(c.u64()?)
        .map_err(|_| Error::Format(format!("{what}: frame count overflow")))?;
    let dim = c.u32()? as usize;
    let n = frames
        .checked_mul(dim)
        .ok_or_else(|| Error::Format(format!("{what}: size overflow")))?;
    let data = c.f32s(n)?;
    c.finish()?;
    Ok(Features { frames, dim, data })
}

pub fn write_features(path: &Path, f: &Features) -> Result<()> {
    write(path, &encode_features(f))
}

pub fn read_features(path: &Path) -> Result<Features> {
    decode_features(&read(path)?, &path.display().to_string())
}

pub fn encode_codebook(book: &Codebook) -> Vec<u8> {
    let mut out = header(KMCB);
    out.extend((book.clusters as u32).to_le_bytes());
    out.extend((book.dim as u32).to_le_bytes());
    out.extend(book.centroids.iter().flat_map(|x| x.to_le_bytes()));
    out.extend(book.inertia.to_le_bytes());
    out
}

pub fn decode_codebook(bytes: &[u8], what: &str) -> Result<Codebook> {
    let mut c = Cursor::new(bytes, what);
    c.header(KMCB)?;
    let k = c.u32()? as usize;
    let dim = c.u32()? as usize;
    let centroids = c.f64s(k * dim)?;
    let inertia = c.f64s(1)?[0];
    c.finish()?;
    Ok(Codebook::new(centroids, k, dim, inertia)?)
}

pub fn write_codebook(path: &Path, book: &Codebook) -> Result<()> {
    write(path, &encode_codebook(book))
}

pub fn read_codebook(path: &Path) -> Result<Codebook> {
    decode_codebook(&read(path)?, &path.display().to_string())
}

/// The configuration block stored ahead of the parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    encoder: EncoderConfig,
    adapter: Option<AdapterConfig>,
    step: u64,
}

/// Serializes parameters as 32-bit reals. The configuration travels as a
/// length-prefixed JSON object; each tensor carries its name, shape and
/// frozen flag.
pub fn encode_checkpoint(params: &EncoderParams) -> Result<Vec<u8>> {
    let head = CheckpointHeader {
        encoder: params.config().clone(),
        adapter: params.adapter().copied(),
        step: params.step,
    };
    let json =
        serde_json::to_vec(&head).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut out = header(ENCP);
    out.extend((json.len() as u32).to_le_bytes());
    out.extend(json);
    out.extend((params.params().len() as u32).to_le_bytes());
    for p in params.params() {
        encode_param(&mut out, p)?;
    }
    Ok(out)
}

/// Appends one named tensor to a checkpoint body.
pub fn encode_param(out: &mut Vec<u8>, p: &Param) -> Result<()> {
    encode_tensor(out, p)?;
    out.push(u8::from(p.frozen));
    Ok(())
}

/// Name, shape and `f32` payload, without the trainability flag.
fn encode_tensor(out: &mut Vec<u8>, p: &Param) -> Result<()> {
    let name = p.name.as_bytes();
    let name_len = u16::try_from(name.len())
        .map_err(|_| Error::Format(format!("parameter name {} too long", p.name)))?;
    let rank = u8::try_from(p.shape.len())
        .map_err(|_| Error::Format(format!("parameter {} has too many axes", p.name)))?;
    out.extend(name_len.to_le_bytes());
    out.extend(name);
    out.push(rank);
    for &d in &p.shape {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("parameter {} axis too long", p.name)))?;
        out.extend(d.to_le_bytes());
    }
    out.extend(p.data.iter().flat_map(|&x| (x as f32).to_le_bytes()));
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8], what: &str) -> Result<EncoderParams> {
    let mut c = Cursor::new(bytes, what);
    c.header(ENCP)?;
    let json_len = c.u32()? as usize;
    let head: CheckpointHeader = serde_json::from_slice(c.take(json_len)?)
        .map_err(|e| Error::Format(format!("{what}: checkpoint header: {e}")))?;
    let count = c.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Format(format!("{what}: parameter name is not UTF-8")))?
            .to_string();
        let rank = c.u8()? as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<_>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n =
            n.ok_or_else(|| Error::Format(format!("{what}: parameter {name} size overflow")))?;
        let data = c.f32s(n)?.into_iter().map(f64::from).collect();
        let frozen = match c.u8()? {
            0 => false,
            1 => true,
            f => {
                return Err(Error::Format(format!(
                    "{what}: parameter {name} has frozen flag {f}"
                )))
            }
        };
        let mut p = Param::new(name, shape, data);
        p.frozen = frozen;
        named.push(p);
    }
    c.finish()?;
    let mut params = EncoderParams::from_named(&head.encoder, head.adapter.as_ref(), named)?;
    params.step = head.step;
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &EncoderParams) -> Result<()> {
    write(path, &encode_checkpoint(params)?)
}

pub fn read_checkpoint(path: &Path) -> Result<EncoderParams> {
    decode_checkpoint(&read(path)?, &path.display().to_string())
}

/// The non-adapter tensors of a checkpoint, serialized in layout order. Two
/// models share a backbone exactly when these bytes agree; whether the
/// tensors are currently frozen does not enter.
pub fn backbone_bytes(params: &EncoderParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for p in params
        .params()
        .iter()
        .filter(|p| !p.name.starts_with("adapter."))
    {
        encode_tensor(&mut out, p)?;
    }
    Ok(out)
}
