//! Binary checkpoint format.
//!
//! ```text
//! "FCNA"                      4 bytes
//! version                     u32 LE (currently 1)
//! header length, header       u32 LE + UTF-8 canonical spec text, followed by
//!                             `model_seed <u64>` and optional `model_scale <u32>` lines
//! repeated until end of file:
//!   name length, name         u32 LE + UTF-8
//!   rank                      u32 LE
//!   extents                   rank × u32 LE
//!   values                    product(extents) × f32 LE
//! ```

use std::fs;
use std::path::Path;

use crate::error::{FcnaError, Result};
use crate::network::model::{ModelState, ParamSet};
use crate::network::spec::NetworkSpec;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FCNA";
pub const VERSION: u32 = 1;

fn header_text(model: &ModelState) -> String {
    let mut text = model.spec.to_canonical_text();
    text.push_str(&format!("model_seed {}\n", model.rng_seed));
    if let Some(scale) = model.scale {
        text.push_str(&format!("model_scale {scale}\n"));
    }
    text
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(model: &ModelState) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 4 * model.params.total_len());
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_str(&mut buf, &header_text(model));
    for (name, t) in model.params.iter() {
        put_str(&mut buf, name);
        put_u32(&mut buf, t.rank() as u32);
        for &d in t.shape() {
            put_u32(&mut buf, d as u32);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(FcnaError::Truncated(format!("needed {n} bytes for {what} at offset {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FcnaError::CheckpointShape(format!("{what} is not UTF-8")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn parse_header(text: &str) -> Result<(NetworkSpec, u64, Option<u32>)> {
    let mut spec_text = String::new();
    let (mut seed, mut scale) = (None, None);
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("model_seed ") {
            seed = Some(v.trim().parse().map_err(|_| FcnaError::CheckpointShape(format!("bad model_seed {v:?}")))?);
        } else if let Some(v) = line.strip_prefix("model_scale ") {
            scale = Some(v.trim().parse().map_err(|_| FcnaError::CheckpointShape(format!("bad model_scale {v:?}")))?);
        } else {
            spec_text.push_str(line);
            spec_text.push('\n');
        }
    }
    let spec = NetworkSpec::parse_canonical_text(&spec_text)?;
    let seed = seed.ok_or_else(|| FcnaError::CheckpointShape("missing model_seed".into()))?;
    Ok((spec, seed, scale))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| FcnaError::BadMagic)? != MAGIC {
        return Err(FcnaError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FcnaError::UnsupportedVersion(version));
    }
    let header = r.string("spec header")?;
    let (spec, rng_seed, scale) = parse_header(&header)?;
    let mut entries = Vec::new();
    while !r.done() {
        let name = r.string("parameter name")?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(FcnaError::CheckpointShape(format!("{name}: implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32("extent").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let count = count
            .filter(|&c| c > 0)
            .ok_or_else(|| FcnaError::CheckpointShape(format!("{name}: bad extents {shape:?}")))?;
        let raw = r.take(count.saturating_mul(4), &name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    let model = ModelState { spec, params: ParamSet::from_entries(entries), rng_seed, scale };
    model.check_consistency()?;
    Ok(model)
}

pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| FcnaError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| FcnaError::io(path, e))?;
    decode_checkpoint(&bytes)
}
