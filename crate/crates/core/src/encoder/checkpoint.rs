//! Binary checkpoint format.
//!
//! ```text
//! "NFPW" | version u16 | config_len u32 | config JSON (UTF-8)
//! tensor_count u32
//! per tensor: name_len u16 | name | rank u8 | dims u32 x rank | f64 x prod(dims)
//! ```
//!
//! All integers and floats are little-endian. Tensors appear in layout order.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{EncoderConfig, EncoderWeights, Layout};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 4] = b"NFPW";
const VERSION: u16 = 1;

pub fn encode_checkpoint(weights: &EncoderWeights) -> Result<Vec<u8>> {
    let config =
        serde_json::to_vec(weights.config()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut out = Vec::with_capacity(weights.params().len() * 8 + 1024);
    out.extend_from_slice(MAGIC);
    out.write_u16::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(config.len() as u32)?;
    out.extend_from_slice(&config);
    let tensors = weights.layout().tensors();
    out.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for t in tensors {
        out.write_u16::<LittleEndian>(t.name.len() as u16)?;
        out.extend_from_slice(t.name.as_bytes());
        out.write_u8(t.dims.len() as u8)?;
        for &d in &t.dims {
            out.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in &weights.params()[t.range()] {
            out.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EncoderWeights> {
    let corrupt = |m: String| Error::CorruptCheckpoint(m);
    let truncated = |_| Error::CorruptCheckpoint("unexpected end of file".into());
    let mut r = Cursor::new(bytes);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let version = r.read_u16::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let config_len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let config_bytes = take(&mut r, config_len)?;
    let config: EncoderConfig =
        serde_json::from_slice(config_bytes).map_err(|e| corrupt(format!("config: {e}")))?;
    let layout = Layout::new(&config).map_err(|e| corrupt(e.to_string()))?;

    let count = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    if count != layout.tensors().len() {
        return Err(corrupt(format!(
            "{count} tensors stored, config implies {}",
            layout.tensors().len()
        )));
    }
    let mut params = vec![0.0; layout.num_params()];
    for spec in layout.tensors() {
        let name_len = r.read_u16::<LittleEndian>().map_err(truncated)? as usize;
        let name = take(&mut r, name_len)?;
        if name != spec.name.as_bytes() {
            return Err(corrupt(format!(
                "expected tensor {}, found {}",
                spec.name,
                String::from_utf8_lossy(name)
            )));
        }
        let rank = r.read_u8().map_err(truncated)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u32::<LittleEndian>().map_err(truncated)? as usize);
        }
        if dims != spec.dims {
            return Err(corrupt(format!(
                "tensor {} has dims {dims:?}, expected {:?}",
                spec.name, spec.dims
            )));
        }
        for slot in &mut params[spec.range()] {
            *slot = r.read_f64::<LittleEndian>().map_err(truncated)?;
        }
    }
    if (r.position() as usize) != bytes.len() {
        return Err(corrupt("trailing bytes after last tensor".into()));
    }
    EncoderWeights::from_params(config, params).map_err(|e| corrupt(e.to_string()))
}

fn take<'a>(r: &mut Cursor<&'a [u8]>, n: usize) -> Result<&'a [u8]> {
    let start = r.position() as usize;
    let data: &'a [u8] = r.get_ref();
    let end = start
        .checked_add(n)
        .filter(|&e| e <= data.len())
        .ok_or_else(|| Error::CorruptCheckpoint("unexpected end of file".into()))?;
    r.set_position(end as u64);
    Ok(&data[start..end])
}

pub fn save_checkpoint(weights: &EncoderWeights, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(weights)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderWeights> {
    decode_checkpoint(&std::fs::read(path)?)
}
