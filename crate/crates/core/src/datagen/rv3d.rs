//! RV3D volume files: one JSON header line, then little-endian f32 values
//! in x-fastest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume3D};

pub const MAGIC: &str = "RV3D1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Image,
    Prob,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rv3dHeader {
    pub magic: String,
    pub dims: Dims,
    pub dtype: String,
    pub kind: VolumeKind,
}

impl Rv3dHeader {
    pub fn new(dims: Dims, kind: VolumeKind) -> Self {
        Self {
            magic: MAGIC.into(),
            dims,
            dtype: "f32".into(),
            kind,
        }
    }
}

/// Encodes a volume, narrowing every value to f32.
pub fn encode(volume: &Volume3D, kind: VolumeKind) -> Vec<u8> {
    let header = serde_json::to_string(&Rv3dHeader::new(volume.dims(), kind)).expect("header serialises");
    let mut out = Vec::with_capacity(header.len() + 1 + 4 * volume.len());
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for &v in volume.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decodes the record at the start of `bytes`, returning it and the number
/// of bytes consumed so records can be concatenated.
pub fn decode_prefix(bytes: &[u8], origin: &Path) -> Result<(VolumeKind, Volume3D, usize)> {
    let bad = |reason: String| Error::format(origin, reason);
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header: Rv3dHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("bad header: {e}")))?;
    if header.magic != MAGIC {
        return Err(bad(format!("magic {:?} is not {MAGIC}", header.magic)));
    }
    if header.dtype != "f32" {
        return Err(bad(format!("unsupported dtype {:?}", header.dtype)));
    }
    let n = header.dims.len();
    let start = nl + 1;
    let end = start + 4 * n;
    let payload = bytes.get(start..end).ok_or_else(|| {
        bad(format!(
            "payload holds {} bytes, expected {}",
            bytes.len() - start,
            4 * n
        ))
    })?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    if header.kind == VolumeKind::Label {
        if let Some(i) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(bad(format!("label voxel {i} holds {}", data[i])));
        }
    }
    if header.kind == VolumeKind::Prob {
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(bad(format!("probability voxel {i} holds {}", data[i])));
        }
    }
    Ok((header.kind, Volume3D::new(header.dims, data)?, end))
}

/// Decodes exactly one record.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<(VolumeKind, Volume3D)> {
    let (kind, v, used) = decode_prefix(bytes, origin)?;
    if used != bytes.len() {
        return Err(Error::format(origin, format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok((kind, v))
}

pub fn write(path: &Path, volume: &Volume3D, kind: VolumeKind) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(volume, kind)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(VolumeKind, Volume3D)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Reads a file and checks its kind.
pub fn read_kind(path: &Path, kind: VolumeKind) -> Result<Volume3D> {
    let (found, v) = read(path)?;
    if found != kind {
        return Err(Error::format(
            path,
            format!("expected a {kind:?} volume, found {found:?}"),
        ));
    }
    Ok(v)
}
