use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Plane;

pub const DUMP_MAGIC: &[u8; 6] = b"EXGSU\0";
pub const DUMP_HEADER_LEN: usize = 16;

/// Lossless float plane: 16-byte header (magic, u16 width, u16 height,
/// 6 reserved zero bytes) then row-major little-endian f32 values.
pub fn encode_float_dump(plane: &Plane) -> Result<Vec<u8>> {
    let (w, h) = (u16::try_from(plane.width), u16::try_from(plane.height));
    let (Ok(w), Ok(h)) = (w, h) else {
        return Err(Error::invalid("plane", format!("{}x{} exceeds the u16 header", plane.width, plane.height)));
    };
    let mut out = Vec::with_capacity(DUMP_HEADER_LEN + 4 * plane.data.len());
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&[0; 6]);
    for v in &plane.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_float_dump(bytes: &[u8], path: &Path) -> Result<Plane> {
    let bad = |reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < DUMP_HEADER_LEN || &bytes[..6] != DUMP_MAGIC {
        return Err(bad("missing float dump header"));
    }
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let h = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body = &bytes[DUMP_HEADER_LEN..];
    if body.len() != 4 * w * h {
        return Err(bad("payload length does not match width x height"));
    }
    let mut plane = Plane::new(w, h);
    for (d, c) in plane.data.iter_mut().zip(body.chunks_exact(4)) {
        *d = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    }
    Ok(plane)
}

pub fn write_float_dump(path: &Path, plane: &Plane) -> Result<()> {
    std::fs::write(path, encode_float_dump(plane)?).map_err(|e| Error::io(path, e))
}

pub fn read_float_dump(path: &Path) -> Result<Plane> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_float_dump(&bytes, path)
}
