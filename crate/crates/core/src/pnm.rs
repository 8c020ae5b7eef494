//! Binary PGM (P5) and PPM (P6) files with maxval 255.

use std::path::Path;

use thiserror::Error;

use crate::mask::PolygonMask;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("expected magic {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("malformed header: {0}")]
    BadHeader(&'static str),
    #[error("only maxval 255 is supported, got {0}")]
    UnsupportedMaxval(u32),
    #[error("pixel data truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
}

/// Decoded raster: `channels` is 1 for PGM and 3 for PPM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<u32, PnmError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(PnmError::BadHeader("expected a decimal number"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(PnmError::BadHeader("number out of range"))
}

pub fn decode(bytes: &[u8], magic: &'static str) -> Result<Raster, PnmError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PnmError::BadMagic { expected: magic, found });
    }
    let channels = if magic == "P5" { 1 } else { 3 };
    let mut pos = 2;
    let width = header_token(bytes, &mut pos)? as usize;
    let height = header_token(bytes, &mut pos)? as usize;
    let maxval = header_token(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(PnmError::BadHeader("zero dimension"));
    }
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(PnmError::BadHeader("missing whitespace after maxval"));
    }
    pos += 1;
    let need = width * height * channels;
    let have = bytes.len() - pos;
    if have < need {
        return Err(PnmError::Truncated { need, have });
    }
    Ok(Raster { width, height, channels, data: bytes[pos..pos + need].to_vec() })
}

pub fn encode(r: &Raster) -> Vec<u8> {
    let magic = if r.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.data);
    out
}

fn read(path: &Path, magic: &'static str) -> Result<Raster, PnmError> {
    let bytes = std::fs::read(path).map_err(|source| PnmError::Io { path: path.display().to_string(), source })?;
    decode(&bytes, magic)
}

fn write(path: &Path, r: &Raster) -> Result<(), PnmError> {
    std::fs::write(path, encode(r)).map_err(|source| PnmError::Io { path: path.display().to_string(), source })
}

pub fn read_pgm(path: &Path) -> Result<Raster, PnmError> {
    read(path, "P5")
}

pub fn read_ppm(path: &Path) -> Result<Raster, PnmError> {
    read(path, "P6")
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: Vec<u8>) -> Result<(), PnmError> {
    write(path, &Raster { width, height, channels: 1, data })
}

pub fn write_ppm(path: &Path, width: usize, height: usize, data: Vec<u8>) -> Result<(), PnmError> {
    write(path, &Raster { width, height, channels: 3, data })
}

/// Read a mask file: any nonzero sample is foreground.
pub fn read_mask(path: &Path) -> Result<PolygonMask, PnmError> {
    let r = read_pgm(path)?;
    Ok(PolygonMask::from_cells(r.width, r.height, r.data))
}

/// Write a mask file: 0 background, 255 foreground.
pub fn write_mask(path: &Path, mask: &PolygonMask) -> Result<(), PnmError> {
    let data = mask.cells().iter().map(|&c| if c != 0 { 255 } else { 0 }).collect();
    write_pgm(path, mask.width(), mask.height(), data)
}
