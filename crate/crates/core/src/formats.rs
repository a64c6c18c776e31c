//! Binary field files.
//!
//! Both formats share a 44-byte header: a 4-byte magic followed by five
//! little-endian `i64` values `x0, y0, width, height, reserved = 0`. The
//! payload is `width * height` little-endian 8-byte values in row-major order
//! with rows in increasing y: `i64` for `IGF1`, `f64` for `FGF1`.

use crate::error::{Error, Result};
use crate::grid::{IntField, LatticePoint, Window};

pub const IGF1_MAGIC: &[u8; 4] = b"IGF1";
pub const FGF1_MAGIC: &[u8; 4] = b"FGF1";
const HEADER_LEN: usize = 4 + 5 * 8;

/// Real-valued field on a window, zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    window: Window,
    values: Vec<f64>,
}

impl RealField {
    pub fn from_values(window: Window, values: Vec<f64>) -> Result<Self> {
        if values.len() != window.len() {
            return Err(Error::domain("value count does not match window"));
        }
        Ok(RealField { window, values })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, p: LatticePoint) -> f64 {
        self.window.index(p).map_or(0.0, |i| self.values[i])
    }
}

fn write_header(out: &mut Vec<u8>, magic: &[u8; 4], w: &Window) {
    out.extend_from_slice(magic);
    for v in [w.x0, w.y0, w.width as i64, w.height as i64, 0] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_header<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<(Window, &'a [u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("truncated header"));
    }
    if &bytes[..4] != magic {
        return Err(Error::format(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
    }
    let word = |i: usize| i64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().unwrap());
    let (x0, y0, w, h, reserved) = (word(0), word(1), word(2), word(3), word(4));
    if reserved != 0 {
        return Err(Error::format("reserved header word must be zero"));
    }
    if w <= 0 || h <= 0 {
        return Err(Error::format(format!("invalid dimensions {w}x{h}")));
    }
    let window = Window::new(x0, y0, w as usize, h as usize)?;
    let payload = &bytes[HEADER_LEN..];
    let expected = window.len().checked_mul(8).ok_or_else(|| Error::format("dimensions overflow"))?;
    if payload.len() != expected {
        return Err(Error::format(format!("payload is {} bytes, expected {expected}", payload.len())));
    }
    Ok((window, payload))
}

pub fn encode_igf1(field: &IntField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * field.values().len());
    write_header(&mut out, IGF1_MAGIC, field.window());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_igf1(bytes: &[u8]) -> Result<IntField> {
    let (window, payload) = read_header(bytes, IGF1_MAGIC)?;
    let values = payload.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect();
    IntField::from_values(window, values)
}

pub fn encode_fgf1(field: &RealField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * field.values.len());
    write_header(&mut out, FGF1_MAGIC, &field.window);
    for v in &field.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fgf1(bytes: &[u8]) -> Result<RealField> {
    let (window, payload) = read_header(bytes, FGF1_MAGIC)?;
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    RealField::from_values(window, values)
}
