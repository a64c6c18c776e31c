//! Raster export of integer fields and supersolution piece diagrams as PPM/PGM.

use std::collections::HashMap;

use num_traits::ToPrimitive;
use rayon::prelude::*;

use crate::continuum::{CxPoint, PieceRef, SuperSolution};
use crate::error::{Error, Result};
use crate::exact::{half, rat};
use crate::grid::IntField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Palette {
    /// -1 blue, 0 cyan, 1 yellow, 2 red, anything else black.
    #[default]
    Sandpile,
    /// Affine map of the field's value range onto 0..=255 (PGM output).
    Gray,
}

impl Palette {
    pub fn parse(s: &str) -> Result<Palette> {
        match s {
            "sandpile" => Ok(Palette::Sandpile),
            "gray" | "grey" => Ok(Palette::Gray),
            _ => Err(Error::domain(format!("unknown palette {s:?}"))),
        }
    }
}

/// Sandpile palette color of an integer value.
pub fn sandpile_color(v: i64) -> [u8; 3] {
    match v {
        -1 => [0, 0, 255],
        0 => [0, 255, 255],
        1 => [255, 255, 0],
        2 => [255, 0, 0],
        _ => [0, 0, 0],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channels {
    Rgb,
    Gray,
}

/// 8-bit raster, row-major from the top row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: Channels,
    pub data: Vec<u8>,
    /// Written as a `#` line in the header.
    pub comment: Option<String>,
}

impl Image {
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let c = match self.channels {
            Channels::Rgb => 3,
            Channels::Gray => 1,
        };
        let i = (y * self.width + x) * c;
        &self.data[i..i + c]
    }

    /// `P6` for RGB, `P5` for gray.
    pub fn encode(&self) -> Vec<u8> {
        let magic = match self.channels {
            Channels::Rgb => "P6",
            Channels::Gray => "P5",
        };
        let mut out = Vec::with_capacity(self.data.len() + 64);
        out.extend_from_slice(magic.as_bytes());
        out.push(b'\n');
        if let Some(c) = &self.comment {
            for line in c.lines() {
                out.extend_from_slice(format!("# {line}\n").as_bytes());
            }
        }
        out.extend_from_slice(format!("{} {}\n255\n", self.width, self.height).as_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Image> {
        let bad = |m: &str| Error::format(format!("netpbm: {m}"));
        let mut pos = 0;
        let mut comments = Vec::new();
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= bytes.len() {
                return Err(bad("truncated header"));
            }
            if bytes[pos] == b'#' {
                let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
                let line = std::str::from_utf8(&bytes[pos + 1..end]).map_err(|_| bad("comment is not utf-8"))?;
                comments.push(line.strip_prefix(' ').unwrap_or(line).to_string());
                pos = end;
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ascii"))?.to_string());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let channels = match tokens[0].as_str() {
            "P6" => Channels::Rgb,
            "P5" => Channels::Gray,
            m => return Err(bad(&format!("unsupported magic {m:?}"))),
        };
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad(&format!("bad number {t:?}")));
        let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        let c = if channels == Channels::Rgb { 3 } else { 1 };
        let len = width.checked_mul(height).and_then(|v| v.checked_mul(c)).ok_or_else(|| bad("size overflow"))?;
        if bytes.len() < pos || bytes.len() - pos != len {
            return Err(bad("raster length does not match header"));
        }
        Ok(Image {
            width,
            height,
            channels,
            data: bytes[pos..].to_vec(),
            comment: (!comments.is_empty()).then(|| comments.join("\n")),
        })
    }
}

/// One pixel per cell, top row is the smallest `y`.
pub fn render_field(field: &IntField, palette: Palette) -> Image {
    let w = field.window();
    let vals = field.values();
    match palette {
        Palette::Sandpile => Image {
            width: w.width,
            height: w.height,
            channels: Channels::Rgb,
            data: vals.iter().flat_map(|&v| sandpile_color(v)).collect(),
            comment: None,
        },
        Palette::Gray => {
            let (lo, hi) = field.min_max().unwrap_or((0, 0));
            let span = (hi as i128 - lo as i128).max(1);
            let data = vals
                .iter()
                .map(|&v| (((v as i128 - lo as i128) * 255 * 2 + span) / (2 * span)) as u8)
                .collect();
            Image {
                width: w.width,
                height: w.height,
                channels: Channels::Gray,
                data,
                comment: Some(format!("value = {lo} + ({hi} - {lo}) * g / 255")),
            }
        }
    }
}

/// Colors each pixel of `(0,1)^2` by the rounded trace of the Hessian of the
/// patch owning its center. Row `j` holds `x2 = (j + 1/2) / resolution`.
pub fn render_pieces(ss: &SuperSolution, resolution: usize) -> Result<Image> {
    if resolution < 16 {
        return Err(Error::domain("resolution must be at least 16"));
    }
    let res = resolution as i64;
    let colors: HashMap<PieceRef, [u8; 3]> = ss
        .pieces()
        .iter()
        .map(|p| {
            let t = (p.trace() + half()).floor().to_integer().to_i64().unwrap_or(i64::MAX);
            (p.owner, sandpile_color(t))
        })
        .collect();
    let rows: Vec<Vec<u8>> = (0..res)
        .into_par_iter()
        .map(|j| {
            let mut row = Vec::with_capacity(3 * resolution);
            for i in 0..res {
                let x = CxPoint::new(rat(2 * i + 1, 2 * res), rat(2 * j + 1, 2 * res));
                row.extend_from_slice(&colors[&ss.owner(&x)]);
            }
            row
        })
        .collect();
    Ok(Image { width: resolution, height: resolution, channels: Channels::Rgb, data: rows.concat(), comment: None })
}
