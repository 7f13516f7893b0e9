//! Binary PGM (`P5`) images for depth and 2D segment labels.
//!
//! Samples are 16-bit when maxval > 255. The 16-bit payload is stored
//! little-endian (this differs from the Netpbm default of big-endian).
//! Depth: stored value × `depth_scale` = meters, 0 = invalid.
//! Labels: stored value 0 = unlabeled, otherwise label = value − 1.

use std::path::Path;

use crate::error::{Error, Result};

const CTX: &str = "PGM";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray16Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl Gray16Image {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 2);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < buf.len() && (buf[pos].is_ascii_whitespace() || buf[pos] == b'#') {
                if buf[pos] == b'#' {
                    while pos < buf.len() && buf[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::parse(CTX, "truncated header"));
            }
            fields.push(std::str::from_utf8(&buf[start..pos]).map_err(|_| Error::parse(CTX, "bad header"))?);
        }
        if fields[0] != "P5" {
            return Err(Error::parse(CTX, format!("expected P5 magic, got {:?}", fields[0])));
        }
        let num = |s: &str| -> Result<u32> { s.parse().map_err(|_| Error::parse(CTX, format!("bad header number {s:?}"))) };
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(Error::parse(CTX, format!("maxval {maxval} out of range")));
        }
        // exactly one whitespace byte separates the header from the payload
        pos += 1;
        let n = width as usize * height as usize;
        let bytes_per = if maxval > 255 { 2 } else { 1 };
        let payload = buf.get(pos..).unwrap_or(&[]);
        if payload.len() < n * bytes_per {
            return Err(Error::parse(CTX, format!("truncated payload: {} of {} bytes", payload.len(), n * bytes_per)));
        }
        let data = if bytes_per == 2 {
            payload[..n * 2]
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect()
        } else {
            payload[..n].iter().map(|&b| b as u16).collect()
        };
        Ok(Self { width, height, data })
    }
}

pub fn read_pgm16(path: &Path) -> Result<Gray16Image> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Gray16Image::from_bytes(&buf).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

pub fn write_pgm16(img: &Gray16Image, path: &Path) -> Result<()> {
    std::fs::write(path, img.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Metric depth image; 0 marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub meters: Vec<f32>,
}

impl DepthImage {
    pub fn from_raw(raw: &Gray16Image, depth_scale: f64) -> Self {
        Self {
            width: raw.width,
            height: raw.height,
            meters: raw.data.iter().map(|&v| (v as f64 * depth_scale) as f32).collect(),
        }
    }

    /// Quantizes to `depth_scale` units; depths past the 16-bit range become invalid.
    pub fn to_raw(&self, depth_scale: f64) -> Gray16Image {
        Gray16Image {
            width: self.width,
            height: self.height,
            data: self
                .meters
                .iter()
                .map(|&m| {
                    let q = (m as f64 / depth_scale).round();
                    if m > 0.0 && q <= 65535.0 { q.max(1.0) as u16 } else { 0 }
                })
                .collect(),
        }
    }

    /// Depth at pixel `(x, y)`, `None` when out of bounds or invalid.
    #[inline]
    pub fn at(&self, x: u32, y: u32) -> Option<f32> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let d = self.meters[(y * self.width + x) as usize];
        (d > 0.0).then_some(d)
    }
}

/// 2D segment label map; -1 marks unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<i32>,
}

impl LabelImage {
    pub fn from_raw(raw: &Gray16Image) -> Self {
        Self {
            width: raw.width,
            height: raw.height,
            labels: raw.data.iter().map(|&v| v as i32 - 1).collect(),
        }
    }

    pub fn to_raw(&self) -> Result<Gray16Image> {
        let data = self
            .labels
            .iter()
            .map(|&l| {
                if (-1..65535).contains(&l) {
                    Ok((l + 1) as u16)
                } else {
                    Err(Error::parse(CTX, format!("label {l} does not fit in 16 bits")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Gray16Image {
            width: self.width,
            height: self.height,
            data,
        })
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> Option<i32> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let l = self.labels[(y * self.width + x) as usize];
        (l >= 0).then_some(l)
    }
}
