//! 8-bit rasters of residual maps and their binary NetPBM encoding.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    /// 1 (grey, P5) or 3 (RGB, P6).
    pub channels: usize,
}

impl ImageShape {
    pub fn grey(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major 8-bit raster; RGB samples are interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub shape: ImageShape,
    pub data: Vec<u8>,
}

pub const FLAT_TOL: f64 = 1e-12;

/// Maps `[min, max]` of the residual affinely onto `[0, 255]`, rounding half
/// to even. A residual whose range is within `FLAT_TOL * max(1, max|v|)`
/// counts as constant and maps to all zeros, so rounding noise is not
/// stretched to full contrast.
pub fn quantize_to_image(residual: &[f64], shape: ImageShape) -> Result<Raster> {
    if shape.channels != 1 && shape.channels != 3 {
        return Err(Error::invalid(format!(
            "raster must have 1 or 3 channels, got {}",
            shape.channels
        )));
    }
    if shape.is_empty() || shape.len() != residual.len() {
        return Err(Error::invalid(format!(
            "shape {}x{}x{} does not match residual length {}",
            shape.height,
            shape.width,
            shape.channels,
            residual.len()
        )));
    }
    if residual.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("residual contains non-finite values"));
    }
    let lo = residual.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = residual.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let flat = FLAT_TOL * lo.abs().max(hi.abs()).max(1.0);
    let data = if hi - lo > flat {
        let span = hi - lo;
        residual
            .iter()
            .map(|v| {
                ((v - lo) / span * 255.0)
                    .round_ties_even()
                    .clamp(0.0, 255.0) as u8
            })
            .collect()
    } else {
        vec![0; residual.len()]
    };
    Ok(Raster { shape, data })
}

impl Raster {
    fn magic(&self) -> &'static str {
        if self.shape.channels == 3 {
            "P6"
        } else {
            "P5"
        }
    }

    /// Binary NetPBM: `P5`/`P6`, width, height, maxval 255, each header field
    /// terminated by a single newline, then raw samples.
    pub fn to_pnm(&self) -> Vec<u8> {
        let header = format!(
            "{}\n{} {}\n255\n",
            self.magic(),
            self.shape.width,
            self.shape.height
        );
        let mut out = Vec::with_capacity(header.len() + self.data.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pnm()).map_err(|e| Error::io(path, e))
    }

    /// Parses a binary P5/P6 file with maxval 255. Comments are skipped.
    pub fn from_pnm(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::invalid(format!("malformed NetPBM: {msg}"));
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?,
            );
        }
        // exactly one whitespace byte separates maxval from the samples
        pos += 1;
        let channels = match fields[0] {
            "P5" => 1,
            "P6" => 3,
            _ => return Err(bad("unsupported magic")),
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
        let width = parse(fields[1])?;
        let height = parse(fields[2])?;
        if parse(fields[3])? != 255 {
            return Err(bad("maxval must be 255"));
        }
        let shape = ImageShape {
            height,
            width,
            channels,
        };
        let data = bytes.get(pos..).ok_or_else(|| bad("missing samples"))?;
        if data.len() != shape.len() {
            return Err(bad("sample count does not match header"));
        }
        Ok(Self {
            shape,
            data: data.to_vec(),
        })
    }
}
