//! NetPBM PGM (P2/P5) reading and writing, 8-bit, maxval 255.
//!
//! Intensities map to `[0, 1]` by division by 255; writing rounds half up
//! back to the 0..=255 lattice. Mask files must contain only 0 and 255 and
//! decode to mask bits 0/1. Writes always emit binary P5 with a canonical
//! header, so rewriting a file we produced is byte-identical.

use std::fs;
use std::path::Path;

use super::{EditMask, Grid2D, GridError};

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> GridError {
        GridError::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    /// Skip whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn read_token(&mut self) -> Result<&'a [u8], GridError> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("unexpected end of header"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn read_usize(&mut self, what: &str) -> Result<usize, GridError> {
        self.skip_separators();
        let start = self.pos;
        let tok = self.read_token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(GridError::Parse {
                offset: start,
                message: format!("invalid {what}"),
            })
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), GridError> {
    let mut p = Parser { bytes, pos: 0 };
    let magic = p.read_token()?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => {
            return Err(GridError::Parse {
                offset: 0,
                message: format!("unsupported magic {:?}, expected P2 or P5", String::from_utf8_lossy(magic)),
            })
        }
    };
    let width = p.read_usize("width")?;
    let height = p.read_usize("height")?;
    if width == 0 || height == 0 {
        return Err(p.err("dimensions must be positive"));
    }
    let maxval_pos = p.pos;
    let maxval = p.read_usize("maxval")?;
    if maxval != 255 {
        return Err(GridError::Parse {
            offset: maxval_pos,
            message: format!("unsupported maxval {maxval}, only 255 is accepted"),
        });
    }
    let count = width * height;
    let pixels = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        if p.pos >= bytes.len() || !bytes[p.pos].is_ascii_whitespace() {
            return Err(p.err("missing separator before raster"));
        }
        p.pos += 1;
        if bytes.len() < p.pos + count {
            return Err(GridError::Parse {
                offset: bytes.len(),
                message: format!(
                    "raster truncated: expected {count} bytes, got {}",
                    bytes.len() - p.pos
                ),
            });
        }
        bytes[p.pos..p.pos + count].to_vec()
    } else {
        let mut pixels = Vec::with_capacity(count);
        for _ in 0..count {
            let at = p.pos;
            let v = p.read_usize("pixel value")?;
            if v > 255 {
                return Err(GridError::Parse {
                    offset: at,
                    message: format!("pixel value {v} exceeds maxval 255"),
                });
            }
            pixels.push(v as u8);
        }
        pixels
    };
    Ok((height, width, pixels))
}

/// Read a PGM file as an intensity grid in `[0, 1]`.
pub fn read_pgm_grid(path: impl AsRef<Path>) -> Result<Grid2D, GridError> {
    let bytes = fs::read(path.as_ref())?;
    let (height, width, pixels) = parse_pgm(&bytes)?;
    let values = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Grid2D::new(height, width, values)
}

/// Read a PGM file as a binary edit mask; every pixel must be 0 or 255.
pub fn read_pgm_mask(path: impl AsRef<Path>) -> Result<EditMask, GridError> {
    let bytes = fs::read(path.as_ref())?;
    let (height, width, pixels) = parse_pgm(&bytes)?;
    let mut bits = Vec::with_capacity(pixels.len());
    for (i, &p) in pixels.iter().enumerate() {
        match p {
            0 => bits.push(0),
            255 => bits.push(1),
            other => {
                return Err(GridError::InvalidMask(format!(
                    "mask pixel {i} has value {other}, expected 0 or 255"
                )))
            }
        }
    }
    EditMask::new(height, width, bits)
}

fn encode_header(height: usize, width: usize) -> Vec<u8> {
    format!("P5\n{width} {height}\n255\n").into_bytes()
}

/// Write an intensity grid as binary P5; values must lie in `[0, 1]`.
pub fn write_pgm_grid(grid: &Grid2D, path: impl AsRef<Path>) -> Result<(), GridError> {
    let mut out = encode_header(grid.height(), grid.width());
    for &v in grid.values() {
        if !(0.0..=1.0).contains(&v) {
            return Err(GridError::InvalidArgument(format!(
                "grid value {v} outside [0, 1]; clamp before writing"
            )));
        }
        // round() rounds half away from zero, which for values >= 0 is
        // round-half-up and exactly inverts the read scaling on the lattice.
        out.push((v * 255.0).round() as u8);
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Write an edit mask as binary P5 with pixels in {0, 255}.
pub fn write_pgm_mask(mask: &EditMask, path: impl AsRef<Path>) -> Result<(), GridError> {
    let mut out = encode_header(mask.height(), mask.width());
    out.extend(mask.bits().iter().map(|&b| if b == 1 { 255u8 } else { 0u8 }));
    fs::write(path.as_ref(), out)?;
    Ok(())
}
