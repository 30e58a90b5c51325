use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::ScalarField2D;
use crate::mesh::Grid2D;

/// Decoded grayscale image, row 0 first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Ingestion {
            path: self.path.to_path_buf(),
            position: self.pos,
            message: message.into(),
        }
    }

    /// Skip whitespace and `#` comments.
    fn skip_blank(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_blank();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.fail(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                self.pos = start;
                self.fail(format!("{what} out of range"))
            })
    }
}

/// Parse a P2 (ASCII) or P5 (binary) graymap.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<PgmImage> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let binary = match bytes.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(cur.fail("unsupported format: expected P2 or P5 magic")),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(cur.fail("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(cur.fail(format!("maxval {maxval} outside 1..=65535")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| cur.fail("image dimensions overflow"))?;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the payload
        match bytes.get(cur.pos) {
            Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(cur.fail("missing whitespace after maxval")),
        }
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let payload = &bytes[cur.pos..];
        if payload.len() < need {
            cur.pos = bytes.len();
            return Err(cur.fail(format!(
                "truncated payload: {} of {need} bytes",
                payload.len()
            )));
        }
        if wide {
            pixels.extend(payload[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])));
        } else {
            pixels.extend(payload[..need].iter().map(|&b| b as u16));
        }
    } else {
        for _ in 0..count {
            let v = cur.number("pixel value")?;
            if v > maxval {
                return Err(cur.fail(format!("pixel value {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as u16);
        }
    }
    if let Some(bad) = pixels.iter().find(|&&p| p as usize > maxval) {
        return Err(cur.fail(format!("pixel value {bad} exceeds maxval {maxval}")));
    }
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u16,
        pixels,
    })
}

impl PgmImage {
    /// Intensity in `[0,1]` at fractional pixel coordinates (bilinear).
    fn sample(&self, px: f64, py: f64) -> f64 {
        let axis = |p: f64, n: usize| -> (usize, usize, f64) {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let i = (p.floor() as usize).min(n - 2);
            (i, i + 1, p - i as f64)
        };
        let (x0, x1, a) = axis(px, self.width);
        let (y0, y1, b) = axis(py, self.height);
        let at = |x: usize, y: usize| self.pixels[y * self.width + x] as f64;
        let v = (1.0 - a) * (1.0 - b) * at(x0, y0)
            + a * (1.0 - b) * at(x1, y0)
            + (1.0 - a) * b * at(x0, y1)
            + a * b * at(x1, y1);
        v / self.maxval as f64
    }

    /// Resample onto grid nodes: the image corners map to the square's corners,
    /// image row `r` runs along increasing `y`.
    pub fn to_field(&self, grid: &Grid2D) -> ScalarField2D {
        let sx = (self.width - 1) as f64;
        let sy = (self.height - 1) as f64;
        ScalarField2D::from_fn(grid, |x, y| self.sample(x * sx, y * sy))
    }
}

/// Read a PGM file and resample it onto `grid` with intensities in `[0,1]`.
pub fn load_density(path: impl AsRef<Path>, grid: &Grid2D) -> Result<ScalarField2D> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        position: 0,
        message: e.to_string(),
    })?;
    Ok(parse_pgm(&bytes, path)?.to_field(grid))
}

/// Write a 16-bit binary graymap (maxval 65535, big-endian samples).
pub fn write_pgm16(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u16]) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(pixels.len() * 2);
    for p in pixels {
        out.extend_from_slice(&p.to_be_bytes());
    }
    std::fs::write(path, out).map_err(|source| Error::Export {
        path: path.to_path_buf(),
        source,
    })
}
