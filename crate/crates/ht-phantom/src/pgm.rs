//! Binary 8-bit graymap (P5) encoding and decoding.

use ht_core::error::{Error, Result};

const MAX_PIXELS: usize = 1 << 26;

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::Dimension(format!(
            "{}x{} graymap needs {} bytes, got {}",
            width,
            height,
            width * height,
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

struct Lexer<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse("truncated graymap header".to_string()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        let s = std::str::from_utf8(tok)
            .map_err(|_| Error::Parse("non-ascii graymap header".to_string()))?;
        s.parse()
            .map_err(|_| Error::Parse(format!("bad graymap number `{s}`")))
    }
}

/// Decode a P5 graymap into (width, height, pixels).
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut lx = Lexer { bytes, pos: 0 };
    if lx.token()? != b"P5" {
        return Err(Error::Parse("not a P5 graymap".to_string()));
    }
    let width = lx.number()?;
    let height = lx.number()?;
    let maxval = lx.number()?;
    if width == 0 || height == 0 {
        return Err(Error::Parse("zero graymap extent".to_string()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("unsupported maxval {maxval}")));
    }
    let pixels = width
        .checked_mul(height)
        .filter(|n| *n <= MAX_PIXELS)
        .ok_or_else(|| Error::Parse("graymap too large".to_string()))?;
    // exactly one whitespace byte separates the header from the raster
    if lx.pos >= bytes.len() || !bytes[lx.pos].is_ascii_whitespace() {
        return Err(Error::Parse("missing raster separator".to_string()));
    }
    let start = lx.pos + 1;
    let end = start
        .checked_add(pixels)
        .ok_or_else(|| Error::Parse("graymap too large".to_string()))?;
    if bytes.len() < end {
        return Err(Error::Parse(format!(
            "raster truncated: need {pixels} bytes, have {}",
            bytes.len().saturating_sub(start)
        )));
    }
    Ok((width, height, bytes[start..end].to_vec()))
}

/// Quantize unit floats to bytes.
pub fn quantize(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn mask_bytes(mask: &[bool]) -> Vec<u8> {
    mask.iter().map(|m| if *m { 255 } else { 0 }).collect()
}
