use std::path::Path;

use super::{DataError, Image};

fn parse_err(offset: usize, detail: impl Into<String>) -> DataError {
    DataError::Parse { offset, detail: detail.into() }
}

struct Header<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.buf.get(self.pos) {
            if b == b'#' {
                while self.buf.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, DataError> {
        self.skip_space();
        let start = self.pos;
        while self.buf.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, format!("{what} out of range")))
    }
}

/// Parses a binary P6 image with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image, DataError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(parse_err(0, "missing P6 magic"));
    }
    let mut h = Header { buf: bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(DataError::Unsupported(format!("maxval {maxval} at byte {maxval_at}; only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(maxval_at, "zero image dimension"));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(parse_err(h.pos, "expected a single whitespace byte before the raster")),
    }
    let need = 3 * width * height;
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(parse_err(bytes.len(), format!("raster truncated: {} of {need} bytes", raster.len())));
    }
    let mut data = vec![0.0f32; need];
    let plane = width * height;
    for (i, px) in raster[..need].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Image::new(height, width, data)
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    let plane = image.pixels();
    for i in 0..plane {
        for c in 0..3 {
            out.push((image.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn load_ppm(path: &Path) -> Result<Image, DataError> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<(), DataError> {
    std::fs::write(path, encode_ppm(image))?;
    Ok(())
}
