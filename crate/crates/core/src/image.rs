//! 8-bit grayscale images and binary PNM I/O.

use std::io::{self, Write};
use std::path::Path;

#[derive(thiserror::Error, Debug)]
pub enum ImageError {
    #[error("image buffer length {len} does not match {width}x{height}")]
    SizeMismatch { width: usize, height: usize, len: usize },
    #[error("unsupported or malformed PNM data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Row-major 8-bit intensity image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage { width, height, data: vec![0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage { width, height, data: vec![value; width * height] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::SizeMismatch { width, height, len: data.len() });
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at a continuous position; `None` outside the pixel grid.
    pub fn sample_bilinear(&self, x: f64, y: f64, wrap_x: bool) -> Option<f64> {
        let w = self.width as f64;
        if !x.is_finite() || !y.is_finite() || y < 0.0 || y > (self.height - 1) as f64 {
            return None;
        }
        let x = if wrap_x {
            x.rem_euclid(w)
        } else if x < 0.0 || x > w - 1.0 {
            return None;
        } else {
            x
        };
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = if wrap_x { (x0 + 1) % self.width } else { (x0 + 1).min(self.width - 1) };
        let y1 = (y0 + 1).min(self.height - 1);
        let x0 = x0.min(self.width - 1);
        let p = |xx: usize, yy: usize| self.get(xx, yy) as f64;
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    pub fn transposed(&self) -> GrayImage {
        let mut out = GrayImage::new(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(y, x, self.get(x, y));
            }
        }
        out
    }

    /// Decodes binary PGM (`P5`) or PPM (`P6`, converted to luma).
    pub fn decode_pnm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Format("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            other => return Err(ImageError::Format(format!("magic {other} (expected P5 or P6)"))),
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| ImageError::Format(format!("bad header field {s}")));
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(ImageError::Format(format!("maxval {maxval} (only 8-bit supported)")));
        }
        let need = width * height * channels;
        if bytes.len() < pos + need {
            return Err(ImageError::Format("truncated raster".into()));
        }
        let raster = &bytes[pos..pos + need];
        let data = if channels == 1 {
            raster.to_vec()
        } else {
            raster
                .chunks_exact(3)
                .map(|c| (0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64).round() as u8)
                .collect()
        };
        GrayImage::from_raw(width, height, data)
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn read_pnm(path: &Path) -> Result<Self, ImageError> {
        Self::decode_pnm(&std::fs::read(path)?)
    }

    pub fn write_pgm(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(&self.encode_pgm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::from_raw(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        assert_eq!(GrayImage::decode_pnm(&img.encode_pgm()).unwrap(), img);
    }

    #[test]
    fn ppm_to_luma() {
        let mut bytes = b"P6\n# comment\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 10, 200, 30]);
        let img = GrayImage::decode_pnm(&bytes).unwrap();
        assert_eq!(img.data(), &[76, 124]);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(GrayImage::decode_pnm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::decode_pnm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn bilinear_sampling() {
        let img = GrayImage::from_raw(2, 2, vec![0, 100, 100, 200]).unwrap();
        assert_eq!(img.sample_bilinear(0.5, 0.5, false), Some(100.0));
        assert_eq!(img.sample_bilinear(1.5, 0.0, false), None);
        assert_eq!(img.sample_bilinear(1.5, 0.0, true), Some(50.0));
    }
}
