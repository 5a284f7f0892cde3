use std::io::Write;
use std::path::Path;

use super::DataError;

/// Standard line height produced by the renderer.
pub const LINE_HEIGHT: usize = 32;

pub const WHITE: u8 = 255;

/// Grayscale raster of one text line, row-major, 0 = black ink, 255 = paper.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LineImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl LineImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, DataError> {
        if width == 0 || height == 0 {
            return Err(DataError::BadImage(format!("empty raster {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(DataError::BadImage(format!(
                "expected {} bytes for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "empty raster");
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Pixel lookup with coordinates clamped to the border (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn map_pixels(&self, f: impl Fn(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, DataError> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                match bytes[pos] {
                    b'#' => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    b if b.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(DataError::BadImage("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(DataError::BadImage(format!("not a binary PGM: {}", fields[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| DataError::BadImage(format!("bad PGM header field {s:?}")))
        };
        let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(DataError::BadImage(format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let data = bytes
            .get(pos..pos + w * h)
            .ok_or_else(|| DataError::BadImage("truncated PGM raster".into()))?;
        Self::new(w, h, data.to_vec())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<(), DataError> {
        std::fs::File::create(path)?.write_all(&self.to_pgm())?;
        Ok(())
    }

    pub fn load_pgm(path: &Path) -> Result<Self, DataError> {
        Self::from_pgm(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let mut img = LineImage::filled(5, 3, 200);
        img.set(2, 1, 7);
        let back = LineImage::from_pgm(&img.to_pgm()).unwrap();
        assert_eq!(back, img);
        let commented = b"P5\n# hi\n2 1\n255\n\x01\x02";
        let c = LineImage::from_pgm(commented).unwrap();
        assert_eq!(c.pixels(), &[1, 2]);
    }

    #[test]
    fn rejects_bad_rasters() {
        assert!(LineImage::new(2, 2, vec![0; 3]).is_err());
        assert!(LineImage::new(0, 2, vec![]).is_err());
        assert!(LineImage::from_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(LineImage::from_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn clamped_access() {
        let mut img = LineImage::filled(3, 2, 0);
        img.set(0, 0, 9);
        assert_eq!(img.get_clamped(-4, -1), 9);
        assert_eq!(img.get_clamped(10, 10), 0);
    }
}
