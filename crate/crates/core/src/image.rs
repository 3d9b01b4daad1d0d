//! 8-bit grayscale images and binary PGM (`P5`) I/O.

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {0}x{1}")]
    EmptyImage(u32, u32),
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage(width, height));
        }
        Ok(Self {
            width,
            height,
            pixels: vec![0; width as usize * height as usize],
        })
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage(width, height));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ImageError::SizeMismatch {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v;
    }

    /// Intensity at the pixel containing `(x, y)` in continuous pixel
    /// coordinates (pixel centres on integers); `None` outside the image.
    pub fn sample_nearest(&self, x: f64, y: f64) -> Option<u8> {
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return None;
        }
        Some(self.get(xi as u32, yi as u32))
    }

    pub fn read_pgm<R: Read>(mut reader: R) -> Result<Self, ImageError> {
        let mut data = Vec::new();
        reader.read_to_end(&mut data)?;
        Self::decode_pgm(&data)
    }

    pub fn decode_pgm(data: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0usize;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            // whitespace and comments
            while pos < data.len() {
                match data[pos] {
                    b'#' => {
                        while pos < data.len() && data[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    c if c.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() && data[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Pgm("truncated header".into()));
            }
            tokens.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
        }
        if tokens[0] != "P5" {
            return Err(ImageError::Pgm(format!("unsupported magic `{}`", tokens[0])));
        }
        let num = |s: &str, what: &str| {
            s.parse::<u32>()
                .map_err(|_| ImageError::Pgm(format!("bad {what} `{s}`")))
        };
        let width = num(&tokens[1], "width")?;
        let height = num(&tokens[2], "height")?;
        let maxval = num(&tokens[3], "maxval")?;
        if maxval != 255 {
            return Err(ImageError::Pgm(format!("maxval must be 255, got {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= data.len() || !data[pos].is_ascii_whitespace() {
            return Err(ImageError::Pgm("missing raster separator".into()));
        }
        pos += 1;
        let n = width as usize * height as usize;
        if data.len() < pos + n {
            return Err(ImageError::Pgm(format!(
                "raster has {} bytes, expected {n}",
                data.len() - pos
            )));
        }
        Self::from_pixels(width, height, data[pos..pos + n].to_vec())
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 20);
        self.write_pgm(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

/// Binary mask with the same layout as the image it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let mut img = GrayImage::new(5, 3).unwrap();
        img.set(4, 2, 255);
        img.set(0, 1, 17);
        let bytes = img.encode_pgm();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(GrayImage::decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_header_comments() {
        let mut data = b"P5 # magic\n# comment line\n2 1\n255\n".to_vec();
        data.extend_from_slice(&[9, 200]);
        let img = GrayImage::decode_pgm(&data).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixels(), &[9, 200]);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(GrayImage::decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::decode_pgm(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(GrayImage::decode_pgm(b"P5\n2 2\n255\n\0").is_err());
        assert!(GrayImage::decode_pgm(b"P5\n0 2\n255\n").is_err());
    }

    #[test]
    fn size_mismatch() {
        assert!(matches!(
            GrayImage::from_pixels(2, 2, vec![0; 3]),
            Err(ImageError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn nearest_sampling() {
        let mut img = GrayImage::new(3, 3).unwrap();
        img.set(1, 2, 99);
        assert_eq!(img.sample_nearest(1.4, 1.6), Some(99));
        assert_eq!(img.sample_nearest(-0.6, 0.0), None);
        assert_eq!(img.sample_nearest(-0.4, 0.0), Some(0));
    }
}
