//! Binary portable pixmap (P6) and graymap (P5) codec, 8-bit samples only.
//!
//! Decode accepts comments and arbitrary whitespace between header tokens and
//! reports failures with the byte offset where parsing stopped. Encode always
//! writes the canonical `magic\nW H\n255\n` header, so decode(encode(img)) is
//! bit-identical.

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

/// 8-bit raster, row-major, channels interleaved per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl Image {
    /// `channels` must be 1 (gray) or 3 (RGB); `pixels.len()` must equal
    /// `width·height·channels`.
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::shape(
                "Image pixel buffer",
                width * height * channels,
                pixels.len(),
            ));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Image::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn sample(&self, x: usize, y: usize, ch: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + ch]
    }

    pub fn sample_mut(&mut self, x: usize, y: usize, ch: usize) -> &mut u8 {
        &mut self.pixels[(y * self.width + x) * self.channels + ch]
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, what: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            what: what.into(),
        }
    }

    /// Skips whitespace and `#`-to-end-of-line comments.
    fn skip_separators(&mut self) {
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

    fn read_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.fail(format!("expected {what} digits")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("digits are ASCII")
            .parse::<usize>()
            .map_err(|_| Error::Format {
                offset: start,
                what: format!("{what} out of range"),
            })
    }
}

/// Parses a P5/P6 byte stream.
pub fn decode_pixmap(bytes: &[u8]) -> Result<Image> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 {
        return Err(cur.fail("not a pixmap: shorter than magic"));
    }
    let channels = match &bytes[0..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(cur.fail(format!(
                "bad magic {:?}: want P5 or P6",
                String::from_utf8_lossy(other)
            )))
        }
    };
    cur.pos = 2;
    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    if width == 0 || height == 0 {
        return Err(cur.fail(format!("degenerate dimensions {width}x{height}")));
    }
    cur.skip_separators();
    let maxval_at = cur.pos;
    let maxval = cur.read_uint("maxval")?;
    if maxval != 255 {
        return Err(Error::Format {
            offset: maxval_at,
            what: format!("maxval {maxval} unsupported; only 8-bit (255)"),
        });
    }
    // exactly one whitespace byte separates the header from the payload
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(cur.fail("expected single whitespace before payload"));
    }
    cur.pos += 1;
    let need = width * height * channels;
    let have = bytes.len() - cur.pos;
    if have < need {
        return Err(Error::Format {
            offset: bytes.len(),
            what: format!("payload truncated: need {need} bytes, have {have}"),
        });
    }
    if have > need {
        return Err(Error::Format {
            offset: cur.pos + need,
            what: format!("{} trailing bytes after payload", have - need),
        });
    }
    Image::new(width, height, channels, bytes[cur.pos..].to_vec())
}

/// Serializes to canonical P5/P6 bytes.
pub fn encode_pixmap(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn load_pixmap(path: &Path) -> Result<Image> {
    decode_pixmap(&fs::read(path)?)
}

pub fn save_pixmap(img: &Image, path: &Path) -> Result<()> {
    Ok(fs::write(path, encode_pixmap(img))?)
}
