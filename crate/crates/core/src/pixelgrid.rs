//! Frame representation, color handling, downsampling, frame-max
//! preprocessing, and binary PPM (P6) file I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// An exact RGB color. Equality is bit-exact; there is no tolerance-based
/// comparison anywhere in sprite extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Color(pub [u8; 3]);

impl Color {
    pub const BLACK: Color = Color([0, 0, 0]);

    pub fn r(&self) -> u8 {
        self.0[0]
    }
    pub fn g(&self) -> u8 {
        self.0[1]
    }
    pub fn b(&self) -> u8 {
        self.0[2]
    }

    /// Packed 24-bit value; used for deterministic tie-breaking ("smallest
    /// color value") and compact display.
    pub fn packed(&self) -> u32 {
        ((self.0[0] as u32) << 16) | ((self.0[1] as u32) << 8) | self.0[2] as u32
    }
}

/// A rectangular grid of colors, row-major. Immutable after construction in
/// pipeline use; all operations on it are pure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<Color>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, color: Color) -> Result<Frame> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels: vec![color; width * height],
        })
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Color>) -> Result<Frame> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "pixel buffer of {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Color {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, color: Color) {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x] = color;
    }

    pub fn pixels(&self) -> &[Color] {
        &self.pixels
    }

    /// Iterate pixels in raster order (row-major, top-left to bottom-right).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Color)> + '_ {
        let w = self.width;
        self.pixels
            .iter()
            .enumerate()
            .map(move |(i, &c)| (i % w, i / w, c))
    }
}

/// Stride-2 subsampling: output pixel (x, y) is input pixel (2x, 2y).
/// Subsampling rather than averaging keeps sprite colors exact, which the
/// extraction algorithm depends on.
pub fn downsample(f: &Frame) -> Result<Frame> {
    if f.width % 2 != 0 || f.height % 2 != 0 {
        return Err(Error::Dimension(format!(
            "downsample requires even dimensions, got {}x{}",
            f.width, f.height
        )));
    }
    let (w, h) = (f.width / 2, f.height / 2);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            pixels.push(f.get(2 * x, 2 * y));
        }
    }
    Frame::from_pixels(w, h, pixels)
}

/// Per-pixel, per-channel maximum of two equally sized frames.
pub fn framemax(a: &Frame, b: &Frame) -> Result<Frame> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "framemax requires equal dimensions, got {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let pixels = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| {
            Color([
                p.0[0].max(q.0[0]),
                p.0[1].max(q.0[1]),
                p.0[2].max(q.0[2]),
            ])
        })
        .collect();
    Frame::from_pixels(a.width, a.height, pixels)
}

/// Read a binary PPM ("P6", 8-bit channels) file.
pub fn read_image(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes).map_err(|(offset, message)| Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    })
}

/// Write a frame as a binary PPM file. Lossless: `read_image(write_image(f)) == f`.
pub fn write_image(f: &Frame, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(f)).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm(f: &Frame) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", f.width, f.height);
    let mut out = Vec::with_capacity(header.len() + f.pixels.len() * 3);
    out.extend_from_slice(header.as_bytes());
    for p in &f.pixels {
        out.extend_from_slice(&p.0);
    }
    out
}

pub fn parse_ppm(bytes: &[u8]) -> std::result::Result<Frame, (usize, String)> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err((0, "expected magic \"P6\"".into()));
    }
    let mut pos = 2usize;
    let width = ppm_token(bytes, &mut pos)?;
    let height = ppm_token(bytes, &mut pos)?;
    let maxval = ppm_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err((pos, format!("unsupported maxval {maxval}, expected 255")));
    }
    // A single whitespace byte separates the header from raster data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err((pos, "expected whitespace before raster data".into()));
    }
    pos += 1;
    if width == 0 || height == 0 {
        return Err((pos, format!("invalid dimensions {width}x{height}")));
    }
    let need = width * height * 3;
    if bytes.len() - pos < need {
        return Err((
            bytes.len(),
            format!("truncated raster: need {need} bytes, have {}", bytes.len() - pos),
        ));
    }
    let pixels = bytes[pos..pos + need]
        .chunks_exact(3)
        .map(|c| Color([c[0], c[1], c[2]]))
        .collect();
    Frame::from_pixels(width, height, pixels).map_err(|e| (pos, e.to_string()))
}

fn ppm_token(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, (usize, String)> {
    // Skip whitespace and '#' comments.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err((start, "expected decimal integer".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|e| (start, format!("bad integer: {e}")))
}
