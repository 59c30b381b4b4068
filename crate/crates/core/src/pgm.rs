//! 16-bit binary PGM (P5) images.
//!
//! Values in `[0, 1]` map linearly onto `0..=65535`, big-endian. Volumes are
//! written as their z-slices stacked vertically.

use std::path::Path;

use crate::binio::read_file;
use crate::error::{Error, Result};
use crate::image::RealImage;

pub const PGM_MAXVAL: u16 = u16::MAX;

pub fn encode_pgm(img: &RealImage) -> Result<Vec<u8>> {
    let [nx, ny, nz] = img.dims;
    if nx == 0 || ny * nz == 0 {
        return Err(Error::shape("cannot write an empty image"));
    }
    if let Some(v) = img.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("image contains {v}")));
    }
    let mut out = format!("P5\n{} {}\n{}\n", nx, ny * nz, PGM_MAXVAL).into_bytes();
    out.reserve(img.data.len() * 2);
    for &v in &img.data {
        let q = (v.clamp(0.0, 1.0) * PGM_MAXVAL as f64).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<(usize, u64)> {
    // skip whitespace and comments
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).unwrap_or("");
    let v = text
        .parse()
        .map_err(|_| Error::format(start as u64, "expected a decimal header field"))?;
    Ok((start, v))
}

/// Parses a P5 image as a single-slice `RealImage`.
pub fn decode_pgm(bytes: &[u8]) -> Result<RealImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format(0, "bad magic: not a binary PGM (P5)"));
    }
    let mut pos = 2;
    let (_, w) = header_token(bytes, &mut pos)?;
    let (_, h) = header_token(bytes, &mut pos)?;
    let (at, maxval) = header_token(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(at as u64, format!("maxval {maxval} out of range")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(pos as u64, "missing separator after header"));
    }
    pos += 1;
    let (w, h) = (w as usize, h as usize);
    let per = if maxval > 255 { 2 } else { 1 };
    let need = w * h * per;
    let found = bytes.len() - pos;
    if found != need {
        return Err(Error::format(
            pos as u64,
            format!("pixel data: expected {need} bytes, found {found}"),
        ));
    }
    let data = bytes[pos..]
        .chunks_exact(per)
        .map(|c| {
            let v = if per == 2 { u16::from_be_bytes([c[0], c[1]]) as f64 } else { c[0] as f64 };
            v / maxval as f64
        })
        .collect();
    RealImage::new([w, h, 1], data)
}

pub fn write_pgm(img: &RealImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<RealImage> {
    decode_pgm(&read_file(path)?)
}
