//! Binary netpbm readers/writers (PPM P6 and PGM P5, 8-bit).
//!
//! The writer emits the canonical header `P6\n{w} {h}\n255\n` so that a
//! load/save cycle of a canonical file is byte-identical. The reader accepts
//! the full header grammar (comments, arbitrary whitespace).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct RawImage {
    pub w: usize,
    pub h: usize,
    /// 1 (PGM) or 3 (PPM); samples are interleaved row-major.
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Returns (width, height, maxval, raster offset).
fn parse_header_fields(
    path: &Path,
    bytes: &[u8],
    magic: &[u8],
) -> Result<(usize, usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::file(
            path,
            format!(
                "malformed header: expected magic {}, found {:?}",
                String::from_utf8_lossy(magic),
                &bytes[..bytes.len().min(2)]
            ),
        ));
    }
    // three ASCII integers (width, height, maxval) separated by whitespace,
    // with '#' comments running to end of line
    let mut fields = [0usize; 3];
    let mut field = 0;
    let mut i = 2;
    while field < 3 {
        while i < bytes.len() {
            match bytes[i] {
                b' ' | b'\t' | b'\r' | b'\n' => i += 1,
                b'#' => {
                    while i < bytes.len() && bytes[i] != b'\n' {
                        i += 1;
                    }
                }
                _ => break,
            }
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(Error::file(path, "malformed header: missing size field"));
        }
        let text = std::str::from_utf8(&bytes[start..i]).unwrap();
        fields[field] = text
            .parse()
            .map_err(|_| Error::file(path, format!("malformed header field {text:?}")))?;
        field += 1;
    }
    // exactly one whitespace byte separates the header from the raster
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(Error::file(path, "malformed header: missing raster separator"));
    }
    Ok((fields[0], fields[1], fields[2], i + 1))
}

fn read_netpbm(path: &Path, magic: &[u8], channels: usize) -> Result<RawImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e.to_string()))?;
    let (w, h, maxval, data_start) = parse_header_fields(path, &bytes, magic)?;
    if maxval != 255 {
        return Err(Error::file(
            path,
            format!("unsupported bit depth: maxval {maxval}, only 8-bit (255) is supported"),
        ));
    }
    if w == 0 || h == 0 {
        return Err(Error::file(path, format!("degenerate image size {w}x{h}")));
    }
    let expected = w * h * channels;
    let raster = &bytes[data_start..];
    if raster.len() < expected {
        return Err(Error::file(
            path,
            format!("truncated raster: expected {expected} bytes, found {}", raster.len()),
        ));
    }
    Ok(RawImage { w, h, channels, data: raster[..expected].to_vec() })
}

/// Read an 8-bit binary PPM (P6).
pub fn read_ppm(path: &Path) -> Result<RawImage> {
    read_netpbm(path, b"P6", 3)
}

/// Read an 8-bit binary PGM (P5).
pub fn read_pgm(path: &Path) -> Result<RawImage> {
    read_netpbm(path, b"P5", 1)
}

fn write_netpbm(path: &Path, magic: &str, w: usize, h: usize, channels: usize, data: &[u8]) -> Result<()> {
    assert_eq!(data.len(), w * h * channels);
    let mut buf = Vec::with_capacity(data.len() + 32);
    write!(buf, "{magic}\n{w} {h}\n255\n")?;
    buf.extend_from_slice(data);
    std::fs::write(path, buf).map_err(|e| Error::file(path, e.to_string()))
}

/// Write an 8-bit binary PPM (P6) with canonical header.
pub fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    write_netpbm(path, "P6", w, h, 3, rgb)
}

/// Write an 8-bit binary PGM (P5) with canonical header.
pub fn write_pgm(path: &Path, w: usize, h: usize, gray: &[u8]) -> Result<()> {
    write_netpbm(path, "P5", w, h, 1, gray)
}
