//! Binary PGM (P5, 8-bit, maxval 255) reading and writing.
//!
//! Writing quantizes with `round(value * 255)`; reading divides by 255, so a
//! round trip is exact to within half a quantization step (1/510).

use std::fs;
use std::path::Path;

use super::Frame;
use crate::error::{Error, Result};

pub fn write_pgm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    bytes.extend(
        frame
            .pixels()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a P5 PGM file. The returned frame carries timestamp 0; callers that
/// know the capture time should attach it with [`Frame::with_timestamp`].
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let bytes = fs::read(path)?;
    let parse_err = |line: usize, message: &str| Error::Parse {
        path: name.clone(),
        line,
        message: message.to_string(),
    };

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(parse_err(1, "not a binary PGM (magic 'P5' missing)"));
    }
    // Header tokens after the magic: width, height, maxval. '#' starts a
    // comment that runs to end of line.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(1, "malformed PGM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("digits are utf-8")
            .parse()
            .map_err(|_| parse_err(1, "header value out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(parse_err(1, "only maxval 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(parse_err(1, "missing raster separator"));
    }
    pos += 1;
    let expected = width * height;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(parse_err(
            1,
            &format!("raster has {} bytes, expected {expected}", raster.len()),
        ));
    }
    Frame::new(
        width,
        height,
        0.0,
        raster.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let frame = Frame::from_fn(13, 7, 0.0, |x, y| ((x * 13 + y * 5) % 97) as f64 / 96.0);
        write_pgm(&frame, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.width(), 13);
        assert_eq!(back.height(), 7);
        for (a, b) in frame.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn extremes_map_to_raw_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.pgm");
        write_pgm(&Frame::filled(4, 2, 0.0, 0.0), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.ends_with(&[0u8; 8]));

        write_pgm(&Frame::filled(4, 2, 0.0, 1.0), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.ends_with(&[255u8; 8]));
    }

    #[test]
    fn rejects_wrong_magic_and_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        fs::write(&path, b"P2\n2 2\n255\n....").unwrap();
        assert!(read_pgm(&path).is_err());
        fs::write(&path, b"P5\n2 2\n65535\n1234").unwrap();
        assert!(read_pgm(&path).is_err());
    }

    #[test]
    fn reads_headers_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        fs::write(&path, b"P5\n# a comment\n2 1\n255\n\x10\xff").unwrap();
        let frame = read_pgm(&path).unwrap();
        assert_eq!(frame.width(), 2);
        assert_eq!(frame.at(1, 0), 1.0);
    }

    #[test]
    fn writes_are_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.pgm");
        let b = dir.path().join("b.pgm");
        let frame = Frame::from_fn(9, 9, 0.0, |x, y| (x ^ y) as f64 / 15.0);
        write_pgm(&frame, &a).unwrap();
        write_pgm(&frame, &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }
}
