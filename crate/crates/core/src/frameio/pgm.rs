//! Binary PGM (P5) codec restricted to maxval 255.

use std::path::Path;

use crate::error::{Error, Result};

/// Decoded 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Encodes with the canonical header `P5\n<w> <h>\n255\n`.
pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let header = format!("P5\n{width} {height}\n255\n");
    let mut out = Vec::with_capacity(header.len() + pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(pixels);
    out
}

/// Decodes a P5 image. Header tokens are separated by whitespace; `#` comments
/// are skipped. Exactly one whitespace byte separates maxval from the raster.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Gray> {
    let fail = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("truncated PGM header".into()));
        }
        tokens.push(&bytes[start..pos]);
    }
    if tokens[0] != b"P5" {
        return Err(fail(format!(
            "bad magic {:?}, expected P5",
            String::from_utf8_lossy(tokens[0])
        )));
    }
    let number = |tok: &[u8], what: &str| -> Result<usize> {
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| fail(format!("ill-formed {what} {:?}", String::from_utf8_lossy(tok))))
    };
    let width = number(tokens[1], "width")?;
    let height = number(tokens[2], "height")?;
    let maxval = number(tokens[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(fail(format!("empty raster {width}x{height}")));
    }
    if maxval != 255 {
        return Err(fail(format!("maxval {maxval} unsupported, expected 255")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail("missing raster separator".into()));
    }
    pos += 1;
    let expected = width * height;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(fail(format!(
            "raster has {} bytes, expected {expected}",
            raster.len()
        )));
    }
    Ok(Gray {
        width,
        height,
        pixels: raster.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_comments_and_loose_whitespace() {
        let mut bytes = b"P5 # made by hand\n2\t\t1\n255 ".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let img = decode(&bytes, Path::new("x.pgm")).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixels, vec![7, 9]);
    }

    #[test]
    fn rejects_wrong_magic_and_maxval() {
        let err = decode(b"P2\n1 1\n255\n\x00", Path::new("a.pgm")).unwrap_err();
        assert!(err.to_string().contains("a.pgm"), "{err}");
        assert!(decode(b"P5\n1 1\n65535\n\x00\x00", Path::new("b.pgm")).is_err());
        assert!(decode(b"P5\n1 1", Path::new("c.pgm")).is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00", Path::new("d.pgm")).is_err());
    }

    proptest! {
        #[test]
        fn reencode_is_byte_identical(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
            let pixels: Vec<u8> = (0..w * h)
                .map(|i| (seed.wrapping_mul(i as u64 + 1).wrapping_add(i as u64 * 31) >> 7) as u8)
                .collect();
            let bytes = encode(w, h, &pixels);
            let img = decode(&bytes, Path::new("p.pgm")).unwrap();
            prop_assert_eq!(encode(img.width, img.height, &img.pixels), bytes);
        }
    }
}
