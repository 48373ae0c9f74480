//! Flat parameter container: a 16-byte header (8-byte magic, `u32` version,
//! `u32` value count, little-endian) followed by the values as little-endian
//! `f64`.

use std::path::Path;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode(magic: &[u8; 8], values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(magic: &[u8; 8], bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::ParamFile(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::ParamFile(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::ParamFile(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * 8 {
        return Err(Error::ParamFile(format!(
            "header announces {count} values but body has {} bytes",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::ParamFile("non-finite parameter".into()));
    }
    Ok(values)
}

pub fn read(magic: &[u8; 8], path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    decode(magic, &bytes).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        let magic = b"TESTMAGC";
        let bytes = encode(magic, &[1.5, -2.0]);
        assert_eq!(bytes.len(), 32);
        assert_eq!(decode(magic, &bytes).unwrap(), vec![1.5, -2.0]);
        assert!(decode(b"OTHERMAG", &bytes).is_err());
        assert!(decode(magic, &bytes[..20]).is_err());
        let mut bad_version = bytes.clone();
        bad_version[8] = 9;
        assert!(decode(magic, &bad_version).is_err());
        assert!(decode(magic, &encode(magic, &[f64::NAN])).is_err());
    }
}
