//! SVF volume / SVM mask files and the shared "JSON header line + binary
//! payload" container used by parameter files and episode logs.
//!
//! Layout: one UTF-8 JSON object terminated by `\n`, then the raw payload.
//! Volume payloads are little-endian `f32`, channel-major then a/b/c.
//! Mask payloads are one `u8` per voxel.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Dims, Mask, Volume};

pub const SVF_MAGIC: &str = "SVF1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridHeader {
    magic: String,
    dims: [usize; 3],
    channels: usize,
    spacing_mm: [f64; 3],
    dtype: String,
}

fn format_err(path: &Path, field: &'static str, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        field,
        message: message.into(),
    }
}

/// Splits `bytes` at the first newline and parses the JSON header.
pub fn split_header<H: DeserializeOwned>(bytes: &[u8], origin: &Path) -> Result<(H, Vec<u8>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err(origin, "header", "missing newline-terminated JSON header"))?;
    let text = std::str::from_utf8(&bytes[..nl]).map_err(|e| format_err(origin, "header", e.to_string()))?;
    let header = serde_json::from_str(text).map_err(|e| format_err(origin, "header", e.to_string()))?;
    Ok((header, bytes[nl + 1..].to_vec()))
}

pub fn join_header<H: Serialize>(header: &H, payload: &[u8]) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serialises");
    out.push(b'\n');
    out.extend_from_slice(payload);
    out
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn f32_payload<T: Real>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out
}

pub fn parse_f32_payload<T: Real>(payload: &[u8], expected: usize, origin: &Path, field: &'static str) -> Result<Vec<T>> {
    if payload.len() != expected * 4 {
        return Err(format_err(
            origin,
            field,
            format!("payload has {} bytes, header implies {}", payload.len(), expected * 4),
        ));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}

fn check_grid_header(h: &GridHeader, origin: &Path, dtype: &str) -> Result<Dims> {
    if h.magic != SVF_MAGIC {
        return Err(format_err(origin, "magic", format!("expected {SVF_MAGIC}, got {}", h.magic)));
    }
    if h.dtype != dtype {
        return Err(format_err(origin, "dtype", format!("expected {dtype}, got {}", h.dtype)));
    }
    if h.dims.contains(&0) {
        return Err(format_err(origin, "dims", format!("{:?} has a zero extent", h.dims)));
    }
    if h.spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(format_err(origin, "spacing_mm", format!("{:?} must be positive", h.spacing_mm)));
    }
    Ok(Dims(h.dims[0], h.dims[1], h.dims[2]))
}

pub fn encode_volume<T: Real>(x: &Volume<T>) -> Vec<u8> {
    let header = GridHeader {
        magic: SVF_MAGIC.into(),
        dims: x.dims().as_array(),
        channels: x.channels(),
        spacing_mm: x.spacing_mm(),
        dtype: "f32le".into(),
    };
    join_header(&header, &f32_payload(x.data()))
}

pub fn decode_volume<T: Real>(bytes: &[u8], origin: &Path) -> Result<Volume<T>> {
    let (h, payload): (GridHeader, _) = split_header(bytes, origin)?;
    let dims = check_grid_header(&h, origin, "f32le")?;
    if h.channels == 0 {
        return Err(format_err(origin, "channels", "must be positive"));
    }
    let data = parse_f32_payload(&payload, h.channels * dims.len(), origin, "dims")?;
    Volume::new(dims, h.channels, h.spacing_mm, data).map_err(|e| format_err(origin, "data", e.to_string()))
}

pub fn encode_mask(m: &Mask, spacing_mm: [f64; 3]) -> Vec<u8> {
    let header = GridHeader {
        magic: SVF_MAGIC.into(),
        dims: m.dims().as_array(),
        channels: 1,
        spacing_mm,
        dtype: "u8".into(),
    };
    join_header(&header, m.as_bytes())
}

pub fn decode_mask(bytes: &[u8], origin: &Path) -> Result<Mask> {
    let (h, payload): (GridHeader, _) = split_header(bytes, origin)?;
    let dims = check_grid_header(&h, origin, "u8")?;
    if h.channels != 1 {
        return Err(format_err(origin, "channels", format!("mask must have 1 channel, got {}", h.channels)));
    }
    if payload.len() != dims.len() {
        return Err(format_err(
            origin,
            "dims",
            format!("payload has {} bytes, header implies {}", payload.len(), dims.len()),
        ));
    }
    Mask::from_bytes(dims, payload).map_err(|e| format_err(origin, "data", e.to_string()))
}

pub fn write_volume<T: Real>(path: impl AsRef<Path>, x: &Volume<T>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_volume(x))
}

pub fn read_volume<T: Real>(path: impl AsRef<Path>) -> Result<Volume<T>> {
    let path = path.as_ref();
    decode_volume(&read_bytes(path)?, path)
}

pub fn write_mask(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(m, [1.0; 3]))
}

pub fn write_mask_with_spacing(path: impl AsRef<Path>, m: &Mask, spacing_mm: [f64; 3]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(m, spacing_mm))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    decode_mask(&read_bytes(path)?, path)
}

/// Origin label for in-memory buffers in error messages.
pub fn memory_origin() -> PathBuf {
    PathBuf::from("<memory>")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_text_is_exact() {
        let x = Volume::new(Dims(1, 1, 2), 1, [0.5, 0.5, 3.0], vec![1.0f32, -2.0]).unwrap();
        let bytes = encode_volume(&x);
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..nl]).unwrap(),
            r#"{"magic":"SVF1","dims":[1,1,2],"channels":1,"spacing_mm":[0.5,0.5,3.0],"dtype":"f32le"}"#
        );
        assert_eq!(&bytes[nl + 1..nl + 5], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), nl + 1 + 8);
    }

    #[test]
    fn errors_name_the_field() {
        let origin = memory_origin();
        let m = Mask::full(Dims(2, 2, 2));
        let mut bytes = encode_mask(&m, [1.0; 3]);
        bytes.pop();
        match decode_mask(&bytes, &origin).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "dims"),
            e => panic!("{e}"),
        }

        let bad = br#"{"magic":"SVF1","dims":[1,1,1],"channels":1,"spacing_mm":[1,1,1],"dtype":"f64le"}
12345678"#;
        match decode_volume::<f32>(bad, &origin).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "dtype"),
            e => panic!("{e}"),
        }

        let bad = br#"{"magic":"XXXX","dims":[1,1,1],"channels":1,"spacing_mm":[1,1,1],"dtype":"u8"}
"#;
        match decode_mask(bad, &origin).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "magic"),
            e => panic!("{e}"),
        }

        match decode_mask(b"no header here", &origin).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "header"),
            e => panic!("{e}"),
        }

        // a volume file is not a mask
        let v = Volume::filled(Dims(1, 1, 1), 1, 0.0f32);
        match decode_mask(&encode_volume(&v), &origin).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "dtype"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let x = Volume::from_fn(Dims(3, 2, 4), 2, |ch, v| (ch * 100 + v.a * 10 + v.b + v.c) as f32 * 0.37)
            .unwrap()
            .with_spacing([0.5, 0.5, 3.0])
            .unwrap();
        let p = dir.path().join("x.svf");
        write_volume(&p, &x).unwrap();
        assert_eq!(read_volume::<f32>(&p).unwrap(), x);

        let m = Mask::from_fn(Dims(3, 2, 4), |v| (v.a + v.c) % 2 == 0);
        let p = dir.path().join("m.svm");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);

        assert!(matches!(read_mask(dir.path().join("missing.svm")), Err(Error::Io { .. })));
    }
}
