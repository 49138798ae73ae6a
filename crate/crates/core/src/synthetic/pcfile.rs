//! Point cloud files.
//!
//! Binary layout: `"PSFDPC1"` | point count u32 LE | `count` little-endian
//! `f32` (x, y, z) triples. Plain text with one `x y z` triple per line is
//! accepted for import.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const MAGIC: &[u8; 7] = b"PSFDPC1";

/// Coordinates are stored as `f32`; callers wanting a lossless round trip
/// should pass clouds through [`PointCloud::quantized_f32`] first.
pub fn encode(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + 12 * cloud.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.points() {
        for c in p {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let header = MAGIC.len() + 4;
    if bytes.len() < header || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::corrupt(path, "bad point cloud header"));
    }
    let count = u32::from_le_bytes(bytes[MAGIC.len()..header].try_into().expect("4 bytes")) as usize;
    let body = &bytes[header..];
    if body.len() != count * 12 {
        return Err(Error::corrupt(
            path,
            format!("header declares {count} points but payload holds {} bytes", body.len()),
        ));
    }
    let coords: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    PointCloud::from_flat(&coords).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::corrupt(path, format!("line {}: {e}", no + 1)))?;
        if vals.len() != 3 {
            return Err(Error::corrupt(
                path,
                format!("line {}: expected 3 values, found {}", no + 1, vals.len()),
            ));
        }
        pts.push([vals[0], vals[1], vals[2]]);
    }
    PointCloud::new(pts).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, path)
}

/// Reads either format, deciding by the leading magic bytes.
pub fn read_any(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        decode(&bytes, path)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::corrupt(path, "neither binary nor text"))?;
        parse_xyz(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_layout() {
        let c = PointCloud::new(vec![[1.0, -2.0, 0.5]]).unwrap();
        let b = encode(&c);
        assert_eq!(&b[..7], b"PSFDPC1");
        assert_eq!(&b[7..11], &1u32.to_le_bytes());
        assert_eq!(&b[11..15], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 23);
        assert_eq!(decode(&b, Path::new("x")).unwrap(), c);
    }

    #[test]
    fn corrupt_inputs_name_the_file() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let mut b = encode(&c);
        b[0] = b'Q';
        let err = decode(&b, Path::new("a/b.pc")).unwrap_err().to_string();
        assert!(err.contains("a/b.pc"), "{err}");
        let b = encode(&c);
        assert!(decode(&b[..b.len() - 2], Path::new("t.pc")).is_err());
    }

    #[test]
    fn ascii_import() {
        let c = parse_xyz("# header\n0 0 0\n1.5 2 -3\n\n", Path::new("p.xyz")).unwrap();
        assert_eq!(c.points(), &[[0.0; 3], [1.5, 2.0, -3.0]]);
        let err = parse_xyz("1 2\n", Path::new("p.xyz")).unwrap_err().to_string();
        assert!(err.contains("p.xyz") && err.contains("line 1"), "{err}");
        assert!(parse_xyz("", Path::new("e.xyz")).is_err());
    }
}
