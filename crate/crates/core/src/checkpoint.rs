//! Named-tensor checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PSFDCKPT" | version u32 | entry count u32
//! per entry: name length u16 | name bytes | rank u8 | dims u32 * rank | f64 payload
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::backbone::{check_params, BackboneConfig};
use crate::error::{Error, Result};
use crate::tensor::{ParameterSet, Tensor};

pub const MAGIC: &[u8; 8] = b"PSFDCKPT";
pub const VERSION: u32 = 1;

pub fn encode(params: &ParameterSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::invalid(format!("tensor {name} has too many dimensions")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::invalid(format!("tensor {name} dimension too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::corrupt(self.path, format!("truncated at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a checkpoint; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<ParameterSet> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::corrupt(path, "bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::corrupt(path, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::corrupt(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::corrupt(path, format!("tensor {name} is too large")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::corrupt(path, "size overflow"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::corrupt(path, format!("tensor {name}: {e}")))?;
        params
            .insert(name, t)
            .map_err(|e| Error::corrupt(path, e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::corrupt(path, "trailing bytes after last entry"));
    }
    Ok(params)
}

pub fn save(params: &ParameterSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ParameterSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Path of the backbone description stored next to a checkpoint.
pub fn config_path(checkpoint: impl AsRef<Path>) -> PathBuf {
    let mut p = checkpoint.as_ref().as_os_str().to_owned();
    p.push(".toml");
    PathBuf::from(p)
}

/// Writes the parameters and, beside them, the backbone config as TOML.
pub fn save_model(params: &ParameterSet, backbone: &BackboneConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_params(backbone, params)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save(params, path)?;
    let text = toml::to_string(backbone).map_err(|e| Error::Config(e.to_string()))?;
    let cfg = config_path(path);
    fs::write(&cfg, text).map_err(|e| Error::io(&cfg, e))
}

/// Reads a checkpoint written by [`save_model`] and checks it against its config.
pub fn load_model(path: impl AsRef<Path>) -> Result<(ParameterSet, BackboneConfig)> {
    let path = path.as_ref();
    let cfg = config_path(path);
    let text = fs::read_to_string(&cfg).map_err(|e| Error::io(&cfg, e))?;
    let backbone: BackboneConfig = toml::from_str(&text).map_err(|e| Error::corrupt(&cfg, e.to_string()))?;
    let params = load(path)?;
    check_params(&backbone, &params)?;
    Ok((params, backbone))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap())
            .unwrap();
        p.insert("b", Tensor::vector(vec![0.1]).unwrap()).unwrap();
        p
    }

    #[test]
    fn byte_layout() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..8], b"PSFDCKPT");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        // first entry in name order is "b"
        assert_eq!(&bytes[16..18], &1u16.to_le_bytes());
        assert_eq!(bytes[18], b'b');
        assert_eq!(bytes[19], 1);
        assert_eq!(&bytes[20..24], &1u32.to_le_bytes());
        assert_eq!(&bytes[24..32], &0.1f64.to_le_bytes());
    }

    #[test]
    fn round_trip_and_corruption() {
        let p = sample();
        let bytes = encode(&p).unwrap();
        let path = Path::new("model.ckpt");
        assert_eq!(decode(&bytes, path).unwrap(), p);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = decode(&bad, path).unwrap_err().to_string();
        assert!(err.contains("model.ckpt") && err.contains("magic"), "{err}");
        assert!(decode(&bytes[..bytes.len() - 1], path).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer, path).is_err());
        let mut ver = bytes;
        ver[8] = 9;
        assert!(decode(&ver, path).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn model_with_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BackboneConfig::toy();
        let params = crate::backbone::init_params(&cfg).unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&params, &cfg, &path).unwrap();
        assert!(config_path(&path).ends_with("m.ckpt.toml"));
        let (p, c) = load_model(&path).unwrap();
        assert_eq!((p, c), (params.clone(), cfg.clone()));
        let other = BackboneConfig { global_dim: cfg.global_dim + 1, ..cfg };
        assert!(save_model(&params, &other, &path).is_err());
    }
}
