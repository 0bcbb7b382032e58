//! `DAIRCKPT` files: a manifest of named arrays followed by their raw
//! little-endian payloads. Version 1 stores 32-bit floats, version 2 stores
//! 64-bit floats with the same layout.
//!
//! Layout: magic (8 bytes), version u32, array count u32, then per array
//! name length u16, name bytes, rank u8, rank × u32 dims; then every payload
//! in manifest order. All integers little-endian.
//!
//! Array order: model parameters in registration order, then `<name>.m`
//! and `<name>.v` Adam moments per parameter, then `train.step` (four
//! 16-bit halves of the u64 step counter, lowest first), `train.tau`,
//! `model.config` and `train.config` (UTF-8 bytes of the key=value text, one
//! byte per element).

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 8] = b"DAIRCKPT";
pub const CKPT_F32: u32 = 1;
pub const CKPT_F64: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    /// payload widened to f64 (exact for both versions)
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        NamedArray {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::from_vec(&self.shape, self.data.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn from_u64(name: impl Into<String>, v: u64) -> Self {
        NamedArray {
            name: name.into(),
            shape: vec![4],
            data: (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f64).collect(),
        }
    }

    pub fn to_u64(&self) -> Result<u64> {
        if self.data.len() != 4 || self.data.iter().any(|&h| !(0.0..65536.0).contains(&h) || h.fract() != 0.0) {
            return Err(Error::invalid(format!("{} is not an encoded counter", self.name)));
        }
        Ok(self.data.iter().enumerate().fold(0u64, |acc, (i, &h)| acc | ((h as u64) << (16 * i))))
    }

    pub fn from_text(name: impl Into<String>, text: &str) -> Self {
        let bytes = text.as_bytes();
        NamedArray {
            name: name.into(),
            shape: vec![bytes.len().max(1)],
            data: if bytes.is_empty() {
                vec![0.0]
            } else {
                bytes.iter().map(|&b| b as f64).collect()
            },
        }
    }

    pub fn to_text(&self) -> Result<String> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .filter(|&&b| b != 0.0)
            .map(|&b| b as u8)
            .collect();
        String::from_utf8(bytes).map_err(|_| Error::invalid(format!("{} is not UTF-8 text", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::invalid(format!("checkpoint has no array {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let width = match self.version {
            CKPT_F32 => 4,
            CKPT_F64 => 8,
            v => return Err(Error::invalid(format!("unknown checkpoint version {v}"))),
        };
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            let n: usize = a.shape.iter().product();
            if n != a.data.len() || a.shape.len() > u8::MAX as usize || a.name.len() > u16::MAX as usize {
                return Err(Error::invalid(format!("malformed array {}", a.name)));
            }
            out.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.shape.len() as u8);
            for &d in &a.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        let total: usize = self.arrays.iter().map(|a| a.data.len()).sum();
        out.reserve(total * width);
        for a in &self.arrays {
            for &v in &a.data {
                if width == 4 {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                } else {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(Error::format(bytes.len(), format!("truncated checkpoint: needed {n} bytes at offset {pos}")));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(8)? != CKPT_MAGIC {
            return Err(Error::format(0, "bad checkpoint magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        let width = match version {
            CKPT_F32 => 4,
            CKPT_F64 => 8,
            v => return Err(Error::format(8, format!("unsupported checkpoint version {v}"))),
        };
        let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(take(len)?.to_vec())
                .map_err(|_| Error::format(0, "array name is not UTF-8"))?;
            let rank = take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize);
            }
            manifest.push((name, shape));
        }
        let mut arrays = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            let raw = take(n * width)?;
            let data = if width == 4 {
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect()
            } else {
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            };
            arrays.push(NamedArray { name, shape, data });
        }
        if pos != bytes.len() {
            return Err(Error::format(pos, format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint { version, arrays })
    }

    /// Writes through a temporary file so an interrupted save never clobbers
    /// the previous checkpoint.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_both_widths() {
        let arrays = vec![
            NamedArray {
                name: "w".into(),
                shape: vec![2, 2],
                data: vec![1.5, -0.0, 3.25, 1e-7],
            },
            NamedArray::from_u64("train.step", 0x0123_4567_89ab_cdef),
            NamedArray::from_text("model.config", "a=1\n"),
        ];
        for version in [CKPT_F32, CKPT_F64] {
            let c = Checkpoint {
                version,
                arrays: arrays.clone(),
            };
            let bytes = c.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back.to_bytes().unwrap(), bytes);
            assert_eq!(back.get("train.step").unwrap().to_u64().unwrap(), 0x0123_4567_89ab_cdef);
            assert_eq!(back.get("model.config").unwrap().to_text().unwrap(), "a=1\n");
        }
        let c = Checkpoint { version: CKPT_F32, arrays };
        let bytes = c.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
