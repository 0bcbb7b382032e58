//! The DAIR dataset file: a 28-byte little-endian header followed by
//! variable-length records.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DAIR";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

/// Ground truth for one object; centers are in pixel units with pixel `i`
/// centered at coordinate `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub category: u8,
    pub center_x: f32,
    pub center_y: f32,
    /// object size as a fraction of the canvas
    pub scale: f32,
    pub orientation: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    /// row-major `height × width` grayscale
    pub image: Vec<u8>,
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub count: u32,
    pub height: u32,
    pub width: u32,
    pub max_objects: u32,
    pub num_categories: u32,
}

impl DatasetHeader {
    pub fn new(count: usize, height: usize, width: usize, max_objects: usize, num_categories: usize) -> Self {
        DatasetHeader {
            version: VERSION,
            count: count as u32,
            height: height as u32,
            width: width as u32,
            max_objects: max_objects as u32,
            num_categories: num_categories as u32,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height as usize * self.width as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<SceneRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.version != VERSION {
            return Err(Error::invalid(format!("unsupported dataset version {}", h.version)));
        }
        if h.count as usize != self.records.len() {
            return Err(Error::invalid(format!("header count {} but {} records", h.count, self.records.len())));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.image.len() != h.pixels() {
                return Err(Error::invalid(format!("record {i}: image has {} bytes, expected {}", r.image.len(), h.pixels())));
            }
            if r.objects.len() > h.max_objects as usize || r.objects.len() > u8::MAX as usize {
                return Err(Error::invalid(format!("record {i}: {} objects exceed max_objects {}", r.objects.len(), h.max_objects)));
            }
            if let Some(o) = r.objects.iter().find(|o| o.category as u32 >= h.num_categories) {
                return Err(Error::invalid(format!("record {i}: category {} out of range", o.category)));
            }
        }
        Ok(())
    }

    /// Images at `indices`, scaled to [0, 1], as `[B, H, W]`.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let (h, w) = (self.header.height as usize, self.header.width as usize);
        let hw = h * w;
        let mut out = Vec::with_capacity(indices.len() * hw);
        let lut: Vec<T> = (0..=255).map(|v| T::lit(v as f64 / 255.0)).collect();
        for &i in indices {
            let r = self
                .records
                .get(i)
                .ok_or_else(|| Error::invalid(format!("record {i} out of range ({} records)", self.records.len())))?;
            out.extend(r.image.iter().map(|&v| lut[v as usize]));
        }
        Tensor::from_vec(&[indices.len(), h, w], out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + self.records.len() * (h.pixels() + 1));
        out.extend_from_slice(MAGIC);
        for v in [h.version, h.count, h.height, h.width, h.max_objects, h.num_categories] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for r in &self.records {
            out.push(r.objects.len() as u8);
            for o in &r.objects {
                out.push(o.category);
                for f in [o.center_x, o.center_y, o.scale, o.orientation] {
                    out.extend_from_slice(&f.to_le_bytes());
                }
            }
            out.extend_from_slice(&r.image);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected \"DAIR\"")));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let header = DatasetHeader {
            version,
            count: r.u32()?,
            height: r.u32()?,
            width: r.u32()?,
            max_objects: r.u32()?,
            num_categories: r.u32()?,
        };
        let mut records = Vec::with_capacity((header.count as usize).min(1 << 20));
        for _ in 0..header.count {
            let at = r.pos;
            let n = r.take(1)?[0];
            if n as u32 > header.max_objects {
                return Err(Error::format(at, format!("{n} objects exceed max_objects {}", header.max_objects)));
            }
            let mut objects = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let at = r.pos;
                let category = r.take(1)?[0];
                if category as u32 >= header.num_categories {
                    return Err(Error::format(at, format!("category {category} out of range")));
                }
                objects.push(SceneObject {
                    category,
                    center_x: r.f32()?,
                    center_y: r.f32()?,
                    scale: r.f32()?,
                    orientation: r.f32()?,
                });
            }
            let image = r.take(header.pixels())?.to_vec();
            records.push(SceneRecord { image, objects });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Dataset { header, records })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format(self.bytes.len(), format!("truncated: needed {n} bytes at offset {}", self.pos)));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset.to_bytes()?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::from_bytes(&std::fs::read(path)?)
}
