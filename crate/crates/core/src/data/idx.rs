//! Reader for the IDX format used by the MNIST distribution.

use std::path::Path;

use crate::error::{Error, Result};

/// Unsigned-byte array with its declared shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

const UNSIGNED_BYTE: u8 = 0x08;

/// Parses an IDX byte stream: two zero bytes, the element type, the rank,
/// then `rank` big-endian u32 dimensions and the payload.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len(), "truncated IDX magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format(0, format!("IDX magic must start with two zero bytes, found {:02x} {:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != UNSIGNED_BYTE {
        return Err(Error::format(2, format!("unsupported IDX element type 0x{:02x} (only unsigned bytes)", bytes[2])));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(Error::format(3, "IDX rank must be at least 1"));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::format(bytes.len(), format!("truncated IDX header: {rank} dimensions need {header} bytes")));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(4, "IDX dimensions overflow"))?;
    let payload = &bytes[header..];
    if payload.len() < n {
        return Err(Error::format(
            bytes.len(),
            format!("IDX payload has {} bytes, dimensions {shape:?} need {n}", payload.len()),
        ));
    }
    if payload.len() > n {
        return Err(Error::format(header + n, format!("{} trailing bytes after the IDX payload", payload.len() - n)));
    }
    Ok(IdxArray {
        shape,
        data: payload.to_vec(),
    })
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    parse_idx(&std::fs::read(path)?)
}

/// Serializes an unsigned-byte array in IDX layout.
pub fn encode_idx(array: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, UNSIGNED_BYTE, array.shape.len() as u8];
    for &d in &array.shape {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_images_and_labels() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 10, 0, 0, 0, 28, 0, 0, 0, 28];
        bytes.extend(std::iter::repeat_n(7u8, 7840));
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.shape, vec![10, 28, 28]);
        assert_eq!(a.data.len(), 7840);

        let mut labels = vec![0, 0, 8, 1, 0, 0, 0, 10];
        labels.extend(0u8..10);
        assert_eq!(parse_idx(&labels).unwrap().data, (0u8..10).collect::<Vec<_>>());
        assert_eq!(encode_idx(&parse_idx(&labels).unwrap()), labels);
    }

    #[test]
    fn rejects_bad_streams() {
        let short = [0, 0, 8, 1, 0, 0, 0, 10, 1, 2];
        match parse_idx(&short).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 10),
            e => panic!("{e}"),
        }
        assert!(parse_idx(&[0, 1, 8, 1, 0, 0, 0, 0]).is_err());
        assert!(parse_idx(&[0, 0, 9, 1, 0, 0, 0, 0]).is_err());
        assert!(parse_idx(&[0, 0, 8]).is_err());
    }
}
