//! Little-endian weight files: magic `BBEN`, `u32` version, `u32` array
//! count, then for each array a `u32` name length, the UTF-8 name, a `u32`
//! rank, one `u64` per extent and the `f32` payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BBEN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_checkpoint(arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(
        &u32::try_from(arrays.len())
            .map_err(|_| Error::Format("too many arrays".into()))?
            .to_le_bytes(),
    );
    for a in arrays {
        if a.shape.iter().product::<usize>() != a.data.len() {
            return Err(Error::Format(format!(
                "array {} has shape {:?} but {} values",
                a.name,
                a.shape,
                a.data.len()
            )));
        }
        out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
        for &e in &a.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in &a.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a BBEN checkpoint".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = c.u32()? as usize;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Format("array name is not UTF-8".into()))?
            .to_owned();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(
                usize::try_from(c.u64()?).map_err(|_| Error::Format("extent overflow".into()))?,
            );
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Format(format!("array {name} is too large")))?;
        let payload = c.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Format("payload overflow".into()))?,
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        arrays.push(NamedArray { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(arrays)
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_checkpoint(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    let bytes = encode_checkpoint(arrays)?;
    write_atomic(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedArray>> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_checkpoint(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::file(&tmp, e))?;
    f.sync_all().map_err(|e| Error::file(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedArray> {
        vec![
            NamedArray {
                name: "fc.w".into(),
                shape: vec![2, 3],
                data: vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, f32::MAX, -1e-30],
            },
            NamedArray {
                name: "b".into(),
                shape: vec![1],
                data: vec![0.125],
            },
        ]
    }

    #[test]
    fn byte_layout() {
        let bytes = encode_checkpoint(&sample()[1..]).unwrap();
        let mut expect = b"BBEN".to_vec();
        expect.extend([1, 0, 0, 0]);
        expect.extend([1, 0, 0, 0]);
        expect.extend([1, 0, 0, 0]);
        expect.push(b'b');
        expect.extend([1, 0, 0, 0]);
        expect.extend([1, 0, 0, 0, 0, 0, 0, 0]);
        expect.extend(0.125f32.to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let arrays = sample();
        let back = decode_checkpoint(&encode_checkpoint(&arrays).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in arrays.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn corrupt_inputs_fail_closed() {
        let good = encode_checkpoint(&sample()).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bad_magic),
            Err(Error::Format(_))
        ));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bad_version),
            Err(Error::Format(_))
        ));
        for cut in [3, 11, 20, good.len() - 1] {
            assert!(matches!(
                decode_checkpoint(&good[..cut]),
                Err(Error::Format(_))
            ));
        }
    }
}
