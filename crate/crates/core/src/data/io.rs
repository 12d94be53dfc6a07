use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Dataset, Provenance, Trial, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::tensor::write_atomic;

pub const DATASET_MAGIC: &[u8; 4] = b"ECOG";
pub const DATASET_VERSION: u32 = 1;

/// Serialises a dataset:
///
/// ```text
/// "ECOG" | u32 version | u32 n_trials | u16 channels | u16 background samples | u16 active samples
/// per trial: u16 subject length | subject UTF-8 | u8 label | f32 background | f32 active
/// ```
///
/// All integers and floats are little-endian. Blocks are channel-major.
pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let narrow = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit the u16 header field")))
    };
    let block = ds.channels * ds.samples;
    let mut out = Vec::with_capacity(20 + ds.len() * (8 * block + 16));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    let n = u32::try_from(ds.len()).map_err(|_| Error::Format("too many trials".into()))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&narrow(ds.channels, "channel count")?.to_le_bytes());
    out.extend_from_slice(&narrow(ds.samples, "background length")?.to_le_bytes());
    out.extend_from_slice(&narrow(ds.samples, "active length")?.to_le_bytes());
    for t in &ds.trials {
        out.extend_from_slice(&narrow(t.subject.len(), "subject tag length")?.to_le_bytes());
        out.extend_from_slice(t.subject.as_bytes());
        let label = u8::try_from(t.label).map_err(|_| Error::Format(format!("label {} exceeds u8", t.label)))?;
        out.push(label);
        for v in t.background.iter().chain(&t.active) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("dataset truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("block size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

/// Parses [`encode_dataset`] output; any inconsistency is a format error.
pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "dataset version {version} is not supported (expected {DATASET_VERSION})"
        )));
    }
    let n = r.u32()? as usize;
    let channels = r.u16()? as usize;
    let background_len = r.u16()? as usize;
    let active_len = r.u16()? as usize;
    if background_len != active_len {
        return Err(Error::Format(format!(
            "background ({background_len}) and active ({active_len}) lengths differ"
        )));
    }
    let block = channels * active_len;
    let mut trials = Vec::with_capacity(n.min(bytes.len() / (8 * block).max(1)));
    for i in 0..n {
        let len = r.u16()? as usize;
        let subject = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format(format!("trial {i} subject tag is not UTF-8")))?
            .to_string();
        let label = r.take(1)?[0] as usize;
        if label >= CLASS_NAMES.len() {
            return Err(Error::Format(format!("trial {i} label {label} is out of range")));
        }
        let background = r.f32s(block)?;
        let active = r.f32s(block)?;
        trials.push(Trial {
            background,
            active,
            label,
            subject,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after the last trial", bytes.len() - r.pos)));
    }
    Ok(Dataset {
        channels,
        samples: active_len,
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        trials,
        provenance: Provenance::Derived("decoded".into()),
    })
}

/// Hex SHA-256 of the encoded dataset; identical to hashing the saved file.
pub fn dataset_digest(ds: &Dataset) -> Result<String> {
    Ok(hex::encode(Sha256::digest(encode_dataset(ds)?)))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let mut ds = decode_dataset(&bytes)?;
    ds.provenance = Provenance::File {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    };
    Ok(ds)
}

/// `trial_index,label,subject` rows with a header line.
pub fn labels_csv(ds: &Dataset) -> String {
    let mut out = String::from("trial_index,label,subject\n");
    for (i, t) in ds.trials.iter().enumerate() {
        writeln!(out, "{i},{},{}", t.label, t.subject).expect("string write");
    }
    out
}

pub fn write_labels_csv(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, labels_csv(ds).as_bytes())
}

/// Writes the generator configuration (signature electrodes and bands) as JSON.
pub fn write_ground_truth(ds: &Dataset, path: &Path) -> Result<()> {
    let Provenance::Synthetic(cfg) = &ds.provenance else {
        return Err(Error::Input("dataset carries no synthetic ground truth".into()));
    };
    write_atomic(path, serde_json::to_string_pretty(cfg)?.as_bytes())
}
