//! Flat binary dataset file.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        4 bytes  "PEWS"
//! version      u16
//! n            u64      sample count
//! feature_dim  u16
//! class_count  u16
//! n records:   feature_dim × f64, then label as u16
//! ```

use std::io::{Read, Write};

use super::{Dataset, Sample};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PEWS";
pub const VERSION: u16 = 1;

pub fn write_dataset<W: Write>(mut w: W, dataset: &Dataset) -> Result<()> {
    let feature_dim = u16::try_from(dataset.feature_dim())
        .map_err(|_| Error::Format("feature dimension exceeds u16".into()))?;
    let class_count = u16::try_from(dataset.class_count())
        .map_err(|_| Error::Format("class count exceeds u16".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dataset.len() as u64).to_le_bytes())?;
    w.write_all(&feature_dim.to_le_bytes())?;
    w.write_all(&class_count.to_le_bytes())?;
    for i in 0..dataset.len() {
        for v in dataset.features(i) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(dataset.label(i) as u16).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
    let feature_dim = u16::from_le_bytes(read_array(&mut r)?) as usize;
    let class_count = u16::from_le_bytes(read_array(&mut r)?) as usize;
    let mut samples = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let mut features = Vec::with_capacity(feature_dim);
        for _ in 0..feature_dim {
            features.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let label = u16::from_le_bytes(read_array(&mut r)?) as usize;
        samples.push(Sample { features, label });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Dataset::new(samples, class_count)
}
