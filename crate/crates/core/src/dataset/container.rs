//! The `SSEP` epoch container.
//!
//! ```text
//! "SSEP"  version:u16  count:u64
//! count × { key_len:u16  key:utf8  epoch_index:u32  label:u8  samples:f32[3840·7] }
//! ```
//!
//! All integers and floats little-endian; samples in [`SleepEpoch`] layout.

use std::io::{Read, Write};

use super::DatasetError;
use crate::epoch::{SleepEpoch, EPOCH_SAMPLES, NUM_CHANNELS};
use crate::stage::Stage;

pub const MAGIC: &[u8; 4] = b"SSEP";
pub const VERSION: u16 = 1;

pub fn write_container(mut w: impl Write, epochs: &[SleepEpoch]) -> Result<(), DatasetError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(epochs.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(EPOCH_SAMPLES * NUM_CHANNELS * 4);
    for e in epochs {
        let key = e.patient_key.as_bytes();
        let len = u16::try_from(key.len())
            .map_err(|_| DatasetError::Format(format!("patient key too long: {}", e.patient_key)))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(key)?;
        w.write_all(&e.epoch_index.to_le_bytes())?;
        w.write_all(&[e.label.index() as u8])?;
        buf.clear();
        for v in e.samples() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DatasetError::Corrupt(format!("unexpected end of file reading {what}")),
        _ => DatasetError::Io(e),
    })
}

pub fn read_container(mut r: impl Read) -> Result<Vec<SleepEpoch>, DatasetError> {
    let mut head = [0u8; 14];
    read_exact(&mut r, &mut head, "header")?;
    if &head[..4] != MAGIC {
        return Err(DatasetError::Corrupt("bad magic".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(DatasetError::Corrupt(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(head[6..14].try_into().expect("8 bytes"));
    let mut out = Vec::new();
    let mut raw = vec![0u8; EPOCH_SAMPLES * NUM_CHANNELS * 4];
    for n in 0..count {
        let mut len = [0u8; 2];
        read_exact(&mut r, &mut len, "key length")?;
        let mut key = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact(&mut r, &mut key, "patient key")?;
        let key = String::from_utf8(key).map_err(|_| DatasetError::Corrupt(format!("epoch {n}: key is not UTF-8")))?;
        let mut fixed = [0u8; 5];
        read_exact(&mut r, &mut fixed, "epoch index")?;
        let index = u32::from_le_bytes(fixed[..4].try_into().expect("4 bytes"));
        let label = Stage::from_index(fixed[4] as usize)
            .ok_or_else(|| DatasetError::Corrupt(format!("epoch {n}: label {}", fixed[4])))?;
        read_exact(&mut r, &mut raw, "samples")?;
        let samples = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        out.push(
            SleepEpoch::new(samples, label, key, index)
                .map_err(|e| DatasetError::Corrupt(format!("epoch {n}: {e}")))?,
        );
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(DatasetError::Corrupt("trailing bytes after last epoch".into()));
    }
    Ok(out)
}
