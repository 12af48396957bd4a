//! `SSCK` checkpoint files.
//!
//! ```text
//! "SSCK"  version:u16  meta_len:u32  meta:utf8 JSON  count:u32
//! count × { name_len:u16  name:utf8  ndim:u8  dims:u32[ndim]  data:f32[∏dims] }
//! ```
//!
//! Little-endian throughout. The JSON block holds the model configuration
//! under `"model"` plus any caller state. Model tensors come first in layout
//! order; further tensors (optimizer moments) follow.

use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;
use sleepformer_autodiff::Tensor;

use super::{ModelConfig, ModelError, ModelParams};

pub const MAGIC: &[u8; 4] = b"SSCK";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub extra: Vec<(String, Tensor<f32>)>,
    /// Caller state stored beside the configuration; `Null` when absent.
    pub state: Value,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>) -> Self {
        Self { params, extra: Vec::new(), state: Value::Null }
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn extra(&self, name: &str) -> Option<&Tensor<f32>> {
        self.extra.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint(msg.into())
}

fn put_tensor(w: &mut impl Write, name: &str, t: &Tensor<f32>) -> Result<(), ModelError> {
    let len = u16::try_from(name.len()).map_err(|_| corrupt(format!("tensor name too long: {name}")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    let ndim = u8::try_from(t.ndim()).map_err(|_| corrupt(format!("{name}: too many dims")))?;
    w.write_all(&[ndim])?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| corrupt(format!("{name}: dim {d} too large")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_checkpoint(mut w: impl Write, ck: &Checkpoint) -> Result<(), ModelError> {
    let meta = serde_json::json!({ "model": ck.params.config(), "state": ck.state });
    let meta = serde_json::to_vec(&meta).map_err(|e| corrupt(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(&meta)?;
    let count = ck.params.tensors().len() + ck.extra.len();
    w.write_all(&(count as u32).to_le_bytes())?;
    for (name, t) in ck.params.named() {
        put_tensor(&mut w, name, t)?;
    }
    for (name, t) in &ck.extra {
        put_tensor(&mut w, name, t)?;
    }
    Ok(())
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
    let s = buf.get(*pos..*pos + n).ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
    *pos += n;
    Ok(s)
}

fn u32_at(buf: &[u8], pos: &mut usize, what: &str) -> Result<u32, ModelError> {
    Ok(u32::from_le_bytes(take(buf, pos, 4, what)?.try_into().expect("4 bytes")))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint, ModelError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut pos = 0;
    if take(&buf, &mut pos, 4, "magic")? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes(take(&buf, &mut pos, 2, "version")?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let meta_len = u32_at(&buf, &mut pos, "metadata length")? as usize;
    let meta: Value = serde_json::from_slice(take(&buf, &mut pos, meta_len, "metadata")?)
        .map_err(|e| corrupt(format!("metadata: {e}")))?;
    let config: ModelConfig = serde_json::from_value(meta.get("model").cloned().unwrap_or(Value::Null))
        .map_err(|e| corrupt(format!("model config: {e}")))?;
    let count = u32_at(&buf, &mut pos, "tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let len = u16::from_le_bytes(take(&buf, &mut pos, 2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(take(&buf, &mut pos, len, "name")?)
            .map_err(|_| corrupt(format!("tensor {i}: name not UTF-8")))?;
        let ndim = take(&buf, &mut pos, 1, "ndim")?[0] as usize;
        let shape: Vec<usize> =
            (0..ndim).map(|_| u32_at(&buf, &mut pos, "dims").map(|d| d as usize)).collect::<Result<_, _>>()?;
        let numel: usize = shape.iter().product();
        let raw = take(&buf, &mut pos, numel * 4, name)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        tensors.push((name.to_string(), Tensor::new(&shape, data).map_err(|e| corrupt(e.to_string()))?));
    }
    if pos != buf.len() {
        return Err(corrupt(format!("{} trailing bytes", buf.len() - pos)));
    }
    let n_model = super::params::layout_len(&config);
    if tensors.len() < n_model {
        return Err(corrupt(format!("{} tensors, model needs {n_model}", tensors.len())));
    }
    let extra = tensors.split_off(n_model);
    let params = ModelParams::from_named(&config, tensors).map_err(|e| corrupt(e.to_string()))?;
    Ok(Checkpoint { params, extra, state: meta.get("state").cloned().unwrap_or(Value::Null) })
}

/// Writes to `path` through a sibling temporary file and a rename.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), ModelError> {
    let tmp = path.with_extension("ssck.tmp");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
    write_checkpoint(&mut f, ck)?;
    f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint; with `expected`, its configuration must match exactly.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint, ModelError> {
    let f = std::fs::File::open(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
    let ck = read_checkpoint(std::io::BufReader::new(f))?;
    if let Some(want) = expected {
        let diff = want.diff(ck.config());
        if !diff.is_empty() {
            return Err(corrupt(format!("model configuration differs (expected -> file): {}", diff.join(", "))));
        }
    }
    Ok(ck)
}
