//! Binary parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "EAFCKPT1"                      8 bytes
//! u32 tensor count
//! per tensor: u32 name length, UTF-8 name, u32 rows, u32 cols, u64 byte offset
//! f32 payload, row-major, tensors back to back at their offsets
//! ```
//!
//! Offsets are relative to the start of the payload.

use std::fs;
use std::path::Path;

use crate::autograd::Mat;
use crate::error::{io_err, EafError, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EAFCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_mat(name: &str, m: &Mat) -> Self {
        Self {
            name: name.to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_mat(&self) -> Mat {
        Mat::from_shape_vec(
            (self.rows, self.cols),
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("tensor shape")
    }
}

pub fn encode(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 4 * t.data.len() as u64;
    }
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> std::result::Result<Vec<Tensor>, String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err("bad magic".into());
    }
    let n = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let offset = r.u64()? as usize;
        manifest.push((name, rows, cols, offset));
    }
    let payload = &buf[r.pos..];
    manifest
        .into_iter()
        .map(|(name, rows, cols, offset)| {
            let bytes = payload
                .get(offset..offset + 4 * rows * cols)
                .ok_or_else(|| format!("tensor {name} runs past end of file"))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Tensor {
                name,
                rows,
                cols,
                data,
            })
        })
        .collect()
}

pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    let tensors: Vec<Tensor> = store
        .iter()
        .map(|(_, p)| Tensor::from_mat(&p.name, &p.value))
        .collect();
    fs::write(path, encode(&tensors)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<Vec<Tensor>> {
    let buf = fs::read(path).map_err(io_err(path))?;
    decode(&buf).map_err(|reason| EafError::Format {
        path: path.to_path_buf(),
        reason,
    })
}

/// Copies checkpoint tensors into `store`; every name must exist with the same shape.
pub fn restore(store: &mut ParamStore, tensors: &[Tensor]) -> Result<()> {
    for t in tensors {
        let id = store.id(&t.name).ok_or_else(|| {
            EafError::Dimension(format!("checkpoint tensor {} not in model", t.name))
        })?;
        let cur = store.get(id);
        if cur.dim() != (t.rows, t.cols) {
            return Err(EafError::Dimension(format!(
                "checkpoint tensor {} is {}x{}, model expects {:?}",
                t.name,
                t.rows,
                t.cols,
                cur.dim()
            )));
        }
        *store.get_mut(id) = t.to_mat();
    }
    if tensors.len() != store.len() {
        return Err(EafError::Dimension(format!(
            "checkpoint has {} tensors, model has {}",
            tensors.len(),
            store.len()
        )));
    }
    Ok(())
}
