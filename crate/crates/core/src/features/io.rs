//! Feature record files.
//!
//! ```text
//! "EAFFEAT1" + 8 NUL bytes              16-byte magic
//! u32 L, u32 d_feat, u32 modality code   little-endian
//! L·d_feat f32, row-major
//! L u32 frame indices
//! ```
//!
//! Only valid rows are stored; missing frames show up as gaps in the frame
//! indices. Provenance lives in a JSON sidecar next to the record.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureSequence, Modality};
use crate::autograd::Mat;
use crate::error::{io_err, json_err, EafError, Result};

pub const FEATURE_MAGIC: &[u8; 16] = b"EAFFEAT1\0\0\0\0\0\0\0\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub seed: u64,
    pub spec_hash: String,
    pub modality: Modality,
    pub rows: usize,
    pub d_feat: usize,
}

pub fn encode(seq: &FeatureSequence) -> Vec<u8> {
    let rows: Vec<usize> = (0..seq.len()).filter(|&i| seq.valid[i]).collect();
    let mut out = Vec::with_capacity(28 + rows.len() * (seq.dim() + 1) * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    out.extend_from_slice(&seq.modality.code().to_le_bytes());
    for &r in &rows {
        for v in seq.data.row(r) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    for &r in &rows {
        out.extend_from_slice(&(seq.frame_index[r] as u32).to_le_bytes());
    }
    out
}

pub fn decode(buf: &[u8]) -> std::result::Result<FeatureSequence, String> {
    if buf.len() < 28 || &buf[..16] != FEATURE_MAGIC {
        return Err("bad magic".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let (l, d, code) = (u32_at(16) as usize, u32_at(20) as usize, u32_at(24));
    let modality =
        Modality::from_code(code).ok_or_else(|| format!("unknown modality code {code}"))?;
    let need = 28 + 4 * l * d + 4 * l;
    if buf.len() != need {
        return Err(format!(
            "expected {need} bytes for {l}x{d}, found {}",
            buf.len()
        ));
    }
    let data: Vec<f64> = buf[28..28 + 4 * l * d]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let frame_index = buf[28 + 4 * l * d..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let data = Mat::from_shape_vec((l, d), data).map_err(|e| e.to_string())?;
    FeatureSequence::new(modality, data, frame_index, vec![true; l]).map_err(|e| e.to_string())
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn write_feature_file(
    path: &Path,
    seq: &FeatureSequence,
    sidecar: &FeatureSidecar,
) -> Result<()> {
    fs::write(path, encode(seq)).map_err(io_err(path))?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(sidecar).map_err(json_err(&side))?;
    fs::write(&side, json).map_err(io_err(&side))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let buf = fs::read(path).map_err(io_err(path))?;
    decode(&buf).map_err(|reason| EafError::Format {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn read_sidecar(path: &Path) -> Result<FeatureSidecar> {
    let side = sidecar_path(path);
    let buf = fs::read(&side).map_err(io_err(&side))?;
    serde_json::from_slice(&buf).map_err(json_err(&side))
}

/// Spreads stored rows onto the full frame grid `0..frames`; frames with no
/// stored row are marked invalid.
pub fn densify(seq: &FeatureSequence, frames: usize) -> Result<(Mat, Vec<bool>)> {
    let mut data = Mat::zeros((frames, seq.dim()));
    let mut valid = vec![false; frames];
    for (r, &fi) in seq.frame_index.iter().enumerate() {
        if fi >= frames {
            return Err(EafError::Dimension(format!(
                "frame index {fi} beyond {frames} frames"
            )));
        }
        data.row_mut(fi).assign(&seq.data.row(r));
        valid[fi] = seq.valid[r];
    }
    Ok((data, valid))
}
