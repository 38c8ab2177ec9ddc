//! Verifier checkpoint, little-endian: `b"PVVERIF\0"`, u32 version, 32-byte
//! parameter digest, u32 header length, header JSON (config and map shape),
//! u64 parameter count, parameters as f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MapShape, VerifierConfig, VerifierError, VerifierModel};
use crate::Digest256;

const MAGIC: &[u8; 8] = b"PVVERIF\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Header {
    config: VerifierConfig,
    shape: MapShape,
}

pub fn save_verifier(path: &Path, model: &VerifierModel) -> Result<(), VerifierError> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        shape: model.shape,
    })
    .map_err(|e| VerifierError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + header.len() + model.params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(model.digest().as_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8], VerifierError> {
    if buf.len() < n {
        return Err(VerifierError::Checkpoint("truncated".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

pub fn load_verifier(path: &Path) -> Result<VerifierModel, VerifierError> {
    let bytes = fs::read(path)?;
    let mut buf = bytes.as_slice();
    if take(&mut buf, 8)? != MAGIC {
        return Err(VerifierError::Checkpoint("not a verifier checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(&mut buf, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(VerifierError::UnsupportedVersion {
            what: "verifier checkpoint",
            version,
        });
    }
    let digest = Digest256(take(&mut buf, 32)?.try_into().unwrap());
    let len = u32::from_le_bytes(take(&mut buf, 4)?.try_into().unwrap()) as usize;
    let header: Header =
        serde_json::from_slice(take(&mut buf, len)?).map_err(|e| VerifierError::Checkpoint(e.to_string()))?;
    let count = u64::from_le_bytes(take(&mut buf, 8)?.try_into().unwrap()) as usize;
    if buf.len() != count.saturating_mul(8) {
        return Err(VerifierError::Checkpoint("parameter block length mismatch".into()));
    }
    let params: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = VerifierModel::from_params(header.config, header.shape, params)?;
    if model.digest() != digest {
        return Err(VerifierError::Checkpoint("parameter digest mismatch".into()));
    }
    Ok(model)
}
