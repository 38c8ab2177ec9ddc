//! Binary embedding files and encoder checkpoints.
//!
//! Embedding file (little-endian):
//! `b"PVEMBED\0"`, u32 version, u32 dim, u64 count, then per record
//! u32 id length, id bytes (UTF-8), u8 slot, dim x f32.
//!
//! Encoder checkpoint: `b"PVENCDR\0"`, u32 version, 32-byte parameter digest,
//! u32 config length, config JSON, u64 parameter count, parameters as f32.

use std::collections::HashMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::encoder::{ConvEncoder, EncoderConfig};
use super::{FingerprintError, Fingerprinter, Patch, PatchKey};
use crate::digest::Digest256;

const EMBED_MAGIC: &[u8; 8] = b"PVEMBED\0";
const EMBED_VERSION: u32 = 1;
const ENCODER_MAGIC: &[u8; 8] = b"PVENCDR\0";
const ENCODER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub key: PatchKey,
    pub vector: Vec<f32>,
}

pub(crate) fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], FingerprintError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32, FingerprintError> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64, FingerprintError> {
    Ok(u64::from_le_bytes(read_exact(r)?))
}

pub(crate) fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>, FingerprintError> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_f32s(w: &mut impl Write, values: &[f32]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_embeddings(path: &Path, dim: usize, records: &[EmbeddingRecord]) -> Result<(), FingerprintError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(EMBED_MAGIC)?;
    w.write_all(&EMBED_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        if r.vector.len() != dim {
            return Err(FingerprintError::ShapeMismatch(format!(
                "record {}#{} has {} values, expected {dim}",
                r.key.image_id,
                r.key.slot,
                r.vector.len()
            )));
        }
        w.write_all(&(r.key.image_id.len() as u32).to_le_bytes())?;
        w.write_all(r.key.image_id.as_bytes())?;
        w.write_all(&[r.key.slot])?;
        write_f32s(&mut w, &r.vector)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<(usize, Vec<EmbeddingRecord>), FingerprintError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    if &read_exact::<8>(&mut r)? != EMBED_MAGIC {
        return Err(FingerprintError::Format("not an embedding file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != EMBED_VERSION {
        return Err(FingerprintError::UnsupportedVersion {
            what: "embedding file",
            version,
        });
    }
    let dim = read_u32(&mut r)? as usize;
    let count = read_u64(&mut r)?;
    let mut records = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let image_id = String::from_utf8(id).map_err(|_| FingerprintError::Format("image id is not UTF-8".into()))?;
        let slot = read_exact::<1>(&mut r)?[0];
        records.push(EmbeddingRecord {
            key: PatchKey { image_id, slot },
            vector: read_f32s(&mut r, dim)?,
        });
    }
    Ok((dim, records))
}

/// Embeddings computed elsewhere, looked up by image id and slot.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddings {
    pub dim: usize,
    vectors: HashMap<PatchKey, Vec<f32>>,
}

impl PrecomputedEmbeddings {
    pub fn load(path: &Path) -> Result<Self, FingerprintError> {
        let (dim, records) = read_embeddings(path)?;
        Ok(Self::from_records(dim, records))
    }

    pub fn from_records(dim: usize, records: Vec<EmbeddingRecord>) -> Self {
        PrecomputedEmbeddings {
            dim,
            vectors: records.into_iter().map(|r| (r.key, r.vector)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl Fingerprinter for PrecomputedEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_patches(&self, image_id: &str, patches: &[Patch]) -> Result<Vec<Vec<f32>>, FingerprintError> {
        patches
            .iter()
            .map(|p| {
                let key = PatchKey {
                    image_id: image_id.to_string(),
                    slot: p.slot,
                };
                self.vectors
                    .get(&key)
                    .cloned()
                    .ok_or(FingerprintError::MissingEmbedding(key))
            })
            .collect()
    }
}

pub fn save_encoder(path: &Path, encoder: &ConvEncoder) -> Result<(), FingerprintError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(ENCODER_MAGIC)?;
    w.write_all(&ENCODER_VERSION.to_le_bytes())?;
    w.write_all(encoder.digest().as_bytes())?;
    let config = serde_json::to_vec(&encoder.config).map_err(|e| FingerprintError::Format(e.to_string()))?;
    w.write_all(&(config.len() as u32).to_le_bytes())?;
    w.write_all(&config)?;
    w.write_all(&(encoder.params.len() as u64).to_le_bytes())?;
    write_f32s(&mut w, &encoder.params)?;
    w.flush()?;
    Ok(())
}

pub fn load_encoder(path: &Path) -> Result<ConvEncoder, FingerprintError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    if &read_exact::<8>(&mut r)? != ENCODER_MAGIC {
        return Err(FingerprintError::Format("not an encoder checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != ENCODER_VERSION {
        return Err(FingerprintError::UnsupportedVersion {
            what: "encoder checkpoint",
            version,
        });
    }
    let digest = Digest256(read_exact::<32>(&mut r)?);
    let len = read_u32(&mut r)? as usize;
    let mut config = vec![0u8; len];
    r.read_exact(&mut config)?;
    let config: EncoderConfig = serde_json::from_slice(&config).map_err(|e| FingerprintError::Format(e.to_string()))?;
    let count = read_u64(&mut r)? as usize;
    let params = read_f32s(&mut r, count)?;
    let encoder = ConvEncoder::from_params(config, params)?;
    if encoder.digest() != digest {
        return Err(FingerprintError::Checkpoint("parameter digest mismatch".into()));
    }
    Ok(encoder)
}
