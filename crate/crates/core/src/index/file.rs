//! Index file and vector sidecar.
//!
//! Index file, little-endian, fixed-width sections so it can be mapped:
//!
//! | field | type |
//! |---|---|
//! | magic | `b"PVIVFPQ\0"` |
//! | version | u32 |
//! | dim, nlist, m, ksub | u32 each |
//! | count | u64 |
//! | params | u32 length + JSON |
//! | coarse centroids | nlist x dim f32 |
//! | codebooks | m x ksub x (dim/m) f32 |
//! | posting lists | per list: u64 length, then length x (u32 record, m code bytes) |
//! | record table | per record: u32 id length, UTF-8 id, u8 slot |
//!
//! Vector sidecar: `b"PVVECTS\0"`, u32 version, u32 dim, u64 count, count x dim f32
//! in record order.

use std::fs;
use std::path::Path;

use super::{IndexError, IndexParams, IvfPqIndex, Posting, ProductQuantizer};
use crate::fingerprint::PatchKey;

const INDEX_MAGIC: &[u8; 8] = b"PVIVFPQ\0";
const INDEX_VERSION: u32 = 1;
const VECTORS_MAGIC: &[u8; 8] = b"PVVECTS\0";
const VECTORS_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn encode_index(idx: &IvfPqIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    put_u32(&mut out, INDEX_VERSION as usize);
    put_u32(&mut out, idx.dim);
    put_u32(&mut out, idx.nlist());
    put_u32(&mut out, idx.pq.m);
    put_u32(&mut out, idx.pq.ksub);
    out.extend_from_slice(&(idx.records.len() as u64).to_le_bytes());
    let params = serde_json::to_vec(&idx.params).expect("params serialize");
    put_u32(&mut out, params.len());
    out.extend_from_slice(&params);
    put_f32s(&mut out, &idx.coarse_centroids);
    put_f32s(&mut out, &idx.pq.codebooks);
    for list in &idx.postings {
        out.extend_from_slice(&(list.len() as u64).to_le_bytes());
        for p in list {
            out.extend_from_slice(&p.record.to_le_bytes());
            out.extend_from_slice(&p.code);
        }
    }
    for key in &idx.records {
        put_u32(&mut out, key.image_id.len());
        out.extend_from_slice(key.image_id.as_bytes());
        out.push(key.slot);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        if self.buf.len() < n {
            return Err(IndexError::Format("truncated".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize, IndexError> {
        usize::try_from(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            .map_err(|_| IndexError::Format("length overflow".into()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, IndexError> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| IndexError::Format("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn header(cur: &mut Cursor, magic: &[u8; 8], what: &'static str, supported: u32) -> Result<(), IndexError> {
    if cur.take(8)? != magic {
        return Err(IndexError::Format(format!("not a {what}")));
    }
    let version = cur.u32()? as u32;
    if version != supported {
        return Err(IndexError::UnsupportedVersion { what, version });
    }
    Ok(())
}

fn decode_index(bytes: &[u8], vectors: Vec<f32>, vectors_dim: usize) -> Result<IvfPqIndex, IndexError> {
    let mut cur = Cursor { buf: bytes };
    header(&mut cur, INDEX_MAGIC, "index file", INDEX_VERSION)?;
    let (dim, nlist, m, ksub) = (cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?);
    let count = cur.u64()?;
    if dim == 0 || m == 0 || dim % m != 0 || ksub == 0 || ksub > 256 {
        return Err(IndexError::Format("inconsistent header".into()));
    }
    let plen = cur.u32()?;
    let params: IndexParams =
        serde_json::from_slice(cur.take(plen)?).map_err(|e| IndexError::Format(format!("params: {e}")))?;
    let coarse_centroids = cur.f32s(nlist * dim)?;
    let codebooks = cur.f32s(m * ksub * (dim / m))?;
    let mut postings = Vec::with_capacity(nlist);
    for _ in 0..nlist {
        let len = cur.u64()?;
        let mut list = Vec::with_capacity(len.min(cur.buf.len()));
        for _ in 0..len {
            let record = cur.u32()? as u32;
            let code = cur.take(m)?.to_vec();
            if record as usize >= count || code.iter().any(|&c| c as usize >= ksub) {
                return Err(IndexError::Format("posting out of range".into()));
            }
            list.push(Posting { record, code });
        }
        postings.push(list);
    }
    let mut records = Vec::with_capacity(count.min(cur.buf.len()));
    for _ in 0..count {
        let len = cur.u32()?;
        let id = std::str::from_utf8(cur.take(len)?).map_err(|_| IndexError::Format("record id not UTF-8".into()))?;
        let slot = cur.take(1)?[0];
        records.push(PatchKey::new(id, slot));
    }
    if !cur.buf.is_empty() {
        return Err(IndexError::Format("trailing bytes".into()));
    }
    if postings.iter().map(Vec::len).sum::<usize>() != count {
        return Err(IndexError::Format("posting lists do not cover every record".into()));
    }
    if vectors_dim != dim || vectors.len() != count * dim {
        return Err(IndexError::Format("vector sidecar does not match index".into()));
    }
    Ok(IvfPqIndex {
        dim,
        params,
        coarse_centroids,
        pq: ProductQuantizer {
            dim,
            m,
            ksub,
            codebooks,
        },
        postings,
        records,
        vectors,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IndexError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_vectors(path: &Path, dim: usize, vectors: &[f32]) -> Result<(), IndexError> {
    let mut out = Vec::with_capacity(24 + vectors.len() * 4);
    out.extend_from_slice(VECTORS_MAGIC);
    put_u32(&mut out, VECTORS_VERSION as usize);
    put_u32(&mut out, dim);
    out.extend_from_slice(&((vectors.len() / dim.max(1)) as u64).to_le_bytes());
    put_f32s(&mut out, vectors);
    write_atomic(path, &out)
}

/// Returns `(dim, row-major vectors)`.
pub fn load_vectors(path: &Path) -> Result<(usize, Vec<f32>), IndexError> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor { buf: &bytes };
    header(&mut cur, VECTORS_MAGIC, "vector sidecar", VECTORS_VERSION)?;
    let dim = cur.u32()?;
    let count = cur.u64()?;
    let vectors = cur.f32s(
        count
            .checked_mul(dim)
            .ok_or_else(|| IndexError::Format("length overflow".into()))?,
    )?;
    if !cur.buf.is_empty() {
        return Err(IndexError::Format("trailing bytes".into()));
    }
    Ok((dim, vectors))
}

/// Writes the index file and its full-vector sidecar.
pub fn save_index(idx: &IvfPqIndex, index_path: &Path, vectors_path: &Path) -> Result<(), IndexError> {
    save_vectors(vectors_path, idx.dim, &idx.vectors)?;
    write_atomic(index_path, &encode_index(idx))
}

pub fn load_index(index_path: &Path, vectors_path: &Path) -> Result<IvfPqIndex, IndexError> {
    let (dim, vectors) = load_vectors(vectors_path)?;
    decode_index(&fs::read(index_path)?, vectors, dim)
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_records;
    use super::super::{build_index, IndexParams};
    use super::*;

    #[test]
    fn round_trip_and_version_refusal() {
        let recs = random_records(120, 16, 8);
        let params = IndexParams {
            nlist: 4,
            m: 4,
            nprobe: 2,
            seed: 1,
            ..IndexParams::default()
        };
        let idx = build_index(&recs, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (ip, vp) = (dir.path().join("a.ivf"), dir.path().join("a.vec"));
        save_index(&idx, &ip, &vp).unwrap();
        let back = load_index(&ip, &vp).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.digest(), idx.digest());

        let mut bytes = fs::read(&ip).unwrap();
        bytes[8] = 9;
        fs::write(&ip, &bytes).unwrap();
        assert!(matches!(
            load_index(&ip, &vp),
            Err(IndexError::UnsupportedVersion { version: 9, .. })
        ));
        bytes[8] = 1;
        bytes.truncate(bytes.len() - 3);
        fs::write(&ip, &bytes).unwrap();
        assert!(matches!(load_index(&ip, &vp), Err(IndexError::Format(_))));
    }
}
