//! Named-array archives with a JSON manifest and content hashes.
//!
//! An artifact `name` is two files: `name.bin` (the arrays) and
//! `name.json` (the manifest). The artifact hash is the SHA-256 of the
//! `.bin` bytes followed by the manifest bytes.
//!
//! `.bin` layout: magic `MVGARR01`, little-endian `u32` entry count, then per
//! entry `u32` name length, UTF-8 name, `u32` rank, `u64` dims, and `f64`
//! values in row-major order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{cast_array, Params};
use crate::scalar::Real;

const MAGIC: &[u8; 8] = b"MVGARR01";

/// Ordered list of named f64 arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedArrays {
    pub entries: Vec<(String, ArrayD<f64>)>,
}

impl NamedArrays {
    pub fn push(&mut self, name: impl Into<String>, a: ArrayD<f64>) {
        self.entries.push((name.into(), a));
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn require(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.get(name).ok_or_else(|| Error::Format(format!("archive has no array '{name}'")))
    }

    /// Appends every parameter of `model` under `prefix`.
    pub fn extend_params<T: Real, M: Params<T>>(&mut self, prefix: &str, model: &M) {
        model.visit(prefix, &mut |name, a| self.entries.push((name, cast_array(a))));
    }

    /// Overwrites the parameters of `model` from entries under `prefix`;
    /// names and shapes must match exactly.
    pub fn load_params<T: Real, M: Params<T>>(&self, prefix: &str, model: &mut M) -> Result<()> {
        let mut err = None;
        model.visit_mut(prefix, &mut |name, a| {
            if err.is_some() {
                return;
            }
            match self.get(&name) {
                None => err = Some(Error::Format(format!("archive has no array '{name}'"))),
                Some(src) if src.shape() != a.shape() => {
                    err = Some(Error::Format(format!(
                        "array '{name}' has shape {:?}, model expects {:?}",
                        src.shape(),
                        a.shape()
                    )))
                }
                Some(src) => a.zip_mut_with(src, |d, &s| *d = T::c(s)),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, a) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
            for &d in a.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a named-array archive".into()));
        }
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let a = ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| Error::Format(e.to_string()))?;
            entries.push((name, a));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after archive".into()));
        }
        Ok(Self { entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated archive".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn sha256_hex(chunks: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for c in chunks {
        h.update(c);
    }
    hex::encode(h.finalize())
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.bin")), dir.join(format!("{name}.json")))
}

/// Writes an artifact and returns its hash.
pub fn write_artifact<M: Serialize>(dir: &Path, name: &str, manifest: &M, arrays: &NamedArrays) -> Result<String> {
    fs::create_dir_all(dir)?;
    let (bin, json) = paths(dir, name);
    let data = arrays.encode();
    let meta = serde_json::to_vec_pretty(manifest)?;
    write_atomic(&bin, &data)?;
    write_atomic(&json, &meta)?;
    Ok(sha256_hex(&[&data, &meta]))
}

/// A loaded artifact together with its recomputed hash.
#[derive(Clone, Debug)]
pub struct Artifact<M> {
    pub manifest: M,
    pub arrays: NamedArrays,
    pub hash: String,
}

pub fn read_artifact<M: DeserializeOwned>(dir: &Path, name: &str) -> Result<Artifact<M>> {
    let (bin, json) = paths(dir, name);
    let data = fs::read(&bin)?;
    let meta = fs::read(&json)?;
    Ok(Artifact {
        manifest: serde_json::from_slice(&meta)?,
        arrays: NamedArrays::decode(&data)?,
        hash: sha256_hex(&[&data, &meta]),
    })
}

pub fn artifact_exists(dir: &Path, name: &str) -> bool {
    let (bin, json) = paths(dir, name);
    bin.exists() && json.exists()
}

/// Fails with both hashes when `found` differs from `expected`.
pub fn verify_hash(what: &str, expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::HashMismatch { what: what.to_string(), expected: expected.to_string(), found: found.to_string() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn encode_decode_round_trip() {
        let mut a = NamedArrays::default();
        a.push("w", arr2(&[[1.0, -2.5], [3.25, f64::MIN_POSITIVE]]).into_dyn());
        a.push("scalar", ArrayD::from_elem(IxDyn(&[]), 7.0));
        a.push("empty", ArrayD::zeros(IxDyn(&[0, 3])));
        let b = NamedArrays::decode(&a.encode()).unwrap();
        assert_eq!(a, b);
        let mut bytes = a.encode();
        bytes.pop();
        assert!(NamedArrays::decode(&bytes).is_err());
        assert!(NamedArrays::decode(b"garbage!").is_err());
    }

    #[test]
    fn artifact_hash_is_stable_and_detects_edits() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = NamedArrays::default();
        a.push("x", arr2(&[[1.0, 2.0]]).into_dyn());
        let h1 = write_artifact(dir.path(), "t", &serde_json::json!({"v": 1}), &a).unwrap();
        let back: Artifact<serde_json::Value> = read_artifact(dir.path(), "t").unwrap();
        assert_eq!(back.hash, h1);
        assert_eq!(back.arrays, a);
        let h2 = write_artifact(dir.path(), "t", &serde_json::json!({"v": 2}), &a).unwrap();
        assert_ne!(h1, h2);
        assert!(verify_hash("t", &h1, &h2).is_err());
        assert!(!dir.path().join("t.bin.tmp").exists());
    }
}
