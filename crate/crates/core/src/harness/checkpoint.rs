//! `LETCKPT1` checkpoint files.
//!
//! Layout: the 8-byte magic, a little-endian `u64` manifest length, the JSON
//! manifest, then every parameter's values as little-endian `f64` in
//! manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::autodiff::ParamStore;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LETCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub path: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    /// Character vocabulary in its TSV form.
    pub vocab: String,
    /// Sememe ids in embedding-table row order.
    pub sememes: Vec<String>,
}

pub fn encode(manifest: &Manifest, store: &ParamStore) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * store.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for entry in &manifest.params {
        let t = store
            .by_name(&entry.path)
            .ok_or_else(|| Error::Checkpoint(format!("parameter `{}` not in store", entry.path)))?;
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Manifest plus one value buffer per manifest entry.
pub fn decode(bytes: &[u8]) -> Result<(Manifest, Vec<Vec<f64>>)> {
    let fail = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(fail("missing LETCKPT1 magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + len).ok_or_else(|| fail("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut rest = &bytes[16 + len..];
    let mut buffers = Vec::with_capacity(manifest.params.len());
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        if rest.len() < 8 * n {
            return Err(fail(&format!("truncated data for `{}`", entry.path)));
        }
        let (head, tail) = rest.split_at(8 * n);
        buffers.push(
            head.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        );
        rest = tail;
    }
    if !rest.is_empty() {
        return Err(fail("trailing bytes after parameter data"));
    }
    Ok((manifest, buffers))
}

pub fn manifest_params(store: &ParamStore) -> Vec<ParamEntry> {
    store
        .iter()
        .map(|(_, path, t)| ParamEntry {
            path: path.to_string(),
            shape: t.shape().to_vec(),
            trainable: t.requires_grad(),
        })
        .collect()
}

/// Copies checkpoint values into a store with the same layout.
pub fn restore(store: &mut ParamStore, manifest: &Manifest, buffers: Vec<Vec<f64>>) -> Result<()> {
    if manifest.params.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            manifest.params.len(),
            store.len()
        )));
    }
    for (entry, values) in manifest.params.iter().zip(buffers) {
        let id = store
            .id(&entry.path)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", entry.path)))?;
        let t = store.get_mut(id);
        if t.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "`{}`: shape {:?} in checkpoint, {:?} in model",
                entry.path,
                entry.shape,
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&values);
    }
    Ok(())
}

pub fn write(path: &Path, manifest: &Manifest, store: &ParamStore) -> Result<()> {
    let bytes = encode(manifest, store)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(Manifest, Vec<Vec<f64>>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn sample() -> (Manifest, ParamStore) {
        let mut store = ParamStore::new();
        store
            .insert(
                "a.w",
                Tensor::matrix(2, 3, vec![1.0, -2.5, 3.25, 0.0, 1e-300, -7.0]).unwrap(),
            )
            .unwrap();
        store
            .insert("b", Tensor::row(vec![f64::MAX, 0.5]).unwrap().with_requires_grad(true))
            .unwrap();
        let manifest = Manifest {
            config: RunConfig::default(),
            seed: 9,
            params: manifest_params(&store),
            vocab: "[PAD]\t0\n".into(),
            sememes: vec!["fruit".into()],
        };
        (manifest, store)
    }

    #[test]
    fn round_trip_is_exact() {
        let (manifest, store) = sample();
        let bytes = encode(&manifest, &store).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let (back, buffers) = decode(&bytes).unwrap();
        assert_eq!(back, manifest);
        let mut fresh = ParamStore::new();
        fresh.insert("a.w", Tensor::zeros(vec![2, 3]).unwrap()).unwrap();
        fresh.insert("b", Tensor::zeros(vec![1, 2]).unwrap()).unwrap();
        restore(&mut fresh, &back, buffers).unwrap();
        for (id, _, t) in store.iter() {
            assert_eq!(fresh.get(id).data(), t.data());
        }
    }

    #[test]
    fn corruption_is_detected() {
        let (manifest, store) = sample();
        let bytes = encode(&manifest, &store).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (manifest, store) = sample();
        let (m, buffers) = decode(&encode(&manifest, &store).unwrap()).unwrap();
        let mut other = ParamStore::new();
        other.insert("a.w", Tensor::zeros(vec![3, 2]).unwrap()).unwrap();
        other.insert("b", Tensor::zeros(vec![1, 2]).unwrap()).unwrap();
        assert!(restore(&mut other, &m, buffers).is_err());
    }
}
