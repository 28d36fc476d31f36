//! Named parameter storage and the on-disk checkpoint format: a JSON
//! manifest of `{name, shape, dtype}` entries plus a sibling blob holding
//! every tensor as little-endian f32, concatenated in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::tape::{NodeId, Tape};
use crate::tensor::{numel, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers such as running statistics are stored but never optimised.
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param { name, value, trainable });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.params.len())
            .filter(|&i| self.params[i].trainable)
            .map(ParamId)
            .collect()
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Mutable references to the trainable tensors, in `trainable_ids` order.
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .filter(|p| p.trainable)
            .map(|p| &mut p.value)
            .collect()
    }

    /// Pushes every parameter onto `tape` as a leaf; the result is indexed
    /// by `ParamId`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<NodeId> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.params
            .iter()
            .map(|p| ManifestEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                dtype: "f32".to_string(),
            })
            .collect()
    }

    /// Writes `{stem}.json` and `{stem}.bin` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(dir.join(format!("{stem}.json")), json)?;
        let mut blob = Vec::new();
        for p in &self.params {
            for v in p.value.data() {
                blob.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
        }
        fs::write(dir.join(format!("{stem}.bin")), blob)?;
        Ok(())
    }

    /// Overwrites every parameter from a checkpoint written by [`save`].
    /// Names and shapes must match this store exactly.
    ///
    /// [`save`]: ParamStore::save
    pub fn load(&mut self, dir: &Path, stem: &str) -> Result<()> {
        let manifest: Vec<ManifestEntry> =
            serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
        let blob = fs::read(dir.join(format!("{stem}.bin")))?;
        if manifest.len() != self.params.len() {
            return Err(TensorError::Checkpoint(format!(
                "{} entries in manifest, model has {}",
                manifest.len(),
                self.params.len()
            )));
        }
        let total: usize = manifest.iter().map(|e| numel(&e.shape)).sum();
        if blob.len() != total * 4 {
            return Err(TensorError::Checkpoint(format!(
                "blob holds {} bytes, manifest needs {}",
                blob.len(),
                total * 4
            )));
        }
        let mut offset = 0;
        let mut loaded = Vec::with_capacity(manifest.len());
        for (entry, p) in manifest.iter().zip(&self.params) {
            if entry.name != p.name || entry.shape != p.value.shape() || entry.dtype != "f32" {
                return Err(TensorError::Checkpoint(format!(
                    "entry {} {:?} {} does not match parameter {} {:?}",
                    entry.name,
                    entry.shape,
                    entry.dtype,
                    p.name,
                    p.value.shape()
                )));
            }
            let n = numel(&entry.shape);
            let data = blob[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|b| T::from_f32(f32::from_le_bytes([b[0], b[1], b[2], b[3]])).unwrap())
                .collect();
            offset += 4 * n;
            loaded.push(Tensor::new(entry.shape.clone(), data)?);
        }
        for (p, v) in self.params.iter_mut().zip(loaded) {
            p.value = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("conv.w", Tensor::from_fn(vec![2, 1, 3, 3], |i| i as f32 * 0.5 - 2.0), true);
        s.add("conv.b", Tensor::zeros(vec![2]), true);
        s.add("bn.running_var", Tensor::ones(vec![2]), false);
        s
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = store();
        s.save(dir.path(), "G").unwrap();
        let mut t = store();
        t.value_mut(ParamId(0)).data_mut().fill(9.0);
        t.load(dir.path(), "G").unwrap();
        assert_eq!(s, t);
        let manifest: Vec<ManifestEntry> =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("G.json")).unwrap()).unwrap();
        assert_eq!(manifest[0].shape, vec![2, 1, 3, 3]);
        assert_eq!(manifest[2].dtype, "f32");
        assert_eq!(std::fs::read(dir.path().join("G.bin")).unwrap().len(), (18 + 2 + 2) * 4);
    }

    #[test]
    fn mismatched_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        store().save(dir.path(), "G").unwrap();
        let mut other = ParamStore::<f32>::new();
        other.add("conv.w", Tensor::zeros(vec![2, 1, 3, 3]), true);
        assert!(matches!(other.load(dir.path(), "G"), Err(TensorError::Checkpoint(_))));
    }

    #[test]
    fn trainable_bookkeeping() {
        let s = store();
        assert_eq!(s.trainable_ids(), vec![ParamId(0), ParamId(1)]);
        assert_eq!(s.num_trainable(), 20);
    }
}
