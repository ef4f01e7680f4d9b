//! Checkpoint persistence: `manifest.json` plus one little-endian blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::optim::AdamState;
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT: &str = "graspldm-checkpoint/1";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Element count.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub global_step: u64,
    pub config_hash: String,
    pub stage: String,
    pub config: serde_json::Value,
    pub blob: String,
    pub blob_bytes: usize,
    pub tensors: Vec<TensorEntry>,
    pub adam: Option<AdamMeta>,
}

/// What a trainer records next to its parameters.
#[derive(Clone, Debug)]
pub struct CheckpointMeta {
    pub stage: String,
    pub config: serde_json::Value,
}

pub struct Checkpoint<T> {
    pub manifest: Manifest,
    pub params: ParamStore<T>,
    pub adam: Option<AdamState<T>>,
}

/// Hex SHA-256 of the compact JSON encoding.
pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("JSON values always serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    params: &ParamStore<T>,
    adam: Option<&AdamState<T>>,
    meta: &CheckpointMeta,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, t: &Tensor<T>| {
        tensors.push(TensorEntry { name, shape: t.shape().to_vec(), offset: blob.len(), len: t.numel() });
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    };
    for (name, t) in params.iter() {
        push(name.clone(), t);
    }
    if let Some(state) = adam {
        for (name, t) in &state.m {
            push(format!("{ADAM_M}{name}"), t);
        }
        for (name, t) in &state.v {
            push(format!("{ADAM_V}{name}"), t);
        }
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        dtype: T::DTYPE.to_string(),
        global_step: params.step(),
        config_hash: config_hash(&meta.config),
        stage: meta.stage.clone(),
        config: meta.config.clone(),
        blob: BLOB_FILE.to_string(),
        blob_bytes: blob.len(),
        tensors,
        adam: adam.map(|s| AdamMeta { t: s.t, lr: s.lr, beta1: s.beta1, beta2: s.beta2, eps: s.eps }),
    };
    write_atomic(&dir.join(BLOB_FILE), &blob)?;
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format `{}`", manifest.format)));
    }
    Ok(manifest)
}

/// Loads and validates a checkpoint. Parameters come back trainable.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<Checkpoint<T>> {
    let manifest = read_manifest(dir)?;
    if manifest.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!("checkpoint dtype {} but loading as {}", manifest.dtype, T::DTYPE)));
    }
    if config_hash(&manifest.config) != manifest.config_hash {
        return Err(Error::Checkpoint("config hash does not match the embedded config".into()));
    }
    let blob = fs::read(dir.join(&manifest.blob))?;
    if blob.len() != manifest.blob_bytes {
        return Err(Error::Checkpoint(format!("blob has {} bytes, manifest says {}", blob.len(), manifest.blob_bytes)));
    }
    let mut params = ParamStore::new();
    let mut m = std::collections::BTreeMap::new();
    let mut v = std::collections::BTreeMap::new();
    let mut expected_offset = 0;
    for entry in &manifest.tensors {
        if entry.shape.iter().product::<usize>() != entry.len {
            return Err(Error::Checkpoint(format!("`{}`: shape {:?} disagrees with len {}", entry.name, entry.shape, entry.len)));
        }
        if entry.offset != expected_offset {
            return Err(Error::Checkpoint(format!("`{}`: offset {} expected {expected_offset}", entry.name, entry.offset)));
        }
        let end = entry.offset + entry.len * T::BYTES;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!("`{}` runs past the end of the blob", entry.name)));
        }
        let data = blob[entry.offset..end].chunks_exact(T::BYTES).map(T::read_le).collect();
        let t = Tensor::new(entry.shape.clone(), data)?;
        expected_offset = end;
        if let Some(name) = entry.name.strip_prefix(ADAM_M) {
            m.insert(name.to_string(), t);
        } else if let Some(name) = entry.name.strip_prefix(ADAM_V) {
            v.insert(name.to_string(), t);
        } else {
            params.insert(entry.name.clone(), t.with_requires_grad(true))?;
        }
    }
    if expected_offset != blob.len() {
        return Err(Error::Checkpoint("trailing bytes in blob".into()));
    }
    params.set_step(manifest.global_step);
    let adam = manifest.adam.as_ref().map(|a| AdamState { m, v, beta1: a.beta1, beta2: a.beta2, eps: a.eps, lr: a.lr, t: a.t });
    Ok(Checkpoint { manifest, params, adam })
}
