//! On-disk tensor archive: `manifest.json` (ordered entries with name, shape,
//! dtype and byte offset) plus `tensors.bin` (little-endian `f32`, concatenated
//! in manifest order). A model directory additionally carries `config.json`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamStore, Seq2SeqModel};
use crate::tensor::{Scalar, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "tensors.bin";
pub const CONFIG_FILE: &str = "config.json";

const F32_BYTES: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.numel() * F32_BYTES
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointArchive {
    manifest: Vec<ManifestEntry>,
    blob: Vec<u8>,
}

/// Offsets implied by laying the shapes out back to back.
pub fn offsets_from_shapes(shapes: &[Vec<usize>]) -> Vec<usize> {
    shapes
        .iter()
        .scan(0usize, |acc, s| {
            let at = *acc;
            *acc += s.iter().product::<usize>() * F32_BYTES;
            Some(at)
        })
        .collect()
}

impl CheckpointArchive {
    pub fn new(manifest: Vec<ManifestEntry>, blob: Vec<u8>) -> Result<Self> {
        let archive = Self { manifest, blob };
        archive.validate()?;
        Ok(archive)
    }

    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Self {
        let mut manifest = Vec::with_capacity(store.len());
        let mut blob = Vec::with_capacity(store.numel() * F32_BYTES);
        for (name, t) in store.iter() {
            manifest.push(ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset: blob.len(),
            });
            for &v in t.data() {
                blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        Self { manifest, blob }
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    pub fn blob(&self) -> &[u8] {
        &self.blob
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut cursor = 0usize;
        for e in &self.manifest {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Format(format!("duplicate tensor name `{}`", e.name)));
            }
            if e.dtype != "f32" {
                return Err(Error::Format(format!("`{}` has unsupported dtype {}", e.name, e.dtype)));
            }
            if e.shape.is_empty() || e.shape.contains(&0) {
                return Err(Error::Format(format!("`{}` has invalid shape {:?}", e.name, e.shape)));
            }
            if e.offset != cursor {
                return Err(Error::Format(format!(
                    "`{}` at offset {} but previous tensors end at {cursor}",
                    e.name, e.offset
                )));
            }
            cursor += e.byte_len();
        }
        if cursor != self.blob.len() {
            return Err(Error::Format(format!(
                "manifest covers {cursor} bytes but payload has {}",
                self.blob.len()
            )));
        }
        Ok(())
    }

    pub fn entry(&self, name: &str) -> Option<&ManifestEntry> {
        self.manifest.iter().find(|e| e.name == name)
    }

    fn decode(&self, e: &ManifestEntry) -> Vec<f32> {
        self.blob[e.offset..e.offset + e.byte_len()]
            .chunks_exact(F32_BYTES)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect()
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self.entry(name).ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        Tensor::new(e.shape.clone(), self.decode(e).into_iter().map(|v| T::cast(v as f64)).collect())
    }

    pub fn to_store<T: Scalar>(&self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for e in &self.manifest {
            let data = self.decode(e).into_iter().map(|v| T::cast(v as f64)).collect();
            store.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
        }
        Ok(store)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Json {
            path: manifest_path.clone(),
            source: e,
        })?;
        fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))?;
        let blob_path = dir.join(BLOB_FILE);
        fs::write(&blob_path, &self.blob).map_err(|e| Error::io(&blob_path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: manifest_path,
            source: e,
        })?;
        let blob_path = dir.join(BLOB_FILE);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Self::new(manifest, blob)
    }
}

pub fn save_archive<T: Scalar>(model: &Seq2SeqModel<T>) -> CheckpointArchive {
    CheckpointArchive::from_store(model.params())
}

/// Writes archive plus `config.json`.
pub fn save_model<T: Scalar>(model: &Seq2SeqModel<T>, dir: &Path) -> Result<()> {
    save_archive(model).write_dir(dir)?;
    write_config(model.config(), dir)
}

pub fn write_config(config: &ModelConfig, dir: &Path) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(config).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_config(dir: &Path) -> Result<ModelConfig> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })
}

pub fn load_model<T: Scalar>(dir: &Path) -> Result<Seq2SeqModel<T>> {
    let config = read_config(dir)?;
    let archive = CheckpointArchive::read_dir(dir)?;
    Seq2SeqModel::from_params(config, &archive.to_store()?)
}

/// Element-wise arithmetic mean of archives with identical manifests.
pub fn average_checkpoints(archives: &[CheckpointArchive]) -> Result<CheckpointArchive> {
    let first = archives
        .first()
        .ok_or_else(|| Error::Argument("no checkpoints to average".into()))?;
    for (i, a) in archives.iter().enumerate().skip(1) {
        if a.manifest.len() != first.manifest.len() {
            return Err(Error::ManifestMismatch(format!(
                "checkpoint {i} has {} tensors, checkpoint 0 has {}",
                a.manifest.len(),
                first.manifest.len()
            )));
        }
        for (x, y) in first.manifest.iter().zip(&a.manifest) {
            if x.name != y.name || x.shape != y.shape {
                return Err(Error::ManifestMismatch(format!(
                    "checkpoint {i}: `{}` {:?} vs `{}` {:?}",
                    y.name, y.shape, x.name, x.shape
                )));
            }
        }
    }
    let n = archives.len() as f64;
    let mut blob = Vec::with_capacity(first.blob.len());
    for e in &first.manifest {
        let mut sum = vec![0f64; e.numel()];
        for a in archives {
            for (s, v) in sum.iter_mut().zip(a.decode(e)) {
                *s += v as f64;
            }
        }
        for s in sum {
            blob.extend_from_slice(&((s / n) as f32).to_le_bytes());
        }
    }
    Ok(CheckpointArchive {
        manifest: first.manifest.clone(),
        blob,
    })
}
