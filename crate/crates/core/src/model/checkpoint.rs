use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::effects::EffectInstance;
use crate::error::{Error, Result};
use crate::gradcore::Tensor2;

pub const CHECKPOINT_FORMAT: &str = "fxck-v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub frozen: bool,
}

/// JSON side of a checkpoint. The blob holds every tensor as little-endian
/// `f32`, concatenated in `tensors` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub effect: EffectInstance,
    pub step: usize,
    pub blob_file: String,
    pub blob_sha256: String,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub effect: EffectInstance,
    pub step: usize,
}

/// `foo.json` → `foo.bin`
fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

impl Checkpoint {
    pub fn new(model: Model<f32>, effect: EffectInstance, step: usize) -> Self {
        Self {
            model,
            effect,
            step,
        }
    }

    pub fn blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.model.params.num_scalars() * 4);
        for (_, p) in self.model.params.iter() {
            for &v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn manifest(&self, blob_file: String, blob: &[u8]) -> CheckpointManifest {
        CheckpointManifest {
            format: CHECKPOINT_FORMAT.to_owned(),
            config: self.model.config().clone(),
            effect: self.effect.clone(),
            step: self.step,
            blob_file,
            blob_sha256: hex::encode(Sha256::digest(blob)),
            tensors: self
                .model
                .params
                .iter()
                .map(|(_, p)| TensorInfo {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    frozen: p.frozen,
                })
                .collect(),
        }
    }

    /// Writes `path` (JSON manifest) and the blob next to it with a `.bin`
    /// extension. Returns the blob's SHA-256 in hex.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let blob_path = blob_path(path);
        let blob = self.blob();
        let blob_file = blob_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let manifest = self.manifest(blob_file, &blob);
        fs::write(&blob_path, &blob)?;
        let mut f = fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        Ok(manifest.blob_sha256)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(path)?)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Integrity(format!(
                "format '{}' (expected '{CHECKPOINT_FORMAT}')",
                manifest.format
            )));
        }
        let blob_path = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&manifest.blob_file);
        let blob = fs::read(&blob_path)?;
        let digest = hex::encode(Sha256::digest(&blob));
        if digest != manifest.blob_sha256 {
            return Err(Error::Integrity(format!(
                "{} hashes to {digest}, manifest says {}",
                blob_path.display(),
                manifest.blob_sha256
            )));
        }
        let mut model = Model::<f32>::init(&manifest.config)?;
        if model.params.len() != manifest.tensors.len() {
            return Err(Error::Integrity(format!(
                "manifest lists {} tensors, config implies {}",
                manifest.tensors.len(),
                model.params.len()
            )));
        }
        if blob.len() != model.params.num_scalars() * 4 {
            return Err(Error::Integrity(format!(
                "blob has {} bytes, layout needs {}",
                blob.len(),
                model.params.num_scalars() * 4
            )));
        }
        let mut floats = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        for ((_, p), info) in model.params.iter_mut().zip(&manifest.tensors) {
            if p.name != info.name || p.value.shape() != (info.rows, info.cols) {
                return Err(Error::Integrity(format!(
                    "tensor {} {:?} does not match layout entry {} {:?}",
                    info.name,
                    (info.rows, info.cols),
                    p.name,
                    p.value.shape()
                )));
            }
            let data: Vec<f32> = floats.by_ref().take(info.rows * info.cols).collect();
            p.value = Tensor2::new(info.rows, info.cols, data)?;
            p.frozen = info.frozen;
        }
        Ok(Self {
            model,
            effect: manifest.effect,
            step: manifest.step,
        })
    }
}

/// SHA-256 of the blob referenced by a checkpoint manifest on disk.
pub fn stored_hash(path: impl AsRef<Path>) -> Result<String> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(path)?)?;
    Ok(manifest.blob_sha256)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::EffectId;

    #[test]
    fn save_load_roundtrip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            freeze_transforms: true,
            ..ModelConfig::tiny(4)
        };
        let model = Model::<f32>::init(&cfg).unwrap();
        let fx = EffectInstance::new(EffectId::Comp4c, 44100).unwrap();
        let ck = Checkpoint::new(model, fx, 17);
        let path = dir.path().join("ck.json");
        let hash = ck.save(&path).unwrap();
        assert_eq!(stored_hash(&path).unwrap(), hash);
        assert!(dir.path().join("ck.bin").exists());

        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);

        let mut blob = fs::read(dir.path().join("ck.bin")).unwrap();
        blob[5] ^= 0x40;
        fs::write(dir.path().join("ck.bin"), blob).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Integrity(_))));
    }
}
