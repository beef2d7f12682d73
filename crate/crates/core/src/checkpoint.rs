//! Single-file checkpoints: a JSON manifest followed by raw little-endian
//! `f64` parameter arrays.
//!
//! Layout: 8-byte magic, `u64` manifest length, manifest bytes, then the
//! arrays in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, DeskBackbone};
use crate::error::{MadmError, Result};
use crate::model::{ModelSpec, SegModel};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MADMCKPT";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    /// Backbone plus segmentation head.
    DeskModel,
    /// Backbone only, e.g. a pretrained autoencoder.
    DeskBackbone,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub kind: CheckpointKind,
    pub latent_channels: usize,
    /// Channel widths of the three feature taps.
    pub taps: [usize; 3],
    pub backbone: BackboneConfig,
    pub model: Option<ModelSpec>,
    pub arrays: Vec<ArrayEntry>,
    /// Free-form run information (iteration, config hash, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn encode(manifest: &CheckpointManifest, params: &ParamStore) -> Result<Vec<u8>> {
    let head = serde_json::to_vec(manifest)?;
    let mut out = Vec::with_capacity(16 + head.len() + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    for a in &manifest.arrays {
        let t = params.get(&a.name).expect("manifest lists stored arrays");
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> std::result::Result<(CheckpointManifest, ParamStore), String> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + len).ok_or("truncated manifest")?;
    let manifest: CheckpointManifest = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(format!("unsupported schema version {}", manifest.schema_version));
    }
    let mut params = ParamStore::new();
    let mut off = 16 + len;
    for a in &manifest.arrays {
        let n: usize = a.shape.iter().product();
        let raw = bytes
            .get(off..off + 8 * n)
            .ok_or_else(|| format!("truncated array {}", a.name))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(a.name.clone(), Tensor::from_vec(&a.shape, data).map_err(|e| e.to_string())?);
        off += 8 * n;
    }
    if off != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - off));
    }
    Ok((manifest, params))
}

fn manifest_for(
    kind: CheckpointKind,
    backbone: &BackboneConfig,
    model: Option<ModelSpec>,
    params: &ParamStore,
    meta: serde_json::Value,
) -> CheckpointManifest {
    CheckpointManifest {
        schema_version: SCHEMA_VERSION,
        kind,
        latent_channels: backbone.latent_channels,
        taps: backbone.tap_channels(),
        backbone: backbone.clone(),
        model,
        arrays: params
            .iter()
            .map(|(n, t)| ArrayEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta,
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read(path: &Path) -> Result<(CheckpointManifest, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| MadmError::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode(&bytes).map_err(|reason| MadmError::Load {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn save_model(path: &Path, model: &SegModel, meta: serde_json::Value) -> Result<()> {
    let m = manifest_for(
        CheckpointKind::DeskModel,
        &model.spec().backbone,
        Some(model.spec().clone()),
        model.params(),
        meta,
    );
    write(path, &encode(&m, model.params())?)
}

pub fn load_model(path: &Path) -> Result<(SegModel, CheckpointManifest)> {
    let (m, params) = read(path)?;
    let spec = match (m.kind, &m.model) {
        (CheckpointKind::DeskModel, Some(spec)) => spec.clone(),
        _ => {
            return Err(MadmError::Checkpoint(format!(
                "{} holds a {:?}, not a model",
                path.display(),
                m.kind
            )))
        }
    };
    Ok((SegModel::from_params(spec, params)?, m))
}

pub fn save_backbone(path: &Path, backbone: &DeskBackbone, meta: serde_json::Value) -> Result<()> {
    let m = manifest_for(
        CheckpointKind::DeskBackbone,
        backbone.config(),
        None,
        backbone.params(),
        meta,
    );
    write(path, &encode(&m, backbone.params())?)
}

/// Loads a backbone checkpoint, or the backbone part of a model checkpoint.
pub fn load_backbone(path: &Path) -> Result<(DeskBackbone, CheckpointManifest)> {
    let (m, params) = read(path)?;
    Ok((DeskBackbone::from_params(m.backbone.clone(), params)?, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = SegModel::new(ModelSpec::compact(4), &mut SeededRng::new(3));
        save_model(&path, &m, serde_json::json!({"iteration": 7})).unwrap();
        let (back, manifest) = load_model(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.params().fingerprint(), m.params().fingerprint());
        assert_eq!(manifest.meta["iteration"], 7);
        assert_eq!(manifest.latent_channels, 4);
    }

    #[test]
    fn corrupt_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"MADMCKPT\x05\0\0\0\0\0\0\0{}").unwrap();
        let err = load_model(&path).unwrap_err();
        assert!(err.to_string().contains("bad.ckpt"), "{err}");
        let b = DeskBackbone::new(BackboneConfig::default(), &mut SeededRng::new(0));
        let p2 = dir.path().join("b.ckpt");
        save_backbone(&p2, &b, serde_json::Value::Null).unwrap();
        assert!(load_model(&p2).is_err());
        assert_eq!(load_backbone(&p2).unwrap().0, b);
        let mut bytes = std::fs::read(&p2).unwrap();
        bytes.pop();
        std::fs::write(&p2, bytes).unwrap();
        assert!(load_backbone(&p2).is_err());
    }
}
