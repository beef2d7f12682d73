use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{ImageSample, LabelMap, Modality};
use crate::error::{MadmError, Result};

use super::merge::ClassMerge;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// Labelled (source) or unlabelled-for-training (target) data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    /// Paths relative to the manifest root.
    pub image: PathBuf,
    pub label: Option<PathBuf>,
}

/// A dataset on disk: `<root>/<split>/images/*.png` with optional
/// `<root>/<split>/labels/*.png` class-id images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub role: DatasetRole,
    pub modality: Modality,
    pub class_merge: ClassMerge,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| MadmError::Load {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| MadmError::Load {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        m.class_merge.validate()?;
        m.root = root.to_path_buf();
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        fs::write(
            self.root.join(MANIFEST_FILE),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].split == split)
            .collect()
    }

    /// Whether labels of entry `index` may be used as training supervision.
    pub fn labels_visible_for_training(&self, index: usize) -> bool {
        self.role == DatasetRole::Source && self.entries[index].split == Split::Train
    }
}

fn read_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| MadmError::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn load_image(m: &DatasetManifest, e: &ManifestEntry) -> Result<ImageSample> {
    let path = m.root.join(&e.image);
    let rgb = read_image(&path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let id = e
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ImageSample::from_rgb8(rgb.as_raw(), h as usize, w as usize, m.modality, id).map_err(|err| {
        MadmError::Load {
            path,
            reason: err.to_string(),
        }
    })
}

fn load_labels(m: &DatasetManifest, rel: &Path) -> Result<LabelMap> {
    let path = m.root.join(rel);
    let raw = read_image(&path)?.to_luma8();
    let (w, h) = raw.dimensions();
    m.class_merge
        .apply(raw.as_raw(), h as usize, w as usize)
        .map_err(|err| MadmError::Load {
            path,
            reason: err.to_string(),
        })
}

/// Image plus labels when they may supervise training: source training
/// entries only. Target labels are withheld.
pub fn load_pair(m: &DatasetManifest, index: usize) -> Result<(ImageSample, Option<LabelMap>)> {
    let e = m.entries.get(index).ok_or_else(|| {
        MadmError::Config(format!("index {index} out of range for {} entries", m.len()))
    })?;
    let img = load_image(m, e)?;
    let labels = match (&e.label, m.labels_visible_for_training(index)) {
        (Some(l), true) => Some(load_labels(m, l)?),
        _ => None,
    };
    Ok((img, labels))
}

/// Image and labels for evaluation; missing labels are an error.
pub fn load_eval_pair(m: &DatasetManifest, index: usize) -> Result<(ImageSample, LabelMap)> {
    let e = m.entries.get(index).ok_or_else(|| {
        MadmError::Config(format!("index {index} out of range for {} entries", m.len()))
    })?;
    let img = load_image(m, e)?;
    let rel = e.label.as_ref().ok_or_else(|| MadmError::Load {
        path: m.root.join(&e.image),
        reason: "entry has no label file".into(),
    })?;
    let labels = load_labels(m, rel)?;
    if (labels.height(), labels.width()) != (img.height(), img.width()) {
        return Err(MadmError::Load {
            path: m.root.join(rel),
            reason: "label and image sizes differ".into(),
        });
    }
    Ok((img, labels))
}

/// Every evaluation pair of `split`.
pub fn load_eval_split(m: &DatasetManifest, split: Split) -> Result<Vec<(ImageSample, LabelMap)>> {
    m.indices(split).into_iter().map(|i| load_eval_pair(m, i)).collect()
}
