//! Dataset directories: `manifest.json`, `annotations.json` and one tensor
//! per image under `images/`.

use std::fs;
use std::path::Path;

use scout_core::dataset::Split;
use scout_core::synthgen::{DatasetConfig, GeneratedDataset, SceneAnnotation, SceneImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{build_dir, read_json, write_json};
use crate::tensor_io::{read_tensor, write_tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    /// Classes, parts, attribute vocabularies and φ tables.
    pub config: DatasetConfig,
    pub splits: SplitLists,
}

pub fn manifest_of(data: &GeneratedDataset) -> Manifest {
    Manifest {
        format_version: FORMAT_VERSION,
        seed: data.seed,
        config: data.config.clone(),
        splits: SplitLists {
            train: data.ids(Split::Train),
            test: data.ids(Split::Test),
        },
    }
}

/// Writes the dataset into a fresh directory; nothing appears at `dir`
/// unless every file was written.
pub fn write_dataset(dir: &Path, data: &GeneratedDataset) -> Result<()> {
    build_dir(dir, |tmp| {
        write_json(&tmp.join("manifest.json"), &manifest_of(data))?;
        write_json(&tmp.join("annotations.json"), &data.annotations())?;
        let images = tmp.join("images");
        fs::create_dir(&images).map_err(|e| Error::io(&images, e))?;
        for scene in &data.scenes {
            write_tensor(&images.join(scene.annotation.id.to_string()), &scene.image)?;
        }
        Ok(())
    })
}

pub fn read_dataset(dir: &Path) -> Result<GeneratedDataset> {
    if !dir.is_dir() {
        return Err(Error::Usage(format!("dataset directory {} does not exist", dir.display())));
    }
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    manifest.config.validate()?;
    let annotations_path = dir.join("annotations.json");
    let annotations: Vec<SceneAnnotation> = read_json(&annotations_path)?;
    let size = manifest.config.image_size;
    let mut scenes = Vec::with_capacity(annotations.len());
    for (i, annotation) in annotations.into_iter().enumerate() {
        if annotation.id as usize != i {
            return Err(Error::format(&annotations_path, "ids must be 0..n in order"));
        }
        if annotation.label >= manifest.config.classes.len() {
            return Err(Error::format(&annotations_path, format!("image {i}: label out of range")));
        }
        let stem = dir.join("images").join(i.to_string());
        let image = read_tensor(&stem)?;
        if image.shape() != [3, size, size] {
            return Err(Error::format(stem, format!("expected shape [3, {size}, {size}]")));
        }
        scenes.push(SceneImage { annotation, image });
    }
    let data = GeneratedDataset {
        config: manifest.config,
        seed: manifest.seed,
        scenes,
    };
    if data.ids(Split::Train) != manifest.splits.train || data.ids(Split::Test) != manifest.splits.test {
        return Err(Error::format(&manifest_path, "split lists disagree with annotations"));
    }
    Ok(data)
}
