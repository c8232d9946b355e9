//! Synthetic labeled point clouds, augmentation and file formats.
//!
//! Datasets are pure functions of a [`DatasetManifest`]: the manifest holds
//! every primitive's pose and a sampling seed, so a saved manifest
//! regenerates its clouds bit for bit. On disk a dataset is a directory with
//! `manifest.txt` and one `PDCLOUD1` file per sample under `train/` and `val/`.

mod augment;
mod format;
mod ply;
mod shapes;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

pub use augment::{augment, AugmentPolicy};
pub use format::{read_cloud, read_cloud_from, write_cloud, write_cloud_to, CLOUD_MAGIC};
pub use ply::{read_ply, read_ply_from, write_ply, write_ply_to};
pub use shapes::{
    parse_kinds, random_quaternion, rotate, rotation_matrix, ShapeKind, ShapeSpec, MIN_SHAPE_POINTS, TORUS_TUBE_RATIO,
};
pub use synth::{
    generate_classification_set, generate_segmentation_set, knn_baseline, plan_classification, plan_segmentation,
    realize, realize_sample, ClassificationOptions, Dataset, DatasetManifest, Sample, SampleSpec, SegmentationOptions,
    Split, DEFAULT_NOISE,
};

use crate::error::{Error, Result};
use crate::geometry::{estimate_normals, PointCloud};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sample_path(dir: &Path, split: Split, index: usize) -> PathBuf {
    dir.join(split.name()).join(format!("{index:05}.pdc"))
}

/// Writes the manifest and every sample under `dir`, creating it if needed.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    for split in [Split::Train, Split::Val] {
        fs::create_dir_all(dir.join(split.name()))?;
        for (i, s) in dataset.split(split).iter().enumerate() {
            write_cloud(&s.cloud, &sample_path(dir, split, i))?;
        }
    }
    fs::write(dir.join(MANIFEST_FILE), dataset.manifest.to_text())?;
    Ok(())
}

/// Reads a dataset directory. Sample files must agree with the manifest on
/// count, point count and (for classification) label.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::from_text(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let load = |split: Split| -> Result<Vec<Sample>> {
        manifest
            .split(split)
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let cloud = read_cloud(&sample_path(dir, split, i))?;
                if cloud.len() != manifest.points {
                    return Err(Error::Config(format!(
                        "{} sample {i} has {} points, manifest says {}",
                        split.name(),
                        cloud.len(),
                        manifest.points
                    )));
                }
                let labels = cloud.labels().ok_or_else(|| Error::Config(format!("{} sample {i} has no labels", split.name())))?;
                let classes = manifest.classes.len();
                if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
                    return Err(Error::InvalidLabel { label: l as usize, classes });
                }
                if let Some(c) = spec.label {
                    if labels.iter().any(|&l| l != c) {
                        return Err(Error::Config(format!("{} sample {i} disagrees with its class", split.name())));
                    }
                }
                Ok(Sample { cloud, label: spec.label })
            })
            .collect()
    };
    let train = load(Split::Train)?;
    let val = load(Split::Val)?;
    Ok(Dataset { manifest, train, val })
}

/// Copy of `cloud` whose normals are estimated from its positions.
pub fn with_estimated_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    let mut out = cloud.clone();
    out.set_normals(Some(estimate_normals(cloud.positions(), k.min(cloud.len()))?.normals))?;
    Ok(out)
}
