//! Dataset ingestion: decode, filter, and split a directory of color images.

use std::fmt;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorspace::is_grayscale;
use crate::error::{Error, Result};

pub const MIN_SIDE: u32 = 64;
const EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    /// Relative to the manifest root, with `/` separators.
    pub path: String,
    pub split: Split,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub corrupt: Vec<String>,
    pub grayscale: Vec<String>,
    pub too_small: Vec<String>,
}

impl SkipReport {
    pub fn total(&self) -> usize {
        self.corrupt.len() + self.grayscale.len() + self.too_small.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
    pub content_hash: String,
    pub skipped: SkipReport,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Dataset(format!("cannot read manifest {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn path_of(&self, entry: &DatasetEntry) -> PathBuf {
        self.root.join(&entry.path)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for item in std::fs::read_dir(dir)? {
        let path = item?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.extension().and_then(|e| e.to_str()).is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str())) {
            out.push(path);
        }
    }
    Ok(())
}

fn relative_name(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Scans `dir` recursively for PNG/JPEG files. Undecodable, grayscale, and
/// undersized images are skipped and reported. The rest are ordered by the
/// SHA-256 of their relative path and cut 80/10/10 into train/val/test.
pub fn ingest_dataset(dir: &Path) -> Result<DatasetManifest> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("no images found in {}", dir.display())));
    }
    let mut skipped = SkipReport::default();
    let mut kept = Vec::new();
    for path in files {
        let name = relative_name(dir, &path);
        let bytes = std::fs::read(&path)?;
        let img = match image::load_from_memory(&bytes) {
            Ok(img) => img.to_rgb8(),
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                skipped.corrupt.push(name);
                continue;
            }
        };
        if img.width().min(img.height()) < MIN_SIDE {
            skipped.too_small.push(name);
        } else if is_grayscale(&img) {
            skipped.grayscale.push(name);
        } else {
            kept.push((hex::encode(Sha256::digest(name.as_bytes())), name, hex::encode(Sha256::digest(&bytes))));
        }
    }
    if kept.is_empty() {
        return Err(Error::Dataset(format!(
            "no usable color images in {} ({} corrupt, {} grayscale, {} too small)",
            dir.display(),
            skipped.corrupt.len(),
            skipped.grayscale.len(),
            skipped.too_small.len()
        )));
    }
    kept.sort();
    for list in [&mut skipped.corrupt, &mut skipped.grayscale, &mut skipped.too_small] {
        list.sort();
    }
    let n = kept.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut hasher = Sha256::new();
    let entries: Vec<DatasetEntry> = kept
        .into_iter()
        .enumerate()
        .map(|(i, (_, path, sha256))| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            hasher.update(format!("{path}\0{sha256}\0{split}\n").as_bytes());
            DatasetEntry { path, split, sha256 }
        })
        .collect();
    Ok(DatasetManifest { root: dir.to_path_buf(), entries, content_hash: hex::encode(hasher.finalize()), skipped })
}

/// Scales so the short side equals `short_side` (no-op when it already does).
pub fn resize_short_side(img: &RgbImage, short_side: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let s = w.min(h);
    if s == short_side {
        return img.clone();
    }
    let nw = ((w as u64 * short_side as u64 + s as u64 / 2) / s as u64).max(short_side as u64) as u32;
    let nh = ((h as u64 * short_side as u64 + s as u64 / 2) / s as u64).max(short_side as u64) as u32;
    imageops::resize(img, nw, nh, FilterType::Triangle)
}

/// Center square crop scaled to `size × size`, used for evaluation.
pub fn prepare_eval_image(img: &RgbImage, size: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let s = w.min(h);
    let crop = imageops::crop_imm(img, (w - s) / 2, (h - s) / 2, s, s).to_image();
    if s == size {
        crop
    } else {
        imageops::resize(&crop, size, size, FilterType::Triangle)
    }
}

/// Decodes every image of one split; unreadable files are skipped and named.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> (Vec<(String, RgbImage)>, Vec<String>) {
    let mut images = Vec::new();
    let mut failed = Vec::new();
    for entry in manifest.split(split) {
        match image::open(manifest.path_of(entry)) {
            Ok(img) => images.push((entry.path.clone(), img.to_rgb8())),
            Err(e) => {
                log::warn!("cannot read {}: {e}", entry.path);
                failed.push(entry.path.clone());
            }
        }
    }
    (images, failed)
}
