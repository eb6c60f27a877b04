//! Paired and unpaired image datasets and their on-disk layouts.
//!
//! Unpaired: `root/{trainA,trainB,testA,testB}/`. Paired: `root/{input,target}/`
//! with inputs and targets matched by file stem. Files are read in
//! lexicographic filename order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl Split {
    fn suffix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Paired,
    Unpaired,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub input: ImageTensor,
    pub target: ImageTensor,
}

impl ImagePair {
    pub fn new(input: ImageTensor, target: ImageTensor) -> Self {
        Self { input, target }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairedDataset {
    pub pairs: Vec<ImagePair>,
    pub split: Split,
}

impl PairedDataset {
    pub fn new(pairs: Vec<ImagePair>, split: Split) -> Self {
        Self { pairs, split }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &ImageTensor> {
        self.pairs.iter().map(|p| &p.input)
    }

    pub fn targets(&self) -> impl Iterator<Item = &ImageTensor> {
        self.pairs.iter().map(|p| &p.target)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnpairedDataset {
    pub domain_a: Vec<ImageTensor>,
    pub domain_b: Vec<ImageTensor>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Paired(PairedDataset),
    Unpaired(UnpairedDataset),
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Image files directly under `dir`, sorted by file name. A missing `dir`
/// yields an empty list.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn load_all(files: &[PathBuf]) -> Result<Vec<ImageTensor>> {
    files.iter().map(ImageTensor::load).collect()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn require_root(root: &Path) -> Result<()> {
    if !root.is_dir() {
        return Err(Error::MissingDirectory(root.to_path_buf()));
    }
    Ok(())
}

/// Every image directly under `dir`, in file-name order.
pub fn load_images(dir: impl AsRef<Path>) -> Result<Vec<ImageTensor>> {
    let dir = dir.as_ref();
    require_root(dir)?;
    load_all(&list_images(dir)?)
}

pub fn load_unpaired(root: impl AsRef<Path>, split: Split) -> Result<UnpairedDataset> {
    let root = root.as_ref();
    require_root(root)?;
    let s = split.suffix();
    Ok(UnpairedDataset {
        domain_a: load_all(&list_images(&root.join(format!("{s}A")))?)?,
        domain_b: load_all(&list_images(&root.join(format!("{s}B")))?)?,
        split,
    })
}

pub fn load_paired(root: impl AsRef<Path>, split: Split) -> Result<PairedDataset> {
    let root = root.as_ref();
    require_root(root)?;
    let inputs = list_images(&root.join("input"))?;
    let mut targets: BTreeMap<String, PathBuf> = BTreeMap::new();
    for t in list_images(&root.join("target"))? {
        if let Some(prev) = targets.insert(stem(&t), t.clone()) {
            return Err(Error::UnmatchedPair(format!(
                "duplicate target stem: {} and {}",
                prev.display(),
                t.display()
            )));
        }
    }
    let mut pairs = Vec::with_capacity(inputs.len());
    for input in &inputs {
        let key = stem(input);
        let target = targets
            .remove(&key)
            .ok_or_else(|| Error::UnmatchedPair(input.display().to_string()))?;
        pairs.push(ImagePair::new(ImageTensor::load(input)?, ImageTensor::load(&target)?));
    }
    if let Some((_, orphan)) = targets.into_iter().next() {
        return Err(Error::UnmatchedPair(format!("target without input: {}", orphan.display())));
    }
    Ok(PairedDataset::new(pairs, split))
}

/// Loads the training split of `root` in the given layout.
pub fn load_dataset(root: impl AsRef<Path>, layout: Layout) -> Result<Dataset> {
    match layout {
        Layout::Paired => load_paired(root, Split::Train).map(Dataset::Paired),
        Layout::Unpaired => load_unpaired(root, Split::Train).map(Dataset::Unpaired),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// File name used for the `i`-th sample when writing a dataset.
pub fn sample_file_name(i: usize) -> String {
    format!("{i:06}.png")
}

pub fn save_paired(ds: &PairedDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let (input_dir, target_dir) = (root.join("input"), root.join("target"));
    create_dir(&input_dir)?;
    create_dir(&target_dir)?;
    for (i, pair) in ds.pairs.iter().enumerate() {
        let name = sample_file_name(i);
        pair.input.save_png(input_dir.join(&name))?;
        pair.target.save_png(target_dir.join(&name))?;
    }
    Ok(())
}

pub fn save_unpaired(ds: &UnpairedDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let s = ds.split.suffix();
    for (domain, images) in [("A", &ds.domain_a), ("B", &ds.domain_b)] {
        let dir = root.join(format!("{s}{domain}"));
        create_dir(&dir)?;
        for (i, img) in images.iter().enumerate() {
            img.save_png(dir.join(sample_file_name(i)))?;
        }
    }
    Ok(())
}

/// Number of pairs kept by [`subsample`]: `floor(fraction * n)`.
pub fn subsample_count(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    // The tolerance absorbs binary rounding such as 0.29 * 100 = 28.999...
    Ok(((fraction * n as f64) * (1.0 + 1e-12)).floor().min(n as f64) as usize)
}

/// Draws `floor(fraction * N)` pairs uniformly without replacement. The kept
/// pairs stay in their original order.
pub fn subsample(ds: &PairedDataset, fraction: f64, seed: u64) -> Result<PairedDataset> {
    let k = subsample_count(ds.len(), fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, ds.len(), k).into_vec();
    picked.sort_unstable();
    Ok(PairedDataset::new(
        picked.into_iter().map(|i| ds.pairs[i].clone()).collect(),
        ds.split,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> PairedDataset {
        let pairs = (0..n)
            .map(|i| {
                let v = i as f64 / n.max(1) as f64;
                ImagePair::new(ImageTensor::filled(2, 2, 1, v), ImageTensor::filled(2, 2, 1, 1.0 - v))
            })
            .collect();
        PairedDataset::new(pairs, Split::Train)
    }

    #[test]
    fn counts_use_floor() {
        assert_eq!(subsample_count(14034, 0.25).unwrap(), 3508);
        assert_eq!(subsample_count(100, 0.29).unwrap(), 29);
        assert_eq!(subsample_count(7, 1.0).unwrap(), 7);
        assert!(subsample_count(7, 0.0).is_err());
        assert!(subsample_count(7, 1.5).is_err());
        assert!(subsample_count(7, f64::NAN).is_err());
    }

    #[test]
    fn full_fraction_is_identity() {
        let ds = toy(9);
        assert_eq!(subsample(&ds, 1.0, 3).unwrap(), ds);
    }

    #[test]
    fn subsample_is_seeded() {
        let ds = toy(50);
        let a = subsample(&ds, 0.5, 11).unwrap();
        assert_eq!(a, subsample(&ds, 0.5, 11).unwrap());
        assert_eq!(a.len(), 25);
        let differs = (0..8u64).any(|s| subsample(&ds, 0.5, 100 + s).unwrap() != a);
        assert!(differs);
    }
}
