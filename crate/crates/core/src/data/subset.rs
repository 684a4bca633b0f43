//! Experimental subset assembly and the stratified train/test split.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::catalog::{Catalog, Category, ColumnAliases};
use crate::data::preprocess::{crop_to_stage170, finish_from_stage170, rotate_bilinear, tensor_from_rgb8};
use crate::error::{Error, Result};
use crate::seeding::stream_rng;
use crate::tensor::ImageTensor;

/// Images plus outlier labels, category ids and source ids.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: ImageTensor<f32>,
    /// true = outlier.
    pub labels: Vec<bool>,
    pub categories: Vec<Option<Category>>,
    pub ids: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        images: ImageTensor<f32>,
        labels: Vec<bool>,
        categories: Vec<Option<Category>>,
        ids: Vec<String>,
    ) -> Result<Self> {
        let n = images.batch();
        if labels.len() != n || categories.len() != n || ids.len() != n {
            return Err(Error::Data(format!(
                "dataset arrays disagree: {n} images, {} labels, {} categories, {} ids",
                labels.len(),
                categories.len(),
                ids.len()
            )));
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Data("dataset image values must lie in [0,1]".into()));
        }
        Ok(Self { images, labels, categories, ids })
    }

    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn outlier_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn gather(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            categories: indices.iter().map(|&i| self.categories[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// Per-category sample counts (index 5 collects uncategorized).
    pub fn category_counts(&self) -> [usize; 6] {
        let mut counts = [0usize; 6];
        for c in &self.categories {
            match c {
                Some(cat) => counts[cat.index()] += 1,
                None => counts[5] += 1,
            }
        }
        counts
    }
}

/// Target composition of one experimental subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSpec {
    /// Samples to draw per category 0..4.
    pub counts: [usize; 5],
    pub inlier_category: Category,
    pub outlier_fraction: f64,
}

impl SubsetSpec {
    /// The published five-subset table: 16000 inliers of category 0;
    /// 1778 outliers from one category each for subsets 1-4, split
    /// 445/445/444/444 across categories 1-4 for subset 5.
    pub fn subset(n: u8) -> Result<Self> {
        let counts = match n {
            1 => [16000, 0, 1778, 0, 0],
            2 => [16000, 0, 0, 1778, 0],
            3 => [16000, 1778, 0, 0, 0],
            4 => [16000, 0, 0, 0, 1778],
            5 => [16000, 445, 445, 444, 444],
            _ => return Err(Error::Config(format!("subsets are numbered 1..=5, got {n}"))),
        };
        Ok(Self {
            counts,
            inlier_category: Category::CompletelyRoundSmooth,
            outlier_fraction: 0.10,
        })
    }

    /// Same composition scaled by a factor (counts rounded).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut counts = [0usize; 5];
        for (dst, &src) in counts.iter_mut().zip(&self.counts) {
            *dst = (src as f64 * factor).round() as usize;
        }
        Self { counts, ..self.clone() }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn outlier_count(&self) -> usize {
        self.total() - self.counts[self.inlier_category.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Config("subset spec requests zero samples".into()));
        }
        if self.counts[self.inlier_category.index()] == 0 {
            return Err(Error::Config("subset spec has no inliers".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) || self.outlier_fraction <= 0.0 {
            return Err(Error::Config(format!(
                "outlier fraction must be in (0,1), got {}",
                self.outlier_fraction
            )));
        }
        Ok(())
    }
}

/// Where subset images come from.
pub enum ImageSource<'a> {
    /// Procedural renders (see [`crate::data::synth`]).
    Synthetic { noise_sigma: f32 },
    /// A catalog plus a directory of `<galaxy_id>.jpg` (or `.png`) files.
    Directory {
        catalog: &'a Catalog,
        aliases: &'a ColumnAliases,
        image_dir: &'a Path,
    },
}

/// Assemble a labeled dataset matching the spec exactly: seeded sampling
/// without replacement per category, rotation augmentation when a category
/// runs short (augmented copies get derived ids).
pub fn build_subset(source: &ImageSource<'_>, spec: &SubsetSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    match source {
        ImageSource::Synthetic { noise_sigma } => crate::data::synth::synth_dataset(spec, seed, *noise_sigma),
        ImageSource::Directory { catalog, aliases, image_dir } => {
            build_from_directory(catalog, aliases, image_dir, spec, seed)
        }
    }
}

fn load_raw_image(dir: &Path, id: &str) -> Result<ImageTensor<f32>> {
    let mut last_err = None;
    for ext in ["jpg", "png", "jpeg"] {
        let path = dir.join(format!("{id}.{ext}"));
        if path.exists() {
            let img = image::open(&path)
                .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?
                .to_rgb8();
            return Ok(tensor_from_rgb8(&img));
        }
        last_err = Some(path);
    }
    Err(Error::Data(format!(
        "no image file for galaxy {id} under {} (tried .jpg/.png/.jpeg, e.g. {})",
        dir.display(),
        last_err.map(|p| p.display().to_string()).unwrap_or_default()
    )))
}

fn build_from_directory(
    catalog: &Catalog,
    aliases: &ColumnAliases,
    image_dir: &Path,
    spec: &SubsetSpec,
    seed: u64,
) -> Result<LabeledDataset> {
    let by_category = catalog.ids_by_category(aliases)?;
    let mut parts: Vec<ImageTensor<f32>> = Vec::new();
    let mut labels = Vec::new();
    let mut categories = Vec::new();
    let mut ids = Vec::new();
    for cat in Category::ALL {
        let want = spec.counts[cat.index()];
        if want == 0 {
            continue;
        }
        let available = &by_category[cat.index()];
        if available.is_empty() {
            return Err(Error::Data(format!(
                "subset requests {want} samples of {} but the catalog has none",
                cat.name()
            )));
        }
        let mut rng = stream_rng(seed, 0xB100 + cat.index() as u64);
        let mut chosen: Vec<String> = available.clone();
        chosen.shuffle(&mut rng);
        chosen.truncate(want);
        // 170-stage tensors for the chosen originals
        let mut stages = Vec::with_capacity(chosen.len());
        for id in &chosen {
            stages.push(crop_to_stage170(&load_raw_image(image_dir, id)?)?);
        }
        // rotate extra copies at the 170 stage when the category runs short
        let shortfall = want - chosen.len();
        if shortfall > 0 {
            use rand::Rng;
            for copy in 0..shortfall {
                let src = rng.gen_range(0..stages.len());
                let angle = rng.gen_range(0.0..std::f32::consts::TAU);
                let rotated = rotate_bilinear(&stages[src], angle);
                parts.push(finish_from_stage170(&rotated)?);
                labels.push(cat != spec.inlier_category);
                categories.push(Some(cat));
                ids.push(format!("{}#rot{copy}", chosen[src]));
            }
        }
        for (id, stage) in chosen.iter().zip(&stages) {
            parts.push(finish_from_stage170(stage)?);
            labels.push(cat != spec.inlier_category);
            categories.push(Some(cat));
            ids.push(id.clone());
        }
    }
    LabeledDataset::new(ImageTensor::concat(&parts)?, labels, categories, ids)
}

/// Seeded stratified partition of `0..labels.len()`: within each label
/// stratum, `round(ratio * n)` indices go to the first partition. Both
/// partitions come back ascending.
pub fn stratified_split_indices(labels: &[bool], ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream_rng(seed, 0x59117);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for stratum in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == stratum).collect();
        members.shuffle(&mut rng);
        let take = (ratio * members.len() as f64).round() as usize;
        first.extend_from_slice(&members[..take]);
        second.extend_from_slice(&members[take..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

/// Stratified 7:3-style split preserving the outlier fraction within
/// rounding.
pub fn split(dataset: &LabeledDataset, ratio: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0,1), got {ratio}")));
    }
    let (train_idx, test_idx) = stratified_split_indices(&dataset.labels, ratio, seed);
    Ok((dataset.gather(&train_idx), dataset.gather(&test_idx)))
}
