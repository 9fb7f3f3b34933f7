//! Labeled feature datasets: directory ingestion, seeded splits and
//! synthetic grains.

mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use synth::{
    preset, sample_seed, synth_dataset, synth_dataset_with, synth_grain, synth_sample,
    GrainClassParams, SynthGeometry, NOISE_SIGMA, PRESETS,
};

use crate::error::{Error, Result};
use crate::imageprep::{read_raster, Preprocessor};
use crate::matrix::Matrix;

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Feature vectors with class indices into `class_names`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    class_names: Vec<String>,
    feature_dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(class_names: Vec<String>, feature_dim: usize) -> Self {
        Self {
            class_names,
            feature_dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, features: &[f64], label: usize) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::validation(format!(
                "sample has {} features, dataset expects {}",
                features.len(),
                self.feature_dim
            )));
        }
        if label >= self.class_names.len() {
            return Err(Error::validation(format!(
                "label {label} out of range for {} classes",
                self.class_names.len()
            )));
        }
        self.features.extend_from_slice(features);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        (0..self.len()).map(|i| (self.features(i), self.labels[i]))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.class_names.clone(), self.feature_dim);
        out.features.reserve(indices.len() * self.feature_dim);
        for &i in indices {
            out.features.extend_from_slice(self.features(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// Same samples with labels rewritten through `map` into `class_names`;
    /// samples mapped to `None` are dropped.
    pub fn relabel(
        &self,
        class_names: Vec<String>,
        map: impl Fn(usize) -> Option<usize>,
    ) -> Result<Self> {
        let mut out = Self::new(class_names, self.feature_dim);
        for (f, l) in self.iter() {
            if let Some(new) = map(l) {
                out.push(f, new)?;
            }
        }
        Ok(out)
    }

    /// Rows `indices` gathered into a batch matrix.
    pub fn batch(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            data.extend_from_slice(self.features(i));
        }
        Matrix::from_vec(indices.len(), self.feature_dim, data).expect("features are finite")
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.feature_dim, self.features.clone())
            .expect("features are finite")
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub loaded: usize,
    pub skipped: Vec<(PathBuf, String)>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Image files of `<root>/<class>/`, class names sorted, files sorted.
pub fn list_class_images(root: &Path) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut classes = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::validation(format!("{} is not valid UTF-8", dir.display())))?
            .to_string();
        let files: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        classes.push((name, files));
    }
    if classes.is_empty() {
        return Err(Error::validation(format!(
            "{} has no class subdirectories",
            root.display()
        )));
    }
    Ok(classes)
}

/// Loads `<root>/<class_name>/*.{png,jpg,bmp}` through the preprocessing
/// chain. Unreadable or grain-less images are skipped and reported.
pub fn load_directory(
    root: impl AsRef<Path>,
    prep: &Preprocessor,
) -> Result<(LabeledDataset, LoadReport)> {
    let root = root.as_ref();
    let classes = list_class_images(root)?;
    let names = classes.iter().map(|(n, _)| n.clone()).collect();
    let jobs: Vec<(usize, &PathBuf)> = classes
        .iter()
        .enumerate()
        .flat_map(|(c, (_, files))| files.iter().map(move |f| (c, f)))
        .collect();
    let results: Vec<(usize, &PathBuf, Result<Vec<f64>>)> = jobs
        .par_iter()
        .map(|&(c, path)| {
            let feats = read_raster(path, prep.config.channels).and_then(|r| prep.features(&r));
            (c, path, feats)
        })
        .collect();

    let mut ds = LabeledDataset::new(names, prep.feature_dim());
    let mut report = LoadReport::default();
    for (c, path, feats) in results {
        match feats {
            Ok(f) => {
                ds.push(&f, c)?;
                report.loaded += 1;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push((path.clone(), e.to_string()));
            }
        }
    }
    if !report.skipped.is_empty() {
        log::warn!(
            "loaded {} images, skipped {}",
            report.loaded,
            report.skipped.len()
        );
    }
    if ds.is_empty() {
        return Err(Error::validation(format!(
            "no usable images under {}",
            root.display()
        )));
    }
    Ok((ds, report))
}

/// Stratified seeded split; see [`split_with`].
pub fn split(
    ds: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    split_with(ds, train_fraction, seed, true)
}

/// Shuffles with a seeded RNG and takes `floor(fraction * n)` samples for
/// training, per class when `stratify` is set, otherwise over the whole set.
pub fn split_with(
    ds: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::validation("train_fraction must be in (0, 1)"));
    }
    let counts = ds.class_counts();
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(Error::validation(format!(
            "class {:?} has {} samples, at least 2 are needed to split",
            ds.class_names[c], counts[c]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    if stratify {
        for class in 0..ds.num_classes() {
            let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
            idx.shuffle(&mut rng);
            let cut = (train_fraction * idx.len() as f64).floor() as usize;
            train.extend_from_slice(&idx[..cut]);
            test.extend_from_slice(&idx[cut..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut rng);
        let cut = (train_fraction * idx.len() as f64).floor() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    Ok((ds.subset(&train), ds.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(per_class: &[usize]) -> LabeledDataset {
        let names = (0..per_class.len()).map(|c| format!("c{c}")).collect();
        let mut ds = LabeledDataset::new(names, 2);
        let mut k = 0.0;
        for (c, &n) in per_class.iter().enumerate() {
            for _ in 0..n {
                ds.push(&[k, c as f64], c).unwrap();
                k += 1.0;
            }
        }
        ds
    }

    #[test]
    fn push_validates() {
        let mut ds = LabeledDataset::new(vec!["a".into(), "b".into()], 2);
        assert!(ds.push(&[1.0], 0).is_err());
        assert!(ds.push(&[1.0, 2.0], 2).is_err());
        ds.push(&[1.0, 2.0], 1).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.features(0), &[1.0, 2.0]);
    }

    #[test]
    fn split_counts() {
        let ds = toy(&[5000, 5000, 5000, 5000]);
        let (train, test) = split(&ds, 0.75, 1).unwrap();
        assert_eq!((train.len(), test.len()), (15000, 5000));
        assert_eq!(train.class_counts(), vec![3750; 4]);
    }

    #[test]
    fn split_per_class_floor() {
        let ds = toy(&[7, 10, 3]);
        let (train, test) = split(&ds, 0.75, 3).unwrap();
        assert_eq!(train.class_counts(), vec![5, 7, 2]);
        assert_eq!(test.class_counts(), vec![2, 3, 1]);
    }

    #[test]
    fn split_is_deterministic() {
        let ds = toy(&[30, 40]);
        assert_eq!(split(&ds, 0.75, 9).unwrap(), split(&ds, 0.75, 9).unwrap());
        assert_ne!(split(&ds, 0.75, 9).unwrap().0, split(&ds, 0.75, 10).unwrap().0);
    }

    #[test]
    fn split_rejects_tiny_classes_and_bad_fraction() {
        let ds = toy(&[5, 1]);
        match split(&ds, 0.75, 0) {
            Err(Error::Validation(msg)) => assert!(msg.contains("c1")),
            other => panic!("unexpected {other:?}"),
        }
        let ds = toy(&[5, 5]);
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.0, 0).is_err());
    }

    #[test]
    fn unstratified_split_uses_global_floor() {
        let ds = toy(&[10, 11]);
        let (train, test) = split_with(&ds, 0.5, 2, false).unwrap();
        assert_eq!((train.len(), test.len()), (10, 11));
    }

    proptest! {
        #[test]
        fn split_partitions(
            sizes in prop::collection::vec(2usize..40, 1..5),
            fraction in 0.05f64..0.95,
            seed in any::<u64>(),
            stratify in any::<bool>(),
        ) {
            let ds = toy(&sizes);
            let (train, test) = split_with(&ds, fraction, seed, stratify).unwrap();
            // the first feature is a unique sample id
            let mut ids: Vec<i64> = train.iter().chain(test.iter()).map(|(f, _)| f[0] as i64).collect();
            ids.sort();
            prop_assert_eq!(ids, (0..ds.len() as i64).collect::<Vec<_>>());
            if stratify {
                for (c, &n) in sizes.iter().enumerate() {
                    prop_assert_eq!(train.class_counts()[c], (fraction * n as f64).floor() as usize);
                }
            }
        }
    }
}
