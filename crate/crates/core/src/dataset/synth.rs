//! Synthetic elliptical grains on a black background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::imageprep::{GrainImage, Preprocessor, Provenance, SynthRecord, MIN_SIDE};

pub const NOISE_SIGMA: f64 = 0.05;
pub const PRESETS: [&str; 3] = ["global5", "domestic6", "ak-overlap"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrainClassParams {
    pub name: String,
    pub length_range_mm: (f64, f64),
    pub width_range_mm: (f64, f64),
    pub opacity: f64,
}

impl GrainClassParams {
    pub fn new(
        name: impl Into<String>,
        length_range_mm: (f64, f64),
        width_range_mm: (f64, f64),
        opacity: f64,
    ) -> Result<Self> {
        let p = Self {
            name: name.into(),
            length_range_mm,
            width_range_mm,
            opacity,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, (lo, hi)) in [("length", self.length_range_mm), ("width", self.width_range_mm)] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                return Err(Error::validation(format!(
                    "{}: {what} range ({lo}, {hi}) needs 0 < min <= max",
                    self.name
                )));
            }
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::validation(format!(
                "{}: opacity {} outside (0, 1]",
                self.name, self.opacity
            )));
        }
        Ok(())
    }

    fn max_extent_mm(&self) -> f64 {
        self.length_range_mm.1.max(self.width_range_mm.1)
    }
}

fn class(name: &str, length: (f64, f64), width: (f64, f64), opacity: f64) -> GrainClassParams {
    GrainClassParams {
        name: name.to_string(),
        length_range_mm: length,
        width_range_mm: width,
        opacity,
    }
}

fn around(avg: f64) -> (f64, f64) {
    (avg * 0.9, avg * 1.1)
}

/// Built-in class sets. `global5` carries the global dataset's length and
/// width ranges, `domestic6` spreads the domestic averages by 10% either
/// way, and `ak-overlap` turns Arborio and Karacadag into a confusable pair.
pub fn preset(name: &str) -> Result<Vec<GrainClassParams>> {
    let classes = match name {
        "global5" => vec![
            class("Arborio", (6.0, 7.5), (3.0, 4.0), 0.9),
            class("Basmati", (8.5, 11.5), (3.5, 4.5), 0.75),
            class("Ipsala", (9.0, 11.0), (4.0, 5.5), 0.85),
            class("Jasmine", (6.5, 10.0), (2.5, 3.5), 0.7),
            class("Karacadag", (4.5, 6.0), (3.0, 4.0), 0.8),
        ],
        "domestic6" => vec![
            class("GuangdongSimiao", around(6.74), around(1.74), 0.7),
            class("NortheasternGlutinous", around(4.45), around(2.86), 0.95),
            class("Wuchang", around(6.63), around(2.44), 0.75),
            class("PanjinCrabField", around(4.82), around(2.83), 0.85),
            class("WannianGong", around(6.81), around(2.20), 0.65),
            class("Yanbian", around(4.59), around(2.62), 0.85),
        ],
        "ak-overlap" => vec![
            class("Arborio", (5.5, 7.0), (3.0, 4.0), 0.85),
            class("Basmati", (8.5, 11.5), (3.5, 4.5), 0.75),
            class("Ipsala", (9.0, 11.0), (4.0, 5.5), 0.85),
            class("Jasmine", (6.5, 10.0), (2.5, 3.5), 0.7),
            class("Karacadag", (5.0, 6.5), (3.0, 4.0), 0.85),
        ],
        other => {
            return Err(Error::validation(format!(
                "unknown preset {other:?}, expected one of {PRESETS:?}"
            )))
        }
    };
    Ok(classes)
}

/// Canvas size and scale of rendered grains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthGeometry {
    pub canvas_px: usize,
    pub px_per_mm: f64,
}

impl Default for SynthGeometry {
    fn default() -> Self {
        Self {
            canvas_px: 250,
            px_per_mm: 20.0,
        }
    }
}

/// Renders one grain: an ellipse with axes drawn uniformly from the class
/// ranges, rotated uniformly in `[0, 360)` about the canvas centre, filled
/// with `opacity` plus clamped Gaussian texture noise. Edge pixels carry
/// their area coverage.
pub fn synth_grain(
    params: &GrainClassParams,
    seed: u64,
    canvas_px: usize,
    px_per_mm: f64,
) -> Result<GrainImage> {
    params.validate()?;
    if !(px_per_mm.is_finite() && px_per_mm > 0.0) {
        return Err(Error::validation(format!("px_per_mm must be positive, got {px_per_mm}")));
    }
    if canvas_px < MIN_SIDE {
        return Err(Error::validation(format!("canvas must be at least {MIN_SIDE} px")));
    }
    let extent = params.max_extent_mm() * px_per_mm;
    if extent > canvas_px as f64 {
        return Err(Error::validation(format!(
            "{} grain would clip the canvas: {extent:.1} px > {canvas_px} px",
            params.name
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l_lo, l_hi) = params.length_range_mm;
    let (w_lo, w_hi) = params.width_range_mm;
    let length_px = rng.random_range(l_lo..=l_hi) * px_per_mm;
    let width_px = rng.random_range(w_lo..=w_hi) * px_per_mm;
    let angle_deg: f64 = rng.random_range(0.0..360.0);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");

    let (a, b) = (length_px / 2.0, width_px / 2.0);
    let centre = canvas_px as f64 / 2.0;
    let (s, c) = angle_deg.to_radians().sin_cos();
    // major axis along (cos, -sin) in image coordinates: counterclockwise as displayed
    let inside = |x: f64, y: f64| {
        let (dx, dy) = (x - centre, y - centre);
        let u = dx * c - dy * s;
        let v = dx * s + dy * c;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    };
    let coverage = |px: f64, py: f64| -> f64 {
        let corners = [(px, py), (px + 1.0, py), (px, py + 1.0), (px + 1.0, py + 1.0)]
            .iter()
            .filter(|&&(x, y)| inside(x, y))
            .count();
        if corners == 4 {
            return 1.0;
        }
        if corners == 0 && !inside(px + 0.5, py + 0.5) {
            return 0.0;
        }
        const N: usize = 4;
        let mut hits = 0;
        for j in 0..N {
            for i in 0..N {
                let (x, y) = (px + (i as f64 + 0.5) / N as f64, py + (j as f64 + 0.5) / N as f64);
                hits += inside(x, y) as usize;
            }
        }
        hits as f64 / (N * N) as f64
    };

    let mut pixels = vec![0.0f32; canvas_px * canvas_px];
    let lo = ((centre - a - 1.0).floor().max(0.0)) as usize;
    let hi = ((centre + a + 1.0).ceil() as usize).min(canvas_px);
    for y in lo..hi {
        for x in lo..hi {
            let cov = coverage(x as f64, y as f64);
            if cov > 0.0 {
                let tone = (params.opacity + noise.sample(&mut rng)).clamp(0.0, 1.0);
                pixels[y * canvas_px + x] = (cov * tone) as f32;
            }
        }
    }
    Ok(GrainImage::new(canvas_px, canvas_px, pixels)?
        .with_label(params.name.clone())
        .with_provenance(Provenance::Synthetic(SynthRecord {
            class: params.name.clone(),
            seed,
            length_px,
            width_px,
            angle_deg,
        })))
}

/// Seed of sample `index` of class `class` in a set generated from `seed`.
pub fn sample_seed(seed: u64, class: usize, index: usize) -> u64 {
    derive_seed(derive_seed(seed, class as u64), index as u64)
}

/// Renders sample `index` of class `class`; the same call always yields
/// the same grain regardless of how the set is traversed.
pub fn synth_sample(
    classes: &[GrainClassParams],
    class: usize,
    index: usize,
    seed: u64,
    geometry: SynthGeometry,
) -> Result<GrainImage> {
    synth_grain(
        &classes[class],
        sample_seed(seed, class, index),
        geometry.canvas_px,
        geometry.px_per_mm,
    )
}

/// `per_class` grains per class at the default geometry, preprocessed.
pub fn synth_dataset(
    classes: &[GrainClassParams],
    per_class: usize,
    seed: u64,
    prep: &Preprocessor,
) -> Result<LabeledDataset> {
    synth_dataset_with(classes, per_class, seed, prep, SynthGeometry::default())
}

pub fn synth_dataset_with(
    classes: &[GrainClassParams],
    per_class: usize,
    seed: u64,
    prep: &Preprocessor,
    geometry: SynthGeometry,
) -> Result<LabeledDataset> {
    if per_class < 2 {
        return Err(Error::validation("per_class must be at least 2"));
    }
    if classes.len() < 2 {
        return Err(Error::validation("at least 2 classes are needed"));
    }
    let jobs: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|c| (0..per_class).map(move |i| (c, i)))
        .collect();
    let rows: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(c, i)| prep.gray_features(&synth_sample(classes, c, i, seed, geometry)?))
        .collect::<Result<_>>()?;
    let names = classes.iter().map(|c| c.name.clone()).collect();
    let mut ds = LabeledDataset::new(names, prep.feature_dim());
    for ((c, _), row) in jobs.iter().zip(&rows) {
        ds.push(row, *c)?;
    }
    Ok(ds)
}
