use serde::{Deserialize, Serialize};

use super::io::{Channels, Raster};
use super::orient::orientation_search;
use super::rotate::rotate;
use super::{check_threshold, segment, tight_bbox, ForegroundMask, GrainImage, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};

/// How the grain is cut out before resampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CropMode {
    /// The padded tight box, clamped to the canvas and stretched to the
    /// output square. Discards absolute size and aspect ratio.
    Fit,
    /// A fixed `side x side` square centered on the grain's intensity
    /// centroid, black outside the canvas. Keeps absolute size, which is what
    /// separates grain varieties. Grows to the padded box if the grain would
    /// not fit.
    Window { side: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub fixed_flipping: bool,
    pub threshold: f64,
    pub out_side: usize,
    pub pad_fraction: f64,
    pub crop: CropMode,
    pub channels: Channels,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            fixed_flipping: true,
            threshold: DEFAULT_THRESHOLD,
            out_side: 32,
            pad_fraction: 0.1,
            crop: CropMode::Window { side: 250 },
            channels: Channels::Gray,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        if self.out_side < 8 {
            return Err(Error::validation("out_side must be >= 8"));
        }
        if !(0.0..=1.0).contains(&self.pad_fraction) {
            return Err(Error::validation("pad_fraction must be in [0, 1]"));
        }
        if let CropMode::Window { side } = self.crop {
            if side < 8 {
                return Err(Error::validation("crop window side must be >= 8"));
            }
        }
        Ok(())
    }

    /// Length of the feature vector produced per image.
    pub fn feature_dim(&self) -> usize {
        self.out_side * self.out_side * self.channels.count()
    }
}

/// Continuous source rectangle to resample.
#[derive(Debug, Clone, Copy)]
struct Region {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

fn crop_region(img: &GrainImage, mask: &ForegroundMask, cfg: &PreprocessConfig) -> Result<Region> {
    let bbox = tight_bbox(mask)?;
    let pad_x = cfg.pad_fraction * bbox.width() as f64;
    let pad_y = cfg.pad_fraction * bbox.height() as f64;
    match cfg.crop {
        CropMode::Fit => {
            let x0 = (bbox.left as f64 - pad_x).max(0.0);
            let y0 = (bbox.top as f64 - pad_y).max(0.0);
            let x1 = ((bbox.right + 1) as f64 + pad_x).min(img.width() as f64);
            let y1 = ((bbox.bottom + 1) as f64 + pad_y).min(img.height() as f64);
            Ok(Region {
                x0,
                y0,
                w: x1 - x0,
                h: y1 - y0,
            })
        }
        CropMode::Window { side } => {
            let (mut sum, mut sx, mut sy) = (0.0f64, 0.0f64, 0.0f64);
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if mask.get(x, y) {
                        let v = img.get(x, y) as f64;
                        sum += v;
                        sx += v * (x as f64 + 0.5);
                        sy += v * (y as f64 + 0.5);
                    }
                }
            }
            let (cx, cy) = (sx / sum, sy / sum);
            let side = (side as f64)
                .max(bbox.width() as f64 + 2.0 * pad_x)
                .max(bbox.height() as f64 + 2.0 * pad_y);
            Ok(Region {
                x0: cx - side / 2.0,
                y0: cy - side / 2.0,
                w: side,
                h: side,
            })
        }
    }
}

/// Triangle-filter taps for `out` samples spanning `[start, start + len)`
/// over `n` source pixels. The filter widens when downsampling so every
/// source pixel contributes.
fn taps(start: f64, len: f64, out: usize, n: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = len / out as f64;
    let support = scale.max(1.0);
    (0..out)
        .map(|j| {
            let centre = start + (j as f64 + 0.5) * scale;
            let lo = ((centre - support - 0.5).floor().max(0.0)) as usize;
            let hi = ((centre + support + 0.5).ceil().max(0.0) as usize).min(n);
            if lo >= hi {
                return (0, Vec::new());
            }
            let mut w: Vec<f64> = (lo..hi)
                .map(|i| (1.0 - ((i as f64 + 0.5) - centre).abs() / support).max(0.0))
                .collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            } else {
                w.clear();
            }
            (lo, w)
        })
        .collect()
}

fn resample(img: &GrainImage, region: Region, out_side: usize) -> Vec<f64> {
    let cols = taps(region.x0, region.w, out_side, img.width());
    let rows = taps(region.y0, region.h, out_side, img.height());
    let row_lo = rows.iter().filter(|(_, w)| !w.is_empty()).map(|r| r.0).min();
    let row_hi = rows
        .iter()
        .filter(|(_, w)| !w.is_empty())
        .map(|(lo, w)| lo + w.len())
        .max();
    let mut out = vec![0.0; out_side * out_side];
    let (Some(row_lo), Some(row_hi)) = (row_lo, row_hi) else {
        return out;
    };

    let mut tmp = vec![0.0f64; (row_hi - row_lo) * out_side];
    for r in row_lo..row_hi {
        let src = &img.pixels()[r * img.width()..(r + 1) * img.width()];
        let dst = &mut tmp[(r - row_lo) * out_side..(r - row_lo + 1) * out_side];
        for (d, (lo, w)) in dst.iter_mut().zip(&cols) {
            *d = w.iter().zip(&src[*lo..]).map(|(wi, &p)| wi * p as f64).sum();
        }
    }
    for (k, (lo, w)) in rows.iter().enumerate() {
        let dst = &mut out[k * out_side..(k + 1) * out_side];
        for (i, wi) in w.iter().enumerate() {
            let src = &tmp[(lo + i - row_lo) * out_side..(lo + i - row_lo + 1) * out_side];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wi * s;
            }
        }
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

/// Crops the padded tight box (clamped to the canvas) and resamples it to
/// `out_side x out_side`, row-major.
pub fn standardize(img: &GrainImage, out_side: usize) -> Result<Vec<f64>> {
    let cfg = PreprocessConfig {
        fixed_flipping: false,
        out_side,
        crop: CropMode::Fit,
        ..PreprocessConfig::default()
    };
    standardize_with(img, &cfg)
}

/// Crop and resample under `cfg`. Orientation is left as is.
pub fn standardize_with(img: &GrainImage, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mask = segment(img, cfg.threshold)?;
    let region = crop_region(img, &mask, cfg)?;
    Ok(resample(img, region, cfg.out_side))
}

/// Full preprocessing chain from a decoded raster to a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
}

impl Preprocessor {
    pub fn new(config: PreprocessConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn gray_features(&self, img: &GrainImage) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let oriented;
        let img = if cfg.fixed_flipping {
            let found = orientation_search(img, cfg.threshold)?;
            oriented = rotate(img, found.angle);
            &oriented
        } else {
            img
        };
        let feats = standardize_with(img, cfg)?;
        Ok(match cfg.channels {
            Channels::Gray => feats,
            Channels::Rgb => feats.repeat(3),
        })
    }

    pub fn features(&self, raster: &Raster) -> Result<Vec<f64>> {
        let cfg = &self.config;
        match (raster, cfg.channels) {
            (Raster::Gray(img), _) => self.gray_features(img),
            (Raster::Rgb { luma, .. }, Channels::Gray) => self.gray_features(luma),
            (Raster::Rgb { luma, planes }, Channels::Rgb) => {
                let angle = if cfg.fixed_flipping {
                    orientation_search(luma, cfg.threshold)?.angle
                } else {
                    0.0
                };
                let luma = rotate(luma, angle);
                let mask = segment(&luma, cfg.threshold)?;
                let region = crop_region(&luma, &mask, cfg)?;
                let mut out = Vec::with_capacity(cfg.feature_dim());
                for plane in planes {
                    out.extend(resample(&rotate(plane, angle), region, cfg.out_side));
                }
                Ok(out)
            }
        }
    }
}
