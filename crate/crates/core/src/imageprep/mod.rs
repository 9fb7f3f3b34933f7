//! Orientation normalization ("fixed flipping") and feature extraction for
//! single-grain images on a black background.
//!
//! The chain is: threshold + largest 4-connected component, tight
//! axis-aligned box, rotation search for the minimal-area box with the grain
//! placed horizontally, then crop and resample to a small square that is
//! flattened into the network's input vector.

mod io;
mod orient;
mod rotate;
mod standardize;

use std::collections::VecDeque;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use io::{read_gray, read_raster, write_png, Channels, Raster};
pub use orient::{
    box_at_angle, normalize_orientation, normalize_orientation_with, orientation_search,
    OrientationResult,
};
pub use rotate::{rotate, rotated_dims};
pub use standardize::{standardize, standardize_with, CropMode, PreprocessConfig, Preprocessor};

use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 8;
pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Parameters a synthetic grain was rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub class: String,
    pub seed: u64,
    pub length_px: f64,
    pub width_px: f64,
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum Provenance {
    #[default]
    Unknown,
    File(PathBuf),
    Synthetic(SynthRecord),
}

/// Grayscale raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrainImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    pub label: Option<String>,
    pub provenance: Provenance,
}

impl GrainImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::validation(format!(
                "image is {width}x{height}, both sides must be >= {MIN_SIDE}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::validation(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::validation("pixel intensities must be in [0, 1]"));
        }
        Ok(Self::from_parts(width, height, pixels))
    }

    pub fn black(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub(crate) fn from_parts(width: usize, height: usize, pixels: Vec<f32>) -> Self {
        Self {
            width,
            height,
            pixels,
            label: None,
            provenance: Provenance::Unknown,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Writes a pixel, clamping the value into `[0, 1]`.
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Copy with the box outline drawn at maximum intensity.
    pub fn with_box_drawn(&self, bbox: &AlignedBox) -> GrainImage {
        let mut out = self.clone();
        let right = bbox.right.min(self.width - 1);
        let bottom = bbox.bottom.min(self.height - 1);
        for x in bbox.left..=right {
            out.set(x, bbox.top, 1.0);
            out.set(x, bottom, 1.0);
        }
        for y in bbox.top..=bottom {
            out.set(bbox.left, y, 1.0);
            out.set(right, y, 1.0);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ForegroundMask {
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::validation("mask size does not match its dimensions"));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Inclusive pixel box plus the rotation that produced the image it bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedBox {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
    pub rotation_applied: f64,
}

impl AlignedBox {
    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.left..=self.right).contains(&x) && (self.top..=self.bottom).contains(&y)
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "threshold {threshold} must be in (0, 1)"
        )))
    }
}

/// Pixels brighter than `threshold`, reduced to the largest 4-connected
/// component. Equal-sized components resolve to the first one met in
/// row-major order.
pub fn segment(img: &GrainImage, threshold: f64) -> Result<ForegroundMask> {
    check_threshold(threshold)?;
    let t = threshold as f32;
    let raw: Vec<bool> = img.pixels.iter().map(|&p| p > t).collect();
    let bits = largest_component(img.width, img.height, &raw).ok_or(Error::NoGrain)?;
    Ok(ForegroundMask {
        width: img.width,
        height: img.height,
        bits,
    })
}

/// Keeps only the largest 4-connected `true` region; `None` when empty.
pub(crate) fn largest_component(width: usize, height: usize, raw: &[bool]) -> Option<Vec<bool>> {
    let mut label = vec![0u32; raw.len()];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..raw.len() {
        if !raw[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0usize;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if raw[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    (best.1 > 0).then(|| label.iter().map(|&l| l == best.0).collect())
}

pub fn tight_bbox(mask: &ForegroundMask) -> Result<AlignedBox> {
    bbox_of(mask.width, &mask.bits).ok_or_else(|| Error::validation("empty mask"))
}

pub(crate) fn bbox_of(width: usize, bits: &[bool]) -> Option<AlignedBox> {
    let mut b: Option<AlignedBox> = None;
    for (i, _) in bits.iter().enumerate().filter(|(_, &on)| on) {
        let (x, y) = (i % width, i / width);
        match &mut b {
            None => {
                b = Some(AlignedBox {
                    left: x,
                    top: y,
                    right: x,
                    bottom: y,
                    rotation_applied: 0.0,
                })
            }
            Some(bb) => {
                bb.left = bb.left.min(x);
                bb.right = bb.right.max(x);
                bb.bottom = y;
            }
        }
    }
    b
}
