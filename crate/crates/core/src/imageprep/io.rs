use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, Luma};
use serde::{Deserialize, Serialize};

use super::{GrainImage, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channels {
    #[default]
    Gray,
    Rgb,
}

impl Channels {
    pub fn count(self) -> usize {
        match self {
            Channels::Gray => 1,
            Channels::Rgb => 3,
        }
    }
}

impl std::str::FromStr for Channels {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray" | "grey" => Ok(Channels::Gray),
            "rgb" => Ok(Channels::Rgb),
            other => Err(Error::validation(format!("unknown channel mode {other:?}"))),
        }
    }
}

/// A decoded image. Colour images keep their planes next to the luminance
/// used for segmentation and orientation.
#[derive(Debug, Clone)]
pub enum Raster {
    Gray(GrainImage),
    Rgb {
        luma: GrainImage,
        planes: [GrainImage; 3],
    },
}

impl Raster {
    pub fn luma(&self) -> &GrainImage {
        match self {
            Raster::Gray(img) => img,
            Raster::Rgb { luma, .. } => luma,
        }
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn gray_from(img: &GrayImage, path: &Path) -> Result<GrainImage> {
    let pixels = img.as_raw().iter().map(|&p| p as f32 / 255.0).collect();
    Ok(GrainImage::new(img.width() as usize, img.height() as usize, pixels)?
        .with_provenance(Provenance::File(path.to_path_buf())))
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<GrainImage> {
    let path = path.as_ref();
    gray_from(&decode(path)?.to_luma8(), path)
}

pub fn read_raster(path: impl AsRef<Path>, channels: Channels) -> Result<Raster> {
    let path = path.as_ref();
    let decoded = decode(path)?;
    let luma = gray_from(&decoded.to_luma8(), path)?;
    match channels {
        Channels::Gray => Ok(Raster::Gray(luma)),
        Channels::Rgb => {
            let rgb = decoded.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let plane = |c: usize| -> Result<GrainImage> {
                let px = rgb.pixels().map(|p| p.0[c] as f32 / 255.0).collect();
                Ok(GrainImage::new(w, h, px)?.with_provenance(Provenance::File(path.to_path_buf())))
            };
            Ok(Raster::Rgb {
                luma,
                planes: [plane(0)?, plane(1)?, plane(2)?],
            })
        }
    }
}

/// Writes an 8-bit grayscale PNG.
pub fn write_png(img: &GrainImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = GrayImage::new(img.width() as u32, img.height() as u32);
    for (i, p) in out.pixels_mut().enumerate() {
        *p = Luma([(img.pixels()[i] * 255.0).round() as u8]);
    }
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            source => Error::Image {
                path: path.to_path_buf(),
                source,
            },
        })
}
