use super::GrainImage;

/// Rotation about the image center onto an enlarged canvas.
///
/// Positive angles turn the content counterclockwise as displayed (y axis
/// pointing down). Pixel centers sit at `i + 0.5`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Rotation {
    angle: f64,
    cos: f64,
    sin: f64,
    src_w: usize,
    src_h: usize,
    pub out_w: usize,
    pub out_h: usize,
}

/// `(sin, cos)` with exact values on multiples of 90 degrees.
fn sin_cos_deg(angle: f64) -> (f64, f64) {
    let a = angle.rem_euclid(360.0);
    if a == 0.0 {
        (0.0, 1.0)
    } else if a == 90.0 {
        (1.0, 0.0)
    } else if a == 180.0 {
        (0.0, -1.0)
    } else if a == 270.0 {
        (-1.0, 0.0)
    } else {
        a.to_radians().sin_cos()
    }
}

/// Canvas size needed to hold a `width x height` image rotated by `angle`.
pub fn rotated_dims(width: usize, height: usize, angle: f64) -> (usize, usize) {
    let (s, c) = sin_cos_deg(angle);
    let (w, h) = (width as f64, height as f64);
    let ow = (w * c.abs() + h * s.abs() - 1e-9).ceil().max(1.0) as usize;
    let oh = (w * s.abs() + h * c.abs() - 1e-9).ceil().max(1.0) as usize;
    (ow, oh)
}

impl Rotation {
    pub fn new(src_w: usize, src_h: usize, angle: f64) -> Self {
        let (sin, cos) = sin_cos_deg(angle);
        let (out_w, out_h) = rotated_dims(src_w, src_h, angle);
        Self {
            angle,
            cos,
            sin,
            src_w,
            src_h,
            out_w,
            out_h,
        }
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Half-extent of the axis-aligned box around a rotated unit square.
    pub fn spread(&self) -> f64 {
        self.cos.abs() + self.sin.abs()
    }

    /// Source coordinates (continuous) of output point `(x, y)`.
    #[inline]
    pub fn to_source(self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.out_w as f64 / 2.0;
        let dy = y - self.out_h as f64 / 2.0;
        (
            dx * self.cos - dy * self.sin + self.src_w as f64 / 2.0,
            dx * self.sin + dy * self.cos + self.src_h as f64 / 2.0,
        )
    }

    /// Output coordinates (continuous) of source point `(x, y)`.
    #[inline]
    pub fn to_output(self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.src_w as f64 / 2.0;
        let dy = y - self.src_h as f64 / 2.0;
        (
            dx * self.cos + dy * self.sin + self.out_w as f64 / 2.0,
            -dx * self.sin + dy * self.cos + self.out_h as f64 / 2.0,
        )
    }

    /// Bilinear sample of output pixel `(x, y)`, black outside the source.
    #[inline]
    pub fn sample(&self, img: &GrainImage, x: usize, y: usize) -> f32 {
        let (sx, sy) = self.to_source(x as f64 + 0.5, y as f64 + 0.5);
        bilinear(img, sx - 0.5, sy - 0.5)
    }

    /// Output-pixel window that can receive any contribution from the source
    /// pixel box `[left, right] x [top, bottom]`.
    pub fn output_window(
        &self,
        left: usize,
        top: usize,
        right: usize,
        bottom: usize,
    ) -> (usize, usize, usize, usize) {
        // a source pixel influences samples within one pixel of its center
        let (x0, y0) = (left as f64 - 0.5, top as f64 - 0.5);
        let (x1, y1) = (right as f64 + 1.5, bottom as f64 + 1.5);
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (cx, cy) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
            let (ox, oy) = self.to_output(cx, cy);
            lo = (lo.0.min(ox), lo.1.min(oy));
            hi = (hi.0.max(ox), hi.1.max(oy));
        }
        let clamp = |v: f64, max: usize| (v.max(0.0) as usize).min(max - 1);
        (
            clamp((lo.0 - 1.0).floor(), self.out_w),
            clamp((lo.1 - 1.0).floor(), self.out_h),
            clamp((hi.0 + 1.0).ceil(), self.out_w),
            clamp((hi.1 + 1.0).ceil(), self.out_h),
        )
    }
}

/// Bilinear interpolation at pixel-index coordinates, zero outside.
#[inline]
pub(crate) fn bilinear(img: &GrainImage, u: f64, v: f64) -> f32 {
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = (u - x0) as f32;
    let fy = (v - y0) as f32;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (w, h) = (img.width() as i64, img.height() as i64);
    if x0 < -1 || y0 < -1 || x0 >= w || y0 >= h {
        return 0.0;
    }
    let px = img.pixels();
    let at = |x: i64, y: i64| -> f32 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            px[(y * w + x) as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
}

/// Rotates `img` by `angle` degrees about its center, enlarging the canvas so
/// nothing clips and filling exposed areas with black.
pub fn rotate(img: &GrainImage, angle: f64) -> GrainImage {
    let rot = Rotation::new(img.width(), img.height(), angle);
    let mut pixels = Vec::with_capacity(rot.out_w * rot.out_h);
    for y in 0..rot.out_h {
        for x in 0..rot.out_w {
            pixels.push(rot.sample(img, x, y));
        }
    }
    let mut out = GrainImage::from_parts(rot.out_w, rot.out_h, pixels);
    out.label = img.label.clone();
    out.provenance = img.provenance.clone();
    out
}
