//! Rotation search for the minimal-area horizontal bounding box.
//!
//! Angles are searched on a 0.1 degree lattice over `[0, 180)`; the box of a
//! rotation by `a + 180` is the box of `a` turned upside down, so the half turn
//! covers every pose. Every lattice angle is scored by the box of all
//! above-threshold output pixels, found by scanning short strips next to the
//! projected convex hull of the grain. The best `VERIFY_COUNT` angles are then measured
//! exactly (rotate, threshold, largest component).

use super::rotate::{rotate, Rotation};
use super::{bbox_of, check_threshold, largest_component, segment, tight_bbox, AlignedBox};
use super::{GrainImage, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};

const VERIFY_COUNT: usize = 6;
const HALF_TURN_TENTHS: i32 = 1800;
const QUARTER_TURN_TENTHS: i32 = 900;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationResult {
    /// Rotation in degrees, in `[0, 180)`.
    pub angle: f64,
    pub bbox: AlignedBox,
    /// Exact box measurements made during the search.
    pub evaluations: usize,
}

/// Tight box of `segment(rotate(img, angle))` without materializing the
/// rotated canvas.
pub fn box_at_angle(img: &GrainImage, angle: f64, threshold: f64) -> Result<AlignedBox> {
    check_threshold(threshold)?;
    let t = threshold as f32;
    let raw: Vec<bool> = img.pixels().iter().map(|&p| p > t).collect();
    let region = bbox_of(img.width(), &raw).ok_or(Error::NoGrain)?;
    measure(img, &region, angle, t).ok_or(Error::NoGrain)
}

/// `region` must bound every source pixel above `t`: a bilinear sample can
/// only exceed `t` if one of its four taps does.
fn measure(img: &GrainImage, region: &AlignedBox, angle: f64, t: f32) -> Option<AlignedBox> {
    let rot = Rotation::new(img.width(), img.height(), angle);
    let window = rot.output_window(region.left, region.top, region.right, region.bottom);
    measure_in(img, &rot, window, t)
}

/// Exact box given an output window holding every pixel above `t`.
fn measure_in(
    img: &GrainImage,
    rot: &Rotation,
    (l, top, r, b): (usize, usize, usize, usize),
    t: f32,
) -> Option<AlignedBox> {
    let (ww, wh) = (r - l + 1, b - top + 1);
    let mut raw = Vec::with_capacity(ww * wh);
    for y in top..=b {
        for x in l..=r {
            raw.push(rot.sample(img, x, y) > t);
        }
    }
    let keep = largest_component(ww, wh, &raw)?;
    let local = bbox_of(ww, &keep)?;
    Some(AlignedBox {
        left: local.left + l,
        top: local.top + top,
        right: local.right + l,
        bottom: local.bottom + top,
        rotation_applied: rot.angle(),
    })
}

/// Convex hull (counterclockwise in math orientation) of the centers of
/// pixels above threshold.
fn hull(raw: &[bool], w: usize) -> Vec<(f64, f64)> {
    // the leftmost and rightmost set pixels of each row carry the hull
    let mut pts = Vec::new();
    for (y, row) in raw.chunks_exact(w).enumerate() {
        let first = row.iter().position(|&b| b);
        let last = row.iter().rposition(|&b| b);
        if let (Some(f), Some(l)) = (first, last) {
            pts.push((f as f64 + 0.5, y as f64 + 0.5));
            if l != f {
                pts.push((l as f64 + 0.5, y as f64 + 0.5));
            }
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for pass in 0..2 {
        let base = out.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while out.len() >= base + 2 && cross(out[out.len() - 2], out[out.len() - 1], p) <= 0.0 {
                out.pop();
            }
            out.push(p);
        }
        out.pop();
    }
    out
}

/// Range of the second coordinate over the part of the convex polygon
/// `poly` whose first coordinate is `<= lim` (or `>= lim` when `rev`).
fn clipped_span(poly: &[(f64, f64)], lim: f64, rev: bool) -> Option<(f64, f64)> {
    let inside = |k: f64| if rev { k >= lim } else { k <= lim };
    let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        if inside(p.0) {
            a = a.min(p.1);
            b = b.max(p.1);
        }
        if inside(p.0) != inside(q.0) {
            let f = (lim - p.0) / (q.0 - p.0);
            let c = p.1 + f * (q.1 - p.1);
            a = a.min(c);
            b = b.max(c);
        }
    }
    (a <= b).then_some((a, b))
}

/// Box `(left, top, right, bottom)` of all output pixels above `t` at
/// `rot`, ignoring connectivity.
///
/// An output pixel above `t` has a source tap above `t` within Chebyshev
/// distance 1, whose projection lies within `d = |cos| + |sin|` of it. Taps
/// lie in the convex hull, so a strip only needs the rows (or columns)
/// spanned by the projected hull within reach of it.
fn foreground_box(
    img: &GrainImage,
    rot: &Rotation,
    hull: &[(f64, f64)],
    proj: &mut Vec<(f64, f64)>,
    t: f32,
) -> Option<(usize, usize, usize, usize)> {
    let d = rot.spread();
    let (w, h) = (rot.out_w, rot.out_h);
    let mut scan = |axis: usize, rev: bool| -> Option<usize> {
        let (along, across) = if axis == 0 { (w, h) } else { (h, w) };
        proj.clear();
        proj.extend(hull.iter().map(|&(x, y)| {
            let (ox, oy) = rot.to_output(x, y);
            if axis == 0 {
                (ox, oy)
            } else {
                (oy, ox)
            }
        }));
        let (lo, hi) = proj
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let first = ((lo - d - 0.5).floor().max(0.0) as usize).min(along - 1);
        let last = ((hi + d - 0.5).ceil().max(0.0) as usize).min(along - 1);
        let visit = |i: usize| -> bool {
            let centre = i as f64 + 0.5;
            let lim = if rev { centre - d } else { centre + d };
            let Some((a, b)) = clipped_span(proj, lim, rev) else {
                return false;
            };
            let j0 = (a - d - 0.5).floor().max(0.0) as usize;
            let j1 = ((b + d - 0.5).ceil().max(0.0) as usize).min(across - 1);
            (j0..=j1).any(|j| {
                let (x, y) = if axis == 0 { (i, j) } else { (j, i) };
                rot.sample(img, x, y) > t
            })
        };
        if rev {
            (first..=last).rev().find(|&i| visit(i))
        } else {
            (first..=last).find(|&i| visit(i))
        }
    };
    let left = scan(0, false)?;
    let right = scan(0, true)?;
    let top = scan(1, false)?;
    let bottom = scan(1, true)?;
    Some((left, top, right, bottom))
}

/// Pixels inside `region` whose `(2r+1)^2` neighbourhood is entirely set.
fn erode(raw: &[bool], w: usize, region: &AlignedBox, r: usize) -> Vec<bool> {
    let mut out = vec![false; raw.len()];
    if region.width() <= 2 * r || region.height() <= 2 * r {
        return out;
    }
    for y in region.top + r..=region.bottom - r {
        for x in region.left + r..=region.right - r {
            out[y * w + x] =
                (y - r..=y + r).all(|yy| raw[yy * w + x - r..=yy * w + x + r].iter().all(|&b| b));
        }
    }
    out
}

fn projected_extent(rot: &Rotation, pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.is_empty() {
        return None;
    }
    let (mut x0, mut x1, mut y0, mut y1) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        let (ox, oy) = rot.to_output(x, y);
        x0 = x0.min(ox);
        x1 = x1.max(ox);
        y0 = y0.min(oy);
        y1 = y1.max(oy);
    }
    Some((x1 - x0, y1 - y0))
}

/// Lower bounds on the all-foreground box width and height at `rot`.
///
/// Every sample within Chebyshev distance 1.5 of the center of a pixel
/// whose 5x5 neighbourhood is set has all four taps set. Any disk of radius
/// `sqrt(1/2)` holds an output pixel center, so each such core pixel has a
/// foreground output pixel at or beyond its own projection in every axis
/// direction.
fn box_lower_bound(rot: &Rotation, core_hull: &[(f64, f64)]) -> (f64, f64) {
    projected_extent(rot, core_hull).map_or((0.0, 0.0), |(w, h)| (w + 1.0, h + 1.0))
}

/// Upper bounds matching [`box_lower_bound`]: foreground samples lie within
/// `|cos| + |sin|` of a projected set pixel.
fn box_upper_bound(rot: &Rotation, hull: &[(f64, f64)]) -> (f64, f64) {
    let d = rot.spread();
    projected_extent(rot, hull).map_or((0.0, 0.0), |(w, h)| (w + 2.0 * d + 1.0, h + 2.0 * d + 1.0))
}

fn tenths_to_deg(tenths: i32) -> f64 {
    tenths as f64 / 10.0
}

/// Finds the rotation whose tight box has minimal area among horizontal
/// poses (box width >= height). Ties go to the smallest angle.
pub fn orientation_search(img: &GrainImage, threshold: f64) -> Result<OrientationResult> {
    check_threshold(threshold)?;
    let t = threshold as f32;
    let (w, h) = (img.width(), img.height());
    let raw: Vec<bool> = img.pixels().iter().map(|&p| p > t).collect();
    let region = bbox_of(w, &raw).ok_or(Error::NoGrain)?;
    let poly = hull(&raw, w);
    let core_poly = hull(&erode(&raw, w, &region, 2), w);

    // score possibly horizontal angles in order of a lower bound on their box
    // area and stop once no remaining angle can enter the verified set
    let mut order: Vec<(f64, i32)> = Vec::with_capacity(HALF_TURN_TENTHS as usize);
    for tenths in 0..HALF_TURN_TENTHS {
        let rot = Rotation::new(w, h, tenths_to_deg(tenths));
        let (lw, lh) = box_lower_bound(&rot, &core_poly);
        let (uw, _) = box_upper_bound(&rot, &poly);
        if uw >= lh {
            order.push((lw * lh, tenths));
        }
    }
    order.sort_by(|a, b| a.partial_cmp(b).expect("finite"));

    let mut proj = Vec::with_capacity(poly.len());
    let mut scored = Vec::new();
    let mut horizontal_areas = Vec::new();
    let mut score = |tenths: i32, scored: &mut Vec<_>| {
        let rot = Rotation::new(w, h, tenths_to_deg(tenths));
        let window = foreground_box(img, &rot, &poly, &mut proj, t)?;
        let (l, t0, r, b) = window;
        let (bw, bh) = (r + 1 - l, b + 1 - t0);
        scored.push((bw < bh, bw * bh, tenths, window));
        Some((bw >= bh, bw * bh))
    };
    for &(bound, tenths) in &order {
        if horizontal_areas.len() >= VERIFY_COUNT
            && bound > horizontal_areas[VERIFY_COUNT - 1] as f64
        {
            break;
        }
        if let Some((true, area)) = score(tenths, &mut scored) {
            let at = horizontal_areas.partition_point(|&a| a <= area);
            horizontal_areas.insert(at, area);
        }
    }
    if horizontal_areas.is_empty() {
        scored.clear();
        for tenths in 0..HALF_TURN_TENTHS {
            score(tenths, &mut scored);
        }
    }
    // horizontal first, then area, then angle
    scored.sort_unstable_by_key(|s| (s.0, s.1, s.2));

    let mut evaluations = 0;
    let mut best_horizontal: Option<(usize, i32, AlignedBox)> = None;
    let mut best_any: Option<(usize, i32, AlignedBox)> = None;
    for &(_, _, tenths, window) in scored.iter().take(VERIFY_COUNT) {
        let rot = Rotation::new(w, h, tenths_to_deg(tenths));
        let Some(bbox) = measure_in(img, &rot, window, t) else {
            continue;
        };
        evaluations += 1;
        let key = (bbox.area(), tenths);
        if best_any.is_none_or(|b| key < (b.0, b.1)) {
            best_any = Some((key.0, key.1, bbox));
        }
        if bbox.width() >= bbox.height() && best_horizontal.is_none_or(|b| key < (b.0, b.1)) {
            best_horizontal = Some((key.0, key.1, bbox));
        }
    }

    let (_, tenths, bbox) = match best_horizontal {
        Some(b) => b,
        None => {
            let (_, tenths, _) = best_any.ok_or(Error::NoGrain)?;
            let turned = (tenths + QUARTER_TURN_TENTHS).rem_euclid(HALF_TURN_TENTHS);
            evaluations += 1;
            let bbox = measure(img, &region, tenths_to_deg(turned), t).ok_or(Error::NoGrain)?;
            (bbox.area(), turned, bbox)
        }
    };
    Ok(OrientationResult {
        angle: tenths_to_deg(tenths),
        bbox,
        evaluations,
    })
}

pub fn normalize_orientation(img: &GrainImage) -> Result<(GrainImage, AlignedBox)> {
    normalize_orientation_with(img, DEFAULT_THRESHOLD)
}

/// Rotates the grain onto its minimal-area horizontal pose and returns the
/// rotated image with its tight box.
pub fn normalize_orientation_with(
    img: &GrainImage,
    threshold: f64,
) -> Result<(GrainImage, AlignedBox)> {
    let found = orientation_search(img, threshold)?;
    let out = rotate(img, found.angle);
    let mut bbox = tight_bbox(&segment(&out, threshold)?)?;
    bbox.rotation_applied = found.angle;
    debug_assert_eq!(bbox, found.bbox);
    Ok((out, bbox))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::{ellipse, rect};
    use super::*;

    fn circular_gap(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(180.0);
        d.min(180.0 - d)
    }

    #[test]
    fn windowed_box_matches_full_rotation() {
        let img = ellipse(90, 70, 50.0, 20.0, 37.0);
        for angle in [0.0, 12.3, 53.0, 90.0, 127.9, 179.9] {
            let full = tight_bbox(&segment(&rotate(&img, angle), 0.1).unwrap()).unwrap();
            let fast = box_at_angle(&img, angle, 0.1).unwrap();
            assert_eq!(
                (full.left, full.top, full.right, full.bottom),
                (fast.left, fast.top, fast.right, fast.bottom),
                "angle {angle}"
            );
        }
    }

    #[test]
    fn strip_scan_matches_full_foreground_box() {
        let mut img = ellipse(90, 80, 60.0, 22.0, 21.0);
        // a detached speck must widen the all-foreground box
        img.set(80, 5, 0.9);
        let raw: Vec<bool> = img.pixels().iter().map(|&p| p > 0.1).collect();
        let poly = hull(&raw, img.width());
        let mut proj = Vec::new();
        for tenths in (0..1800).step_by(37) {
            let angle = tenths_to_deg(tenths);
            let full = rotate(&img, angle);
            let bits: Vec<bool> = full.pixels().iter().map(|&p| p > 0.1).collect();
            let expect = bbox_of(full.width(), &bits).unwrap();
            let rot = Rotation::new(img.width(), img.height(), angle);
            let got = foreground_box(&img, &rot, &poly, &mut proj, 0.1).unwrap();
            assert_eq!(got, (expect.left, expect.top, expect.right, expect.bottom), "{angle}");
        }
    }

    #[test]
    fn horizontal_ellipse_is_left_alone() {
        let img = ellipse(140, 140, 100.0, 40.0, 0.0);
        let (out, bbox) = normalize_orientation(&img).unwrap();
        assert_eq!(bbox.rotation_applied, 0.0);
        assert_eq!(out.pixels(), img.pixels());
    }

    #[test]
    fn rotated_ellipse_is_recovered() {
        let img = ellipse(160, 160, 100.0, 40.0, 30.0);
        let (_, bbox) = normalize_orientation(&img).unwrap();
        assert!((bbox.width() as i64 - 100).abs() <= 2, "{bbox:?}");
        assert!((bbox.height() as i64 - 40).abs() <= 2, "{bbox:?}");
        // undoing a 30 degree counterclockwise tilt; the box area is flat near
        // the optimum, so the angle is only loosely pinned
        assert!(circular_gap(bbox.rotation_applied, 150.0) <= 3.0, "{bbox:?}");
    }

    #[test]
    fn vertical_grain_is_laid_flat() {
        let img = rect(40, 60, 15, 5, 10, 50);
        let (out, bbox) = normalize_orientation(&img).unwrap();
        assert_eq!(bbox.rotation_applied, 90.0);
        assert_eq!((bbox.width(), bbox.height()), (50, 10));
        assert_eq!((out.width(), out.height()), (60, 40));
    }

    #[test]
    fn result_never_worse_than_input() {
        for angle in [0.0, 10.0, 44.0, 71.0, 90.0, 135.0] {
            let img = ellipse(120, 120, 70.0, 30.0, angle);
            let input = tight_bbox(&segment(&img, 0.1).unwrap()).unwrap();
            let (_, out) = normalize_orientation(&img).unwrap();
            assert!(out.area() <= input.area(), "{angle}: {out:?} vs {input:?}");
            assert!(out.width() >= out.height());
        }
    }

    #[test]
    fn renormalizing_is_stable() {
        let img = ellipse(150, 150, 90.0, 35.0, 62.0);
        let (once, a) = normalize_orientation(&img).unwrap();
        let (_, b) = normalize_orientation(&once).unwrap();
        assert!(circular_gap(b.rotation_applied, 0.0) <= 0.5, "{b:?}");
        assert!((a.width() as i64 - b.width() as i64).abs() <= 2);
        assert!((a.height() as i64 - b.height() as i64).abs() <= 2);
    }

    #[test]
    fn black_image_propagates_no_grain() {
        let img = GrainImage::black(32, 32).unwrap();
        assert!(matches!(normalize_orientation(&img), Err(Error::NoGrain)));
    }
}
