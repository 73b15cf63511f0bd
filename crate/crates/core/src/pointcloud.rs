//! Depth-map filtering, median depth fusion and point-cloud assembly.

use image::RgbImage;
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::grid::{Grid, ValidityMask};
use crate::pairwise::ProbabilityVolume;

/// Half-width, in hypothesis indices, of the probability-map window.
const PROB_WINDOW: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub prob_thresholds: [f64; 3],
    pub min_consistent_views: usize,
    pub reproj_px: f64,
    pub rel_depth: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::dtu()
    }
}

impl FilterConfig {
    /// Thresholds used for object-scale captures.
    pub fn dtu() -> Self {
        Self {
            prob_thresholds: [0.6, 0.6, 0.6],
            min_consistent_views: 2,
            reproj_px: 1.0,
            rel_depth: 0.01,
        }
    }

    /// Stricter thresholds used for large outdoor/indoor scenes.
    pub fn tanks_and_temples() -> Self {
        Self {
            prob_thresholds: [0.8, 0.7, 0.8],
            min_consistent_views: 4,
            reproj_px: 1.0,
            rel_depth: 0.01,
        }
    }

    pub fn validate(&self, other_views: usize) -> Result<()> {
        if self
            .prob_thresholds
            .iter()
            .any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(Error::config("probability thresholds must lie in [0, 1]"));
        }
        if self.min_consistent_views > other_views {
            return Err(Error::config(format!(
                "need {} consistent views but only {other_views} other views exist",
                self.min_consistent_views
            )));
        }
        if !(self.reproj_px > 0.0) || !(self.rel_depth > 0.0) {
            return Err(Error::config("consistency thresholds must be positive"));
        }
        Ok(())
    }
}

/// Fractional position of `depth` in an increasing hypothesis list, clamped to the grid.
fn fractional_index(hyps: &[f64], depth: f64) -> f64 {
    let n = hyps.len();
    if n == 1 {
        return 0.0;
    }
    let seg = match hyps.iter().position(|&h| h > depth) {
        Some(0) => 0,
        Some(k) => k - 1,
        None => n - 2,
    };
    let idx = seg as f64 + (depth - hyps[seg]) / (hyps[seg + 1] - hyps[seg]);
    let idx = idx.clamp(0.0, (n - 1) as f64);
    // soft-argmax of a delta lands on the index up to rounding
    let rounded = idx.round();
    if (idx - rounded).abs() < 1e-9 {
        rounded
    } else {
        idx
    }
}

/// Probability mass within ±2 hypothesis indices of each pixel's depth.
pub fn probability_map(p: &ProbabilityVolume, depth: &Grid<f64>) -> Result<Grid<f64>> {
    if depth.dims() != (p.width(), p.height()) {
        return Err(Error::config("depth map does not match probability volume"));
    }
    let nd = p.depth_count();
    let values = depth
        .as_slice()
        .iter()
        .enumerate()
        .map(|(px, &d)| {
            let idx = fractional_index(p.hypotheses().at(px), d);
            let lo = (idx - PROB_WINDOW).ceil().max(0.0) as usize;
            let hi = ((idx + PROB_WINDOW).floor() as usize).min(nd - 1);
            (lo..=hi).map(|j| p.prob(j, px)).sum::<f64>().min(1.0)
        })
        .collect();
    Grid::from_vec(p.width(), p.height(), values)
}

/// Keeps valid pixels whose probability maps strictly exceed every stage threshold.
pub fn photometric_filter(
    prob_maps: [&Grid<f64>; 3],
    validity: &ValidityMask,
    thresholds: [f64; 3],
) -> Result<ValidityMask> {
    for m in prob_maps {
        validity.check_dims(m, "photometric filter")?;
    }
    Ok(Grid::from_fn(
        validity.width(),
        validity.height(),
        |x, y| {
            *validity.get(x, y)
                && prob_maps
                    .iter()
                    .zip(thresholds)
                    .all(|(m, t)| *m.get(x, y) > t)
        },
    ))
}

/// A depth map with its camera, as seen by the consistency check.
#[derive(Clone, Copy, Debug)]
pub struct DepthView<'a> {
    pub depth: &'a Grid<f64>,
    pub validity: &'a ValidityMask,
    pub camera: &'a CameraModel,
}

#[derive(Clone, Debug)]
pub struct GeometricCheck {
    pub mask: ValidityMask,
    pub consistent_views: Grid<usize>,
    /// Round-trip depths from the consistent views, per pixel (row-major).
    pub roundtrip_depths: Vec<Vec<f64>>,
}

/// Bilinear depth lookup that requires all four neighbors to be valid.
fn sample_depth(view: &DepthView<'_>, u: f64, v: f64) -> Option<f64> {
    let (w, h) = view.depth.dims();
    let x0 = (u.floor() as usize).min(w.saturating_sub(2));
    let y0 = (v.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)];
    if corners.iter().any(|&(x, y)| !*view.validity.get(x, y)) {
        return None;
    }
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let d = (1.0 - fx) * (1.0 - fy) * view.depth.get(x0, y0)
        + fx * (1.0 - fy) * view.depth.get(x1, y0)
        + (1.0 - fx) * fy * view.depth.get(x0, y1)
        + fx * fy * view.depth.get(x1, y1);
    (d > 0.0).then_some(d)
}

/// Reference-to-view-to-reference round trip of one pixel.
///
/// Returns the reprojected pixel error and the round-trip depth.
fn round_trip(
    reference: &DepthView<'_>,
    other: &DepthView<'_>,
    x: usize,
    y: usize,
) -> Option<(f64, f64)> {
    let pixel = Vector2::new(x as f64, y as f64);
    let d = *reference.depth.get(x, y);
    let world = reference.camera.backproject(&pixel, d).ok()?;
    let (proj, _) = other.camera.project(&world).ok()?;
    if !other.camera.in_bounds(&proj) {
        return None;
    }
    let other_depth = sample_depth(other, proj.x, proj.y)?;
    let back = other.camera.backproject(&proj, other_depth).ok()?;
    let (reproj, depth_back) = reference.camera.project(&back).ok()?;
    Some(((reproj - pixel).norm(), depth_back))
}

/// Counts, per reference pixel, the views whose depth agrees after a round trip.
pub fn geometric_filter(
    reference: &DepthView<'_>,
    others: &[DepthView<'_>],
    config: &FilterConfig,
) -> Result<GeometricCheck> {
    let (w, h) = reference.depth.dims();
    reference
        .depth
        .check_dims(reference.validity, "geometric filter")?;
    if (reference.camera.width(), reference.camera.height()) != (w, h) {
        return Err(Error::config(
            "reference depth map does not match its camera",
        ));
    }
    for o in others {
        if (o.camera.width(), o.camera.height()) != o.depth.dims() {
            return Err(Error::config("depth map does not match its camera"));
        }
    }
    let mut counts = Grid::filled(w, h, 0usize);
    let mut roundtrip = vec![Vec::new(); w * h];
    for y in 0..h {
        for x in 0..w {
            if !*reference.validity.get(x, y) {
                continue;
            }
            let d = *reference.depth.get(x, y);
            for other in others {
                if let Some((err, back)) = round_trip(reference, other, x, y) {
                    if err < config.reproj_px && (back - d).abs() / d < config.rel_depth {
                        *counts.get_mut(x, y) += 1;
                        roundtrip[y * w + x].push(back);
                    }
                }
            }
        }
    }
    let mask = Grid::from_fn(w, h, |x, y| {
        *reference.validity.get(x, y) && *counts.get(x, y) >= config.min_consistent_views
    });
    Ok(GeometricCheck {
        mask,
        consistent_views: counts,
        roundtrip_depths: roundtrip,
    })
}

/// Lower median (the `(n-1)/2`-th order statistic).
pub fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[(values.len() - 1) / 2]
}

/// Replaces each depth by the median of itself and its consistent round-trip depths.
pub fn median_fuse(reference: &Grid<f64>, roundtrip_depths: &[Vec<f64>]) -> Result<Grid<f64>> {
    if roundtrip_depths.len() != reference.len() {
        return Err(Error::config("round-trip lists do not match the depth map"));
    }
    let values = reference
        .as_slice()
        .iter()
        .zip(roundtrip_depths)
        .map(|(&d, others)| {
            let mut all = Vec::with_capacity(others.len() + 1);
            all.push(d);
            all.extend_from_slice(others);
            lower_median(&mut all)
        })
        .collect();
    Grid::from_vec(reference.width(), reference.height(), values)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: PointCloud) {
        match (&mut self.colors, other.colors) {
            (Some(mine), Some(theirs)) => mine.extend(theirs),
            (None, None) => {}
            (mine, theirs) => {
                // mixing colored and uncolored clouds: fill with white
                let own = mine
                    .take()
                    .unwrap_or_else(|| vec![[255; 3]; self.points.len()]);
                let add = theirs.unwrap_or_else(|| vec![[255; 3]; other.points.len()]);
                *mine = Some(own.into_iter().chain(add).collect());
            }
        }
        self.points.extend(other.points);
    }
}

/// Backprojects every surviving pixel; colors come from `image` when given.
pub fn cloud_from_depth(
    depth: &Grid<f64>,
    mask: &ValidityMask,
    camera: &CameraModel,
    image: Option<&RgbImage>,
) -> Result<PointCloud> {
    depth.check_dims(mask, "point export")?;
    if (camera.width(), camera.height()) != depth.dims() {
        return Err(Error::config("depth map does not match its camera"));
    }
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if !*mask.get(x, y) {
                continue;
            }
            let p: Vector3<f64> =
                camera.backproject(&Vector2::new(x as f64, y as f64), *depth.get(x, y))?;
            points.push([p.x as f32, p.y as f32, p.z as f32]);
            if let Some(img) = image {
                colors.push(img.get_pixel(x as u32, y as u32).0);
            }
        }
    }
    Ok(PointCloud {
        points,
        colors: image.map(|_| colors),
    })
}
