//! Fixed filter-bank feature pyramid and group-wise correlation.
//!
//! Each pyramid level carries 32 channels split into 8 groups of 4:
//!
//! | group | channels |
//! |-------|----------|
//! | 0 | intensity, Gaussian σ=1, Gaussian σ=2, local std (5x5) |
//! | 1 | d/dx σ=1, d/dy σ=1, d/dx σ=2, d/dy σ=2 |
//! | 2-3 | soft census, 8 directions at distance 1 |
//! | 4-5 | soft census, 8 directions at distance 2 |
//! | 6-7 | soft census, 8 directions at distance 3 |
//!
//! Every channel is standardized to zero mean and unit variance per level;
//! constant channels are left at zero.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::grid::{Grid, ValidityMask};

pub const FEATURE_CHANNELS: usize = 32;
pub const DEFAULT_GROUPS: usize = 8;
/// Pyramid scales relative to the input image, coarsest first.
pub const PYRAMID_SCALES: [f64; 3] = [0.25, 0.5, 1.0];

const SMOOTH_SIGMAS: [f64; 2] = [0.7, 1.4];
const LOCAL_STD_RADIUS: usize = 2;
const CENSUS_DISTANCES: [isize; 3] = [1, 2, 3];
const CENSUS_SOFTNESS: f64 = 0.5;
const CENSUS_DIRECTIONS: [(isize, isize); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// `H x W x C` feature raster, channels contiguous per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    scale: f64,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        scale: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || data.len() != width * height * channels {
            return Err(Error::config(format!(
                "feature data has {} values, expected {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            scale,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// One channel as a grid.
    pub fn channel(&self, ch: usize) -> Grid<f64> {
        Grid::from_fn(self.width, self.height, |x, y| self.pixel(x, y)[ch])
    }

    pub fn scaled_by(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// `H x W x N_c` correlation map for one depth hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMap {
    width: usize,
    height: usize,
    groups: usize,
    data: Vec<f64>,
}

impl CostMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.groups;
        &self.data[start..start + self.groups]
    }
}

/// Luma conversion with weights 0.299 / 0.587 / 0.114, output in `[0, 1]`.
pub fn luma(image: &RgbImage) -> Grid<f64> {
    Grid::from_fn(image.width() as usize, image.height() as usize, |x, y| {
        let p = image.get_pixel(x as u32, y as u32).0;
        (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
    })
}

/// Area-average downsampling by an integer factor.
pub fn downsample_area(image: &Grid<f64>, factor: usize) -> Grid<f64> {
    if factor == 1 {
        return image.clone();
    }
    let (w, h) = (image.width() / factor, image.height() / factor);
    let norm = 1.0 / (factor * factor) as f64;
    Grid::from_fn(w, h, |x, y| {
        let mut sum = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                sum += image.get(x * factor + dx, y * factor + dy);
            }
        }
        sum * norm
    })
}

/// Builds the three-level feature pyramid (scales 1/4, 1/2, 1).
pub fn extract_pyramid(image: &Grid<f64>) -> Result<[FeatureMap; 3]> {
    if !image.width().is_multiple_of(4) || !image.height().is_multiple_of(4) || image.is_empty() {
        return Err(Error::config(format!(
            "image dimensions {}x{} must be positive multiples of 4",
            image.width(),
            image.height()
        )));
    }
    Ok([4usize, 2, 1].map(|factor| {
        let level = downsample_area(image, factor);
        let mut fm = filter_bank(&level, 1.0 / factor as f64);
        standardize_channels(&mut fm);
        fm
    }))
}

/// Raw (unstandardized) filter responses of one level.
pub fn filter_bank(level: &Grid<f64>, scale: f64) -> FeatureMap {
    let (w, h) = level.dims();
    let intensity = standardized(level);
    let mut planes: Vec<Grid<f64>> = Vec::with_capacity(FEATURE_CHANNELS);

    planes.push(intensity.clone());
    for sigma in SMOOTH_SIGMAS {
        let g = gaussian_kernel(sigma);
        planes.push(convolve_cols(&convolve_rows(&intensity, &g), &g));
    }
    planes.push(local_std(&intensity, LOCAL_STD_RADIUS));
    for sigma in SMOOTH_SIGMAS {
        let g = gaussian_kernel(sigma);
        let dg = derivative_kernel(sigma);
        planes.push(convolve_cols(&convolve_rows(&intensity, &dg), &g));
        planes.push(convolve_cols(&convolve_rows(&intensity, &g), &dg));
    }
    for dist in CENSUS_DISTANCES {
        for (dx, dy) in CENSUS_DIRECTIONS {
            planes.push(Grid::from_fn(w, h, |x, y| {
                let nx = (x as isize + dx * dist).clamp(0, w as isize - 1) as usize;
                let ny = (y as isize + dy * dist).clamp(0, h as isize - 1) as usize;
                ((intensity.get(nx, ny) - intensity.get(x, y)) / CENSUS_SOFTNESS).tanh()
            }));
        }
    }
    debug_assert_eq!(planes.len(), FEATURE_CHANNELS);

    let mut data = Vec::with_capacity(w * h * FEATURE_CHANNELS);
    for p in 0..w * h {
        data.extend(planes.iter().map(|plane| plane.as_slice()[p]));
    }
    FeatureMap {
        width: w,
        height: h,
        channels: FEATURE_CHANNELS,
        scale,
        data,
    }
}

fn standardized(image: &Grid<f64>) -> Grid<f64> {
    let (mean, std) = moments(image.as_slice().iter().copied());
    image.map(|v| if std > 0.0 { (v - mean) / std } else { 0.0 })
}

fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    // relative floor: a channel that is constant up to rounding stays zero
    let scale = mean.abs().max(1.0);
    if var.sqrt() <= 1e-12 * scale {
        (mean, 0.0)
    } else {
        (mean, var.sqrt())
    }
}

/// Per-channel zero-mean / unit-variance normalization in place.
pub fn standardize_channels(fm: &mut FeatureMap) {
    let c = fm.channels;
    for ch in 0..c {
        let column = fm.data.iter().skip(ch).step_by(c).copied();
        let (mean, std) = moments(column);
        for v in fm.data.iter_mut().skip(ch).step_by(c) {
            *v = if std > 0.0 { (*v - mean) / std } else { 0.0 };
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Derivative-of-Gaussian taps, normalized so a unit ramp responds with exactly 1.
fn derivative_kernel(sigma: f64) -> Vec<f64> {
    let g = gaussian_kernel(sigma);
    let r = (g.len() / 2) as isize;
    let raw: Vec<f64> = (-r..=r).zip(&g).map(|(i, gv)| i as f64 * gv).collect();
    let norm: f64 = (-r..=r).zip(&raw).map(|(i, v)| i as f64 * v).sum();
    raw.into_iter().map(|v| v / norm).collect()
}

/// `out(x) = sum_k in(x + k) * kernel[k + r]`, clamping at the borders.
fn convolve_rows(image: &Grid<f64>, kernel: &[f64]) -> Grid<f64> {
    let (w, h) = image.dims();
    let r = (kernel.len() / 2) as isize;
    Grid::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let sx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                k * image.get(sx, y)
            })
            .sum()
    })
}

fn convolve_cols(image: &Grid<f64>, kernel: &[f64]) -> Grid<f64> {
    let (w, h) = image.dims();
    let r = (kernel.len() / 2) as isize;
    Grid::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                k * image.get(x, sy)
            })
            .sum()
    })
}

fn local_std(image: &Grid<f64>, radius: usize) -> Grid<f64> {
    let (w, h) = image.dims();
    let box_k = vec![1.0 / (2 * radius + 1) as f64; 2 * radius + 1];
    let mean = convolve_cols(&convolve_rows(image, &box_k), &box_k);
    let sq = image.map(|v| v * v);
    let mean_sq = convolve_cols(&convolve_rows(&sq, &box_k), &box_k);
    Grid::from_fn(w, h, |x, y| {
        let m = mean.get(x, y);
        let var = mean_sq.get(x, y) - m * m;
        // rounding noise on flat regions
        if var > 1e-12 {
            var.sqrt()
        } else {
            0.0
        }
    })
}

/// Correlation of one pixel: group `g` receives the mean of `a_c * b_c` over its channels.
#[inline]
pub(crate) fn correlate_pixel(a: &[f64], b: &[f64], groups: usize, out: &mut [f64]) {
    let per_group = a.len() / groups;
    let norm = 1.0 / per_group as f64;
    for (g, slot) in out.iter_mut().enumerate().take(groups) {
        let range = g * per_group..(g + 1) * per_group;
        let dot: f64 = a[range.clone()]
            .iter()
            .zip(&b[range])
            .map(|(x, y)| x * y)
            .sum();
        *slot = dot * norm;
    }
}

/// Group-wise correlation; masked-out pixels produce 0 in every group.
pub fn groupwise_correlation(
    reference: &FeatureMap,
    warped_src: &FeatureMap,
    mask: &ValidityMask,
    groups: usize,
) -> Result<CostMap> {
    if reference.width != warped_src.width
        || reference.height != warped_src.height
        || reference.channels != warped_src.channels
    {
        return Err(Error::config("correlation inputs differ in shape"));
    }
    if mask.dims() != (reference.width, reference.height) {
        return Err(Error::config("correlation mask differs in shape"));
    }
    if groups == 0 || !reference.channels.is_multiple_of(groups) {
        return Err(Error::config(format!(
            "{} channels cannot be split into {groups} groups",
            reference.channels
        )));
    }
    let c = reference.channels;
    let n = reference.width * reference.height;
    let mut data = vec![0.0; n * groups];
    for p in 0..n {
        if mask.as_slice()[p] {
            correlate_pixel(
                &reference.data[p * c..(p + 1) * c],
                &warped_src.data[p * c..(p + 1) * c],
                groups,
                &mut data[p * groups..(p + 1) * groups],
            );
        }
    }
    Ok(CostMap {
        width: reference.width,
        height: reference.height,
        groups,
        data,
    })
}
