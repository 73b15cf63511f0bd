//! Per-pair cost volumes and the joint depth / uncertainty read-out.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{correlate_pixel, FeatureMap};
use crate::geometry::{sample_bilinear, CameraModel, DepthHypotheses, PixelTransfer};
use crate::grid::{Grid, ValidityMask};

/// Clamp applied inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

/// `N_d x H x W x N_c` volume. Slice `j` holds hypothesis `j` of every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    hypotheses: DepthHypotheses,
    width: usize,
    height: usize,
    groups: usize,
    data: Vec<f64>,
    validity: Vec<bool>,
}

impl CostVolume {
    /// `data` is indexed `[(j * H * W + p) * groups + g]`, `validity` `[j * H * W + p]`.
    pub fn new(
        hypotheses: DepthHypotheses,
        width: usize,
        height: usize,
        groups: usize,
        data: Vec<f64>,
        validity: Vec<bool>,
    ) -> Result<Self> {
        let cells = hypotheses.count() * width * height;
        if groups == 0 || data.len() != cells * groups || validity.len() != cells {
            return Err(Error::config(
                "cost volume buffers have inconsistent lengths",
            ));
        }
        hypotheses.check_dims(width, height)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("cost volume contains non-finite values"));
        }
        Ok(Self {
            hypotheses,
            width,
            height,
            groups,
            data,
            validity,
        })
    }

    pub fn hypotheses(&self) -> &DepthHypotheses {
        &self.hypotheses
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn depth_count(&self) -> usize {
        self.hypotheses.count()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.validity
    }

    #[inline]
    pub fn value(&self, j: usize, pixel: usize, group: usize) -> f64 {
        self.data[(j * self.width * self.height + pixel) * self.groups + group]
    }

    #[inline]
    pub fn is_valid(&self, j: usize, pixel: usize) -> bool {
        self.validity[j * self.width * self.height + pixel]
    }

    pub(crate) fn same_shape(&self, other: &CostVolume) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.groups == other.groups
            && self.hypotheses == other.hypotheses
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> CostVolume {
        CostVolume {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Per-pixel distribution over depth hypotheses, indexed `[j * H * W + p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVolume {
    hypotheses: DepthHypotheses,
    width: usize,
    height: usize,
    data: Vec<f64>,
    validity: ValidityMask,
}

impl ProbabilityVolume {
    pub fn new(
        hypotheses: DepthHypotheses,
        width: usize,
        height: usize,
        data: Vec<f64>,
        validity: ValidityMask,
    ) -> Result<Self> {
        let n = width * height;
        if data.len() != hypotheses.count() * n || validity.dims() != (width, height) {
            return Err(Error::config(
                "probability volume buffers have inconsistent lengths",
            ));
        }
        hypotheses.check_dims(width, height)?;
        if data.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::config(
                "probabilities must be finite and non-negative",
            ));
        }
        Ok(Self {
            hypotheses,
            width,
            height,
            data,
            validity,
        })
    }

    pub fn hypotheses(&self) -> &DepthHypotheses {
        &self.hypotheses
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth_count(&self) -> usize {
        self.hypotheses.count()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn validity(&self) -> &ValidityMask {
        &self.validity
    }

    #[inline]
    pub fn prob(&self, j: usize, pixel: usize) -> f64 {
        self.data[j * self.width * self.height + pixel]
    }

    /// Distribution of one pixel, copied out of the slice-major layout.
    pub fn distribution(&self, pixel: usize) -> Vec<f64> {
        (0..self.depth_count())
            .map(|j| self.prob(j, pixel))
            .collect()
    }
}

/// Depth, entropy and log-uncertainty maps read out of one probability volume.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthEstimate {
    pub depth: Grid<f64>,
    pub log_uncertainty: Grid<f64>,
    pub entropy: Grid<f64>,
    pub validity: ValidityMask,
}

/// Separable smoothing radii.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub spatial_radius: usize,
    pub depth_radius: usize,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            spatial_radius: 2,
            depth_radius: 1,
        }
    }
}

/// Parameters of the monotone entropy-to-log-uncertainty map `S = a * H / ln N_d + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuParams {
    pub a: f64,
    pub b: f64,
}

impl Default for FuParams {
    fn default() -> Self {
        Self { a: 3.5, b: 1.0 }
    }
}

impl FuParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0) || !self.b.is_finite() || !self.a.is_finite() {
            return Err(Error::config(format!(
                "uncertainty slope must be finite and non-negative (a = {}, b = {})",
                self.a, self.b
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, normalized_entropy: f64) -> f64 {
        self.a * normalized_entropy + self.b
    }
}

/// Sweeps `src_fm` across every hypothesis and correlates it with `ref_fm`.
///
/// Cameras must already be at the feature maps' resolution.
pub fn build_pair_volume(
    ref_fm: &FeatureMap,
    src_fm: &FeatureMap,
    ref_cam: &CameraModel,
    src_cam: &CameraModel,
    hypotheses: &DepthHypotheses,
    groups: usize,
) -> Result<CostVolume> {
    if (ref_fm.width(), ref_fm.height()) != (ref_cam.width(), ref_cam.height())
        || (src_fm.width(), src_fm.height()) != (src_cam.width(), src_cam.height())
    {
        return Err(Error::config("feature maps do not match their cameras"));
    }
    if ref_fm.channels() != src_fm.channels() {
        return Err(Error::config("feature maps differ in channel count"));
    }
    if groups == 0 || !ref_fm.channels().is_multiple_of(groups) {
        return Err(Error::config(format!(
            "{} channels cannot be split into {groups} groups",
            ref_fm.channels()
        )));
    }
    let (w, h) = (ref_cam.width(), ref_cam.height());
    hypotheses.check_dims(w, h)?;
    let n = w * h;
    let c = ref_fm.channels();
    let nd = hypotheses.count();
    let transfer = PixelTransfer::new(ref_cam, src_cam)?;

    let mut data = vec![0.0; nd * n * groups];
    let mut validity = vec![false; nd * n];
    data.par_chunks_mut(n * groups)
        .zip(validity.par_chunks_mut(n))
        .enumerate()
        .for_each(|(j, (slice, valid))| {
            let mut sample = vec![0.0; c];
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let d = hypotheses.at(p)[j];
                    if let Some((su, sv)) = transfer.transfer(x as f64, y as f64, d) {
                        sample_bilinear(src_fm, su, sv, &mut sample);
                        correlate_pixel(
                            ref_fm.pixel(x, y),
                            &sample,
                            groups,
                            &mut slice[p * groups..(p + 1) * groups],
                        );
                        valid[p] = true;
                    }
                }
            }
        });
    CostVolume::new(hypotheses.clone(), w, h, groups, data, validity)
}

/// Unnormalized box sum of radius `r` along rows then columns, zero outside.
fn box_sum_2d(plane: &[f64], w: usize, h: usize, r: usize, out: &mut [f64]) {
    if r == 0 {
        out.copy_from_slice(plane);
        return;
    }
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        let mut acc: f64 = row[..r.min(w - 1) + 1].iter().sum();
        for x in 0..w {
            tmp[y * w + x] = acc;
            if x + r + 1 < w {
                acc += row[x + r + 1];
            }
            if x >= r {
                acc -= row[x - r];
            }
        }
    }
    for x in 0..w {
        let mut acc: f64 = (0..=r.min(h - 1)).map(|y| tmp[y * w + x]).sum();
        for y in 0..h {
            out[y * w + x] = acc;
            if y + r + 1 < h {
                acc += tmp[(y + r + 1) * w + x];
            }
            if y >= r {
                acc -= tmp[(y - r) * w + x];
            }
        }
    }
}

/// Reduces groups to their mean, then applies masked separable smoothing:
/// a spatial box of radius `r_s` per slice and a depth-axis triangle of radius `r_d`.
///
/// Smoothing is normalized over valid cells only, so the result at a valid
/// cell is a weighted mean of valid neighbors; invalid cells stay invalid (0).
pub fn regularize_pair(vol: &CostVolume, smoothing: SmoothingParams) -> Result<CostVolume> {
    let (w, h, g) = (vol.width, vol.height, vol.groups);
    let n = w * h;
    let nd = vol.depth_count();

    let mut num = vec![0.0; nd * n];
    let mut den = vec![0.0; nd * n];
    for cell in 0..nd * n {
        if vol.validity[cell] {
            let groups = &vol.data[cell * g..(cell + 1) * g];
            num[cell] = groups.iter().sum::<f64>() / g as f64;
            den[cell] = 1.0;
        }
    }

    let r = smoothing.spatial_radius;
    let spatial = |planes: &mut Vec<f64>| {
        let mut out = vec![0.0; nd * n];
        out.par_chunks_mut(n)
            .zip(planes.par_chunks(n))
            .for_each(|(o, p)| box_sum_2d(p, w, h, r, o));
        *planes = out;
    };
    spatial(&mut num);
    spatial(&mut den);

    let rd = smoothing.depth_radius as isize;
    let depth = |planes: &[f64]| -> Vec<f64> {
        if rd == 0 {
            return planes.to_vec();
        }
        let mut out = vec![0.0; nd * n];
        out.par_chunks_mut(n).enumerate().for_each(|(j, o)| {
            for dj in -rd..=rd {
                let k = j as isize + dj;
                if k < 0 || k >= nd as isize {
                    continue;
                }
                let weight = (rd + 1 - dj.abs()) as f64;
                let src = &planes[k as usize * n..(k as usize + 1) * n];
                for (a, b) in o.iter_mut().zip(src) {
                    *a += weight * b;
                }
            }
        });
        out
    };
    let num = depth(&num);
    let den = depth(&den);

    let data = (0..nd * n)
        .map(|cell| {
            if vol.validity[cell] {
                num[cell] / den[cell]
            } else {
                0.0
            }
        })
        .collect();
    CostVolume::new(vol.hypotheses.clone(), w, h, 1, data, vol.validity.clone())
}

/// Per-pixel softmax of `latent / temperature` over valid hypotheses.
///
/// Invalid hypotheses receive zero mass. A pixel with no valid hypothesis gets
/// a uniform distribution and is flagged invalid.
pub fn to_probability(latent: &CostVolume, temperature: f64) -> Result<ProbabilityVolume> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::config(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if latent.groups != 1 {
        return Err(Error::config(
            "softmax expects a single-group latent volume",
        ));
    }
    let (w, h) = (latent.width, latent.height);
    let n = w * h;
    let nd = latent.depth_count();
    let mut data = vec![0.0; nd * n];
    let mut validity = vec![false; n];

    // per-pixel work: gather, normalize, scatter
    let columns: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut best = f64::NEG_INFINITY;
            for j in 0..nd {
                if latent.is_valid(j, p) {
                    best = best.max(latent.value(j, p, 0) / temperature);
                }
            }
            if best == f64::NEG_INFINITY {
                return (vec![1.0 / nd as f64; nd], false);
            }
            let mut col: Vec<f64> = (0..nd)
                .map(|j| {
                    if latent.is_valid(j, p) {
                        (latent.value(j, p, 0) / temperature - best).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let sum: f64 = col.iter().sum();
            col.iter_mut().for_each(|v| *v /= sum);
            (col, true)
        })
        .collect();
    for (p, (col, valid)) in columns.into_iter().enumerate() {
        validity[p] = valid;
        for (j, v) in col.into_iter().enumerate() {
            data[j * n + p] = v;
        }
    }
    ProbabilityVolume::new(
        latent.hypotheses.clone(),
        w,
        h,
        data,
        Grid::from_vec(w, h, validity)?,
    )
}

/// Expected depth under each pixel's distribution.
pub fn soft_argmax(p: &ProbabilityVolume) -> Grid<f64> {
    let n = p.width * p.height;
    let nd = p.depth_count();
    let depth = (0..n)
        .map(|px| {
            let hyps = p.hypotheses.at(px);
            (0..nd).map(|j| hyps[j] * p.data[j * n + px]).sum()
        })
        .collect();
    Grid::from_vec(p.width, p.height, depth).expect("dimensions follow the volume")
}

/// Shannon entropy (nats) of each pixel's distribution; `0 log 0 = 0`.
pub fn entropy_map(p: &ProbabilityVolume) -> Grid<f64> {
    let n = p.width * p.height;
    let nd = p.depth_count();
    let entropy = (0..n)
        .map(|px| {
            (0..nd)
                .map(|j| {
                    let v = p.data[j * n + px];
                    -v * v.max(LOG_EPS).ln()
                })
                .sum::<f64>()
                .max(0.0)
        })
        .collect();
    Grid::from_vec(p.width, p.height, entropy).expect("dimensions follow the volume")
}

/// Log-uncertainty `S = a * H / ln(N_d) + b`.
pub fn uncertainty_from_entropy(
    entropy: &Grid<f64>,
    n_hypotheses: usize,
    params: FuParams,
) -> Result<Grid<f64>> {
    params.validate()?;
    if n_hypotheses < 2 {
        return Err(Error::InvalidCount(n_hypotheses));
    }
    let max_entropy = (n_hypotheses as f64).ln();
    Ok(entropy.map(|&hv| params.apply(hv / max_entropy)))
}

/// Depth, entropy and log-uncertainty of a probability volume.
pub fn read_out(p: &ProbabilityVolume, fu: FuParams) -> Result<DepthEstimate> {
    let depth = soft_argmax(p);
    let entropy = entropy_map(p);
    let log_uncertainty = uncertainty_from_entropy(&entropy, p.depth_count().max(2), fu)?;
    Ok(DepthEstimate {
        depth,
        log_uncertainty,
        entropy,
        validity: p.validity.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::uniform_hypotheses;

    fn volume_from(nd: usize, w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> CostVolume {
        let hyps = uniform_hypotheses(1.0, nd as f64, nd).unwrap();
        let data = (0..nd * w * h)
            .map(|cell| f(cell / (w * h), cell % (w * h)))
            .collect();
        CostVolume::new(hyps, w, h, 1, data, vec![true; nd * w * h]).unwrap()
    }

    fn prob_from(columns: &[Vec<f64>], hyps: Vec<f64>) -> ProbabilityVolume {
        let n = columns.len();
        let nd = hyps.len();
        let mut data = vec![0.0; nd * n];
        for (p, col) in columns.iter().enumerate() {
            for (j, v) in col.iter().enumerate() {
                data[j * n + p] = *v;
            }
        }
        ProbabilityVolume::new(
            DepthHypotheses::uniform(hyps).unwrap(),
            n,
            1,
            data,
            Grid::filled(n, 1, true),
        )
        .unwrap()
    }

    #[test]
    fn constant_volume_is_smoothing_fixed_point() {
        let vol = volume_from(5, 7, 6, |_, _| 0.3);
        let out = regularize_pair(&vol, SmoothingParams::default()).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn impulse_matches_dense_convolution() {
        let (nd, w, h) = (6, 9, 8);
        let params = SmoothingParams {
            spatial_radius: 2,
            depth_radius: 1,
        };
        let vol = volume_from(
            nd,
            w,
            h,
            |j, p| if j == 2 && p == 3 * w + 1 { 1.0 } else { 0.0 },
        );
        let out = regularize_pair(&vol, params).unwrap();
        // dense oracle: normalized 3-D convolution with box x box x triangle weights
        for j in 0..nd {
            for y in 0..h {
                for x in 0..w {
                    let (mut num, mut den) = (0.0, 0.0);
                    for k in 0..nd {
                        for yy in 0..h {
                            for xx in 0..w {
                                let dj = (k as isize - j as isize).abs();
                                let dx = (xx as isize - x as isize).abs();
                                let dy = (yy as isize - y as isize).abs();
                                if dj > 1 || dx > 2 || dy > 2 {
                                    continue;
                                }
                                let wgt = (2 - dj) as f64;
                                let v = vol.value(k, yy * w + xx, 0);
                                num += wgt * v;
                                den += wgt;
                            }
                        }
                    }
                    let got = out.value(j, y * w + x, 0);
                    assert!((got - num / den).abs() < 1e-12, "({j},{x},{y})");
                }
            }
        }
    }

    #[test]
    fn zero_radii_reduce_groups_only() {
        let hyps = uniform_hypotheses(1.0, 1.0, 2).unwrap();
        let data = vec![1.0, 3.0, 2.0, 2.0, 0.0, 4.0, -1.0, 1.0];
        let vol = CostVolume::new(hyps, 2, 1, 2, data, vec![true; 4]).unwrap();
        let out = regularize_pair(
            &vol,
            SmoothingParams {
                spatial_radius: 0,
                depth_radius: 0,
            },
        )
        .unwrap();
        assert_eq!(out.groups(), 1);
        assert_eq!(out.data(), &[2.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        let vol = volume_from(4, 1, 1, |_, _| 0.7);
        let p = to_probability(&vol, 1.0).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let vol = volume_from(2, 1, 1, |j, _| if j == 0 { 1.0 } else { 0.0 });
        let p = to_probability(&vol, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.prob(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.prob(1, 0) - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((p.prob(0, 0) - 0.7311).abs() < 1e-4);

        assert!(matches!(to_probability(&vol, 0.0), Err(Error::Config(_))));
        assert!(matches!(to_probability(&vol, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn high_temperature_approaches_uniform() {
        let vol = volume_from(8, 1, 1, |j, _| (j as f64 * 1.7).sin() * 3.0);
        let p = to_probability(&vol, 1e6).unwrap();
        let kl: f64 = p.distribution(0).iter().map(|&q| q * (q * 8.0).ln()).sum();
        assert!(kl < 1e-4);
    }

    #[test]
    fn invalid_cells_get_no_mass() {
        let hyps = uniform_hypotheses(1.0, 1.0, 3).unwrap();
        let vol = CostVolume::new(
            hyps,
            2,
            1,
            1,
            vec![5.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            vec![false, false, true, false, true, false],
        )
        .unwrap();
        let p = to_probability(&vol, 1.0).unwrap();
        assert_eq!(p.prob(0, 0), 0.0);
        assert!((p.prob(1, 0) - 0.5).abs() < 1e-15);
        assert!(*p.validity().get(0, 0));
        assert!(!*p.validity().get(1, 0));
        assert!((p.distribution(1).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn soft_argmax_examples() {
        let p = prob_from(&[vec![0.0, 1.0, 0.0]], vec![1.0, 2.0, 3.0]);
        assert_eq!(*soft_argmax(&p).get(0, 0), 2.0);
        let p = prob_from(&[vec![0.5, 0.5]], vec![425.0, 905.0]);
        assert_eq!(*soft_argmax(&p).get(0, 0), 665.0);
    }

    #[test]
    fn entropy_examples() {
        let p = prob_from(&[vec![0.0, 1.0, 0.0]], vec![1.0, 2.0, 3.0]);
        assert_eq!(*entropy_map(&p).get(0, 0), 0.0);
        let uniform: Vec<f64> = vec![1.0 / 32.0; 32];
        let p = prob_from(&[uniform], (1..=32).map(|v| v as f64).collect());
        assert!((entropy_map(&p).get(0, 0) - 32f64.ln()).abs() < 1e-12);
        assert!((entropy_map(&p).get(0, 0) - 3.4657).abs() < 1e-4);
        let p = prob_from(&[vec![0.5, 0.25, 0.25]], vec![1.0, 2.0, 3.0]);
        assert!((entropy_map(&p).get(0, 0) - 1.5 * 2f64.ln()).abs() < 1e-12);
        assert!((entropy_map(&p).get(0, 0) - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn uncertainty_examples() {
        let n = 32;
        let h = Grid::from_vec(2, 1, vec![0.0, (n as f64).ln()]).unwrap();
        let s = uncertainty_from_entropy(&h, n, FuParams { a: 2.0, b: -1.0 }).unwrap();
        assert_eq!(*s.get(0, 0), -1.0);
        assert!((s.get(0, 0).exp() - 0.3679).abs() < 1e-4);
        assert!((s.get(1, 0) - 1.0).abs() < 1e-12);

        let flat = uncertainty_from_entropy(&h, n, FuParams { a: 0.0, b: 0.4 }).unwrap();
        assert!(flat.as_slice().iter().all(|&v| v == 0.4));

        assert!(matches!(
            uncertainty_from_entropy(&h, n, FuParams { a: -0.1, b: 0.0 }),
            Err(Error::Config(_))
        ));
    }
}
