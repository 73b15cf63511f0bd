//! Three-stage coarse-to-fine inference.
//!
//! Stage 1 sweeps a fixed range `[d_min, d_min + 2Δd)` at 1/4 resolution.
//! Stages 2 and 3 run at 1/2 and full resolution and sweep a per-pixel range
//! `[D - w_k Δd, D + w_k Δd)` centered on the upsampled previous depth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_pyramid, FeatureMap, DEFAULT_GROUPS, PYRAMID_SCALES};
use crate::fusion::{fuse_volumes, regularize_fused, FusionStrategy};
use crate::geometry::{uniform_hypotheses, CameraModel, DepthHypotheses};
use crate::grid::{Grid, ValidityMask};
use crate::pairwise::{
    build_pair_volume, read_out, regularize_pair, to_probability, DepthEstimate, FuParams,
    ProbabilityVolume, SmoothingParams,
};
use crate::pointcloud::probability_map;

pub const STAGES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub n_hypotheses: usize,
    /// `w_k`; ignored for the first stage.
    pub range_scale: f64,
    pub smoothing: SmoothingParams,
    /// Softmax temperature of the pair-wise volumes.
    pub temperature: f64,
    /// Softmax temperature of the fused volume.
    pub fused_temperature: f64,
}

/// Everything the depth cascade needs besides the views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub d_min: f64,
    /// Half-width of the stage-1 range.
    pub delta: f64,
    pub stages: [StageConfig; STAGES],
    pub fusion: FusionStrategy,
    pub uncertainty: FuParams,
    pub groups: usize,
    /// Lower clamp for per-pixel ranges, as a fraction of `d_min`.
    pub floor_ratio: f64,
}

impl CascadeConfig {
    pub fn new(d_min: f64, delta: f64) -> Self {
        let stage = |k: usize, n, w| StageConfig {
            n_hypotheses: n,
            range_scale: w,
            smoothing: SmoothingParams::default(),
            temperature: DEFAULT_TEMPERATURES[k],
            fused_temperature: DEFAULT_FUSED_TEMPERATURES[k],
        };
        Self {
            d_min,
            delta,
            stages: [
                stage(0, 32, 1.0),
                stage(1, 16, 0.25),
                stage(2, 8, 1.0 / 16.0),
            ],
            fusion: FusionStrategy::VisWeighted,
            uncertainty: FuParams::default(),
            groups: DEFAULT_GROUPS,
            floor_ratio: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0) {
            return Err(Error::InvalidDepth(self.d_min));
        }
        if !(self.delta > 0.0) {
            return Err(Error::config("depth half-range must be positive"));
        }
        for (k, stage) in self.stages.iter().enumerate() {
            if stage.n_hypotheses < 2 {
                return Err(Error::InvalidCount(stage.n_hypotheses));
            }
            if k > 0 && !(stage.range_scale > 0.0 && stage.range_scale < 1.0) {
                return Err(Error::config(format!(
                    "stage {} range scale must lie in (0, 1), got {}",
                    k + 1,
                    stage.range_scale
                )));
            }
            if !(stage.temperature > 0.0 && stage.fused_temperature > 0.0) {
                return Err(Error::config("temperature must be positive"));
            }
        }
        if !(self.floor_ratio > 0.0) {
            return Err(Error::config("floor ratio must be positive"));
        }
        self.uncertainty.validate()
    }

    /// Hypothesis spacing of stage `k` (0-based).
    pub fn interval(&self, stage: usize) -> f64 {
        let cfg = &self.stages[stage];
        let width = if stage == 0 {
            2.0 * self.delta
        } else {
            2.0 * cfg.range_scale * self.delta
        };
        width / cfg.n_hypotheses as f64
    }

    /// Scene-level depth unit for normalized errors: the final-stage spacing.
    pub fn final_interval(&self) -> f64 {
        self.interval(STAGES - 1)
    }

    pub fn d_floor(&self) -> f64 {
        self.floor_ratio * self.d_min
    }
}

/// Pair-wise softmax temperatures per stage.
pub const DEFAULT_TEMPERATURES: [f64; STAGES] = [0.05, 0.05, 0.5];
/// Fused softmax temperatures per stage.
pub const DEFAULT_FUSED_TEMPERATURES: [f64; STAGES] = [0.05, 0.02, 0.01];

/// One calibrated image.
#[derive(Clone, Debug)]
pub struct View {
    /// Luma in `[0, 1]`.
    pub image: Grid<f64>,
    pub camera: CameraModel,
}

#[derive(Clone, Debug)]
pub struct StageResult {
    /// 0-based stage index.
    pub stage: usize,
    /// Reference camera at this stage's resolution.
    pub camera: CameraModel,
    /// Hypothesis spacing of this stage.
    pub interval: f64,
    pub final_estimate: DepthEstimate,
    pub pairs: Vec<DepthEstimate>,
    pub probability: ProbabilityVolume,
    pub probability_map: Grid<f64>,
}

/// `n` samples per pixel covering `[D - wΔd, D + wΔd)`, shifted up to start
/// no lower than `d_floor`.
pub fn per_pixel_hypotheses(
    prev_depth: &Grid<f64>,
    range_scale: f64,
    delta: f64,
    n: usize,
    d_floor: f64,
) -> Result<DepthHypotheses> {
    if n < 2 {
        return Err(Error::InvalidCount(n));
    }
    let half = range_scale * delta;
    let spacing = 2.0 * half / n as f64;
    let mut values = Vec::with_capacity(prev_depth.len() * n);
    for &d in prev_depth.as_slice() {
        let start = (d - half).max(d_floor);
        values.extend((0..n).map(|j| start + j as f64 * spacing));
    }
    DepthHypotheses::per_pixel(n, prev_depth.width(), prev_depth.height(), values)
}

/// 2x bilinear upsampling (pixel-center aligned, edge-clamped); validity by nearest neighbor.
pub fn upsample_depth(depth: &Grid<f64>, validity: &ValidityMask) -> (Grid<f64>, ValidityMask) {
    let (w, h) = depth.dims();
    let coord = |t: usize, len: usize| ((t as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
    let up = Grid::from_fn(2 * w, 2 * h, |x, y| {
        let (sx, sy) = (coord(x, w), coord(y, h));
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        (1.0 - fx) * (1.0 - fy) * depth.get(x0, y0)
            + fx * (1.0 - fy) * depth.get(x1, y0)
            + (1.0 - fx) * fy * depth.get(x0, y1)
            + fx * fy * depth.get(x1, y1)
    });
    let mask = Grid::from_fn(2 * w, 2 * h, |x, y| *validity.get(x / 2, y / 2));
    (up, mask)
}

struct PairOutput {
    latent: crate::pairwise::CostVolume,
    estimate: DepthEstimate,
}

/// Runs the full cascade for one reference view; returns the three stages in order.
pub fn infer_depth(
    reference: &View,
    sources: &[View],
    config: &CascadeConfig,
) -> Result<Vec<StageResult>> {
    config.validate()?;
    if sources.is_empty() {
        return Err(Error::config("at least one source view is required"));
    }
    for view in std::iter::once(reference).chain(sources) {
        if view.image.dims() != (view.camera.width(), view.camera.height()) {
            return Err(Error::config(format!(
                "image is {}x{} but its camera is {}x{}",
                view.image.width(),
                view.image.height(),
                view.camera.width(),
                view.camera.height()
            )));
        }
    }

    let views: Vec<&View> = std::iter::once(reference).chain(sources).collect();
    let pyramids: Vec<[FeatureMap; 3]> = views
        .par_iter()
        .map(|v| extract_pyramid(&v.image))
        .collect::<Result<_>>()?;

    let mut results: Vec<StageResult> = Vec::with_capacity(STAGES);
    for stage in 0..STAGES {
        let cfg = config.stages[stage];
        let scale = PYRAMID_SCALES[stage];
        let cams: Vec<CameraModel> = views
            .iter()
            .map(|v| v.camera.scaled(scale))
            .collect::<Result<_>>()?;
        let (hypotheses, prior_valid) = match results.last() {
            None => (
                uniform_hypotheses(config.d_min, config.delta, cfg.n_hypotheses)?,
                None,
            ),
            Some(prev) => {
                let (up, up_valid) =
                    upsample_depth(&prev.final_estimate.depth, &prev.final_estimate.validity);
                let hyps = per_pixel_hypotheses(
                    &up,
                    cfg.range_scale,
                    config.delta,
                    cfg.n_hypotheses,
                    config.d_floor(),
                )?;
                (hyps, Some(up_valid))
            }
        };

        let pairs: Vec<PairOutput> = (1..views.len())
            .into_par_iter()
            .map(|i| {
                let volume = build_pair_volume(
                    &pyramids[0][stage],
                    &pyramids[i][stage],
                    &cams[0],
                    &cams[i],
                    &hypotheses,
                    config.groups,
                )?;
                let latent = regularize_pair(&volume, cfg.smoothing)?;
                let prob = to_probability(&latent, cfg.temperature)?;
                let estimate = read_out(&prob, config.uncertainty)?;
                Ok(PairOutput { latent, estimate })
            })
            .collect::<Result<_>>()?;

        let latents: Vec<_> = pairs.iter().map(|p| p.latent.clone()).collect();
        let log_unc: Vec<Grid<f64>> = pairs
            .iter()
            .map(|p| p.estimate.log_uncertainty.clone())
            .collect();
        let fused = fuse_volumes(&latents, Some(&log_unc), config.fusion)?;
        let score = config.fusion.matching_score(&fused);
        let probability = regularize_fused(&score, cfg.smoothing, cfg.fused_temperature)?;
        let mut final_estimate = read_out(&probability, config.uncertainty)?;
        if let Some(prior) = prior_valid {
            final_estimate.validity = final_estimate.validity.and(&prior);
        }
        let prob_map = probability_map(&probability, &final_estimate.depth)?;

        results.push(StageResult {
            stage,
            camera: cams[0].clone(),
            interval: config.interval(stage),
            final_estimate,
            pairs: pairs.into_iter().map(|p| p.estimate).collect(),
            probability,
            probability_map: prob_map,
        });
    }
    Ok(results)
}

/// Brings a lower-resolution map to full resolution by repeated 2x upsampling.
pub fn upsample_to(map: &Grid<f64>, times: usize) -> Grid<f64> {
    let mut out = map.clone();
    for _ in 0..times {
        let mask = Grid::filled(out.width(), out.height(), true);
        out = upsample_depth(&out, &mask).0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_pixel_ranges_from_stage_constants() {
        let prev = Grid::filled(1, 1, 500.0);
        let h = per_pixel_hypotheses(&prev, 0.25, 240.0, 16, 0.425).unwrap();
        let v = h.at(0);
        assert_eq!(v.len(), 16);
        assert_eq!(v[0], 440.0);
        assert!((v[1] - v[0] - 7.5).abs() < 1e-12);
        assert!((v[15] + 7.5 - 560.0).abs() < 1e-9);

        let h = per_pixel_hypotheses(&prev, 1.0 / 16.0, 240.0, 8, 0.425).unwrap();
        let v = h.at(0);
        assert_eq!(v[0], 485.0);
        assert!((v[1] - v[0] - 3.75).abs() < 1e-12);
        assert!((v[7] + 3.75 - 515.0).abs() < 1e-9);
    }

    #[test]
    fn per_pixel_ranges_clamp_at_floor() {
        let prev = Grid::from_vec(2, 1, vec![10.0, -3.0]).unwrap();
        let h = per_pixel_hypotheses(&prev, 0.25, 240.0, 16, 0.425).unwrap();
        for p in 0..2 {
            let v = h.at(p);
            assert_eq!(v[0], 0.425);
            assert_eq!(v.len(), 16);
            assert!(v.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn upsample_constant_and_bilinear() {
        let c = Grid::filled(3, 2, 4.5);
        let (up, _) = upsample_depth(&c, &Grid::filled(3, 2, true));
        assert!(up.as_slice().iter().all(|&v| v == 4.5));

        let m = Grid::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (up, _) = upsample_depth(&m, &Grid::filled(2, 2, true));
        // hand-computed: source coordinates clamp(-0.25)=0, 0.25, 0.75, clamp(1.25)=1
        let coords = [0.0, 0.25, 0.75, 1.0];
        for (y, &sy) in coords.iter().enumerate() {
            for (x, &sx) in coords.iter().enumerate() {
                let expected = 1.0 + sx + 2.0 * sy;
                assert!((up.get(x, y) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_validity_uses_original_labels() {
        let d = Grid::filled(2, 2, 1.0);
        let v = Grid::from_vec(2, 2, vec![true, false, false, true]).unwrap();
        let (_, up) = upsample_depth(&d, &v);
        assert_eq!(up.count(), 8);
        assert!(*up.get(0, 0) && *up.get(1, 1) && !*up.get(2, 0) && !*up.get(1, 3));
    }

    #[test]
    fn default_constants() {
        let cfg = CascadeConfig::new(425.0, 240.0);
        let counts: Vec<_> = cfg.stages.iter().map(|s| s.n_hypotheses).collect();
        assert_eq!(counts, vec![32, 16, 8]);
        assert_eq!(cfg.stages[1].range_scale, 0.25);
        assert_eq!(cfg.stages[2].range_scale, 0.0625);
        assert_eq!(cfg.interval(0), 15.0);
        assert_eq!(cfg.interval(1), 7.5);
        assert_eq!(cfg.final_interval(), 3.75);
        cfg.validate().unwrap();

        let mut bad = cfg.clone();
        bad.stages[1].range_scale = 1.0;
        assert!(bad.validate().is_err());
    }
}
