//! Depth objectives and metrics. All absolute errors are divided by a depth
//! interval, so "1" means one final-stage hypothesis spacing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{StageResult, STAGES};
use crate::error::{Error, Result};
use crate::grid::{Grid, ValidityMask};
use crate::pairwise::FuParams;

/// Stage weights λ_k.
pub const DEFAULT_STAGE_WEIGHTS: [f64; STAGES] = [0.5, 1.0, 2.0];

fn check_inputs(
    depth: &Grid<f64>,
    gt: &Grid<f64>,
    valid: &ValidityMask,
    interval: f64,
) -> Result<usize> {
    depth.check_dims(gt, "loss")?;
    depth.check_dims(valid, "loss")?;
    if !(interval > 0.0) {
        return Err(Error::config("depth interval must be positive"));
    }
    match valid.count() {
        0 => Err(Error::EmptyDomain),
        n => Ok(n),
    }
}

fn valid_pixels<'a>(valid: &'a ValidityMask) -> impl Iterator<Item = usize> + 'a {
    valid
        .as_slice()
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| v.then_some(i))
}

/// Laplacian negative log-likelihood (constants dropped):
/// mean over valid pixels of `exp(-S) * |D - D_gt| / interval + S`.
pub fn joint_loss(
    depth: &Grid<f64>,
    log_unc: &Grid<f64>,
    gt: &Grid<f64>,
    valid: &ValidityMask,
    interval: f64,
) -> Result<f64> {
    let n = check_inputs(depth, gt, valid, interval)?;
    depth.check_dims(log_unc, "joint loss")?;
    let (d, s, g) = (depth.as_slice(), log_unc.as_slice(), gt.as_slice());
    let sum: f64 = valid_pixels(valid)
        .map(|i| (-s[i]).exp() * (d[i] - g[i]).abs() / interval + s[i])
        .sum();
    Ok(sum / n as f64)
}

/// Analytic gradients of [`joint_loss`] with respect to depth and log-uncertainty.
///
/// `dL/dD = sign(D - gt) e^{-S} / (interval n)`, `dL/dS = (1 - e^{-S}|D - gt|/interval) / n`;
/// both are zero on invalid pixels. Undefined where `D == gt`.
pub fn joint_loss_gradients(
    depth: &Grid<f64>,
    log_unc: &Grid<f64>,
    gt: &Grid<f64>,
    valid: &ValidityMask,
    interval: f64,
) -> Result<(Grid<f64>, Grid<f64>)> {
    let n = check_inputs(depth, gt, valid, interval)? as f64;
    depth.check_dims(log_unc, "joint loss")?;
    let (d, s, g) = (depth.as_slice(), log_unc.as_slice(), gt.as_slice());
    let mut grad_d = vec![0.0; d.len()];
    let mut grad_s = vec![0.0; d.len()];
    for i in valid_pixels(valid) {
        let att = (-s[i]).exp();
        let err = d[i] - g[i];
        grad_d[i] = err.signum() * att / (interval * n);
        grad_s[i] = (1.0 - att * err.abs() / interval) / n;
    }
    Ok((
        Grid::from_vec(depth.width(), depth.height(), grad_d)?,
        Grid::from_vec(depth.width(), depth.height(), grad_s)?,
    ))
}

/// Mean of `|D - D_gt| / interval` over valid pixels.
pub fn l1_loss(
    depth: &Grid<f64>,
    gt: &Grid<f64>,
    valid: &ValidityMask,
    interval: f64,
) -> Result<f64> {
    let n = check_inputs(depth, gt, valid, interval)?;
    let (d, g) = (depth.as_slice(), gt.as_slice());
    let sum: f64 = valid_pixels(valid)
        .map(|i| (d[i] - g[i]).abs() / interval)
        .sum();
    Ok(sum / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMetrics {
    /// Percentage of valid pixels with normalized error below 1.
    pub pct_lt1: f64,
    pub pct_lt3: f64,
    /// Mean normalized absolute error.
    pub mae: f64,
}

pub fn accuracy_metrics(
    depth: &Grid<f64>,
    gt: &Grid<f64>,
    valid: &ValidityMask,
    interval: f64,
) -> Result<AccuracyMetrics> {
    let n = check_inputs(depth, gt, valid, interval)? as f64;
    let (d, g) = (depth.as_slice(), gt.as_slice());
    let (mut lt1, mut lt3, mut sum) = (0usize, 0usize, 0.0);
    for i in valid_pixels(valid) {
        let e = (d[i] - g[i]).abs() / interval;
        lt1 += usize::from(e < 1.0);
        lt3 += usize::from(e < 3.0);
        sum += e;
    }
    Ok(AccuracyMetrics {
        pct_lt1: 100.0 * lt1 as f64 / n,
        pct_lt3: 100.0 * lt3 as f64 / n,
        mae: sum / n,
    })
}

/// Loss terms of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLosses {
    pub final_l1: f64,
    pub pair_l1: Vec<f64>,
    pub joint: Vec<f64>,
    pub valid_pixels: usize,
}

impl StageLosses {
    /// `final + mean_i (pair_i + joint_i)`.
    pub fn bracket(&self) -> f64 {
        let nv = self.pair_l1.len() as f64;
        let pair: f64 = self
            .pair_l1
            .iter()
            .zip(&self.joint)
            .map(|(p, j)| p + j)
            .sum();
        self.final_l1 + pair / nv
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub stages: Vec<StageLosses>,
    pub weights: [f64; STAGES],
    pub total: f64,
}

/// `sum_k λ_k [final_k + (1/N_v) sum_i (pair_{k,i} + joint_{k,i})]`.
pub fn total_loss(stages: &[StageLosses], weights: [f64; STAGES]) -> Result<f64> {
    if stages.len() != STAGES {
        return Err(Error::config(format!(
            "expected {STAGES} stages of losses, got {}",
            stages.len()
        )));
    }
    let nv = stages[0].pair_l1.len();
    if nv == 0
        || stages
            .iter()
            .any(|s| s.pair_l1.len() != nv || s.joint.len() != nv)
    {
        return Err(Error::config("inconsistent number of views across stages"));
    }
    Ok(stages
        .iter()
        .zip(weights)
        .map(|(s, lambda)| lambda * s.bracket())
        .sum())
}

/// Loss terms of one stage against ground truth at that stage's resolution.
pub fn stage_losses(
    stage: &StageResult,
    gt: &Grid<f64>,
    gt_valid: &ValidityMask,
    interval: f64,
) -> Result<StageLosses> {
    let est = &stage.final_estimate;
    let valid = est.validity.and(gt_valid);
    let final_l1 = l1_loss(&est.depth, gt, &valid, interval)?;
    let mut pair_l1 = Vec::with_capacity(stage.pairs.len());
    let mut joint = Vec::with_capacity(stage.pairs.len());
    for pair in &stage.pairs {
        let pv = pair.validity.and(gt_valid);
        pair_l1.push(l1_loss(&pair.depth, gt, &pv, interval)?);
        joint.push(joint_loss(
            &pair.depth,
            &pair.log_uncertainty,
            gt,
            &pv,
            interval,
        )?);
    }
    Ok(StageLosses {
        final_l1,
        pair_l1,
        joint,
        valid_pixels: valid.count(),
    })
}

/// Full report for a cascade run; `gts` holds one ground-truth map per stage resolution.
pub fn loss_report(
    stages: &[StageResult],
    gts: &[(Grid<f64>, ValidityMask)],
    interval: f64,
    weights: [f64; STAGES],
) -> Result<LossReport> {
    if stages.len() != STAGES || gts.len() != STAGES {
        return Err(Error::config("loss report needs all three stages"));
    }
    let per_stage = stages
        .iter()
        .zip(gts)
        .map(|(s, (gt, valid))| stage_losses(s, gt, valid, interval))
        .collect::<Result<Vec<_>>>()?;
    let total = total_loss(&per_stage, weights)?;
    Ok(LossReport {
        stages: per_stage,
        weights,
        total,
    })
}

/// Largest relative discrepancy between `analytic` and central differences of `f` at `x`.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn finite_diff_check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-12);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

/// One pair-wise output with ground truth, for fitting the entropy-to-uncertainty map.
#[derive(Clone, Debug)]
pub struct CalibrationSample {
    /// Entropy divided by `ln N_d`.
    pub normalized_entropy: Grid<f64>,
    pub depth: Grid<f64>,
    pub gt: Grid<f64>,
    pub valid: ValidityMask,
    pub interval: f64,
}

/// Candidate `(a, b)` values searched by [`calibrate_fu`].
#[derive(Clone, Debug, PartialEq)]
pub struct FuGrid {
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
}

impl Default for FuGrid {
    fn default() -> Self {
        Self::stepped((0.0, 5.0), (-3.0, 3.0), 0.1)
    }
}

impl FuGrid {
    pub fn stepped(a_range: (f64, f64), b_range: (f64, f64), step: f64) -> Self {
        let ticks = |(lo, hi): (f64, f64)| -> Vec<f64> {
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| lo + i as f64 * step).collect()
        };
        Self {
            a_values: ticks(a_range),
            b_values: ticks(b_range),
        }
    }
}

/// Grid point minimizing mean joint loss over the dataset; ties go to smaller `a`, then smaller `b`.
pub fn calibrate_fu(dataset: &[CalibrationSample], grid: &FuGrid) -> Result<FuParams> {
    if dataset.is_empty() {
        return Err(Error::config("calibration dataset is empty"));
    }
    if grid.a_values.is_empty() || grid.b_values.is_empty() {
        return Err(Error::config("calibration grid is empty"));
    }
    if grid.a_values.iter().any(|&a| !(a >= 0.0)) {
        return Err(Error::config("calibration slopes must be non-negative"));
    }
    // (normalized entropy, normalized error) pairs per sample
    let samples: Vec<Vec<(f64, f64)>> = dataset
        .iter()
        .map(|s| {
            check_inputs(&s.depth, &s.gt, &s.valid, s.interval)?;
            s.depth.check_dims(&s.normalized_entropy, "calibration")?;
            Ok(valid_pixels(&s.valid)
                .map(|i| {
                    let err = (s.depth.as_slice()[i] - s.gt.as_slice()[i]).abs() / s.interval;
                    (s.normalized_entropy.as_slice()[i], err)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let candidates: Vec<FuParams> = grid
        .a_values
        .iter()
        .flat_map(|&a| grid.b_values.iter().map(move |&b| FuParams { a, b }))
        .collect();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|params| {
            let mut per_sample: Vec<f64> = samples
                .iter()
                .map(|pixels| {
                    pixels
                        .iter()
                        .map(|&(h, e)| {
                            let s = params.apply(h);
                            (-s).exp() * e + s
                        })
                        .sum::<f64>()
                        / pixels.len() as f64
                })
                .collect();
            // sorted summation makes the score independent of dataset order
            per_sample.sort_by(|a, b| a.total_cmp(b));
            per_sample.iter().sum::<f64>() / per_sample.len() as f64
        })
        .collect();

    let mut best = 0;
    for (i, &score) in scores.iter().enumerate() {
        let (c, b) = (&candidates[i], &candidates[best]);
        let better = score < scores[best] || (score == scores[best] && (c.a, c.b) < (b.a, b.b));
        if better {
            best = i;
        }
    }
    Ok(candidates[best])
}
