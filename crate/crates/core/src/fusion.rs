//! Multi-view fusion of pair-wise latent volumes.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::pairwise::{
    regularize_pair, to_probability, CostVolume, ProbabilityVolume, SmoothingParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionStrategy {
    /// Convex combination weighted by `exp(-S_i)`.
    #[serde(rename = "vis")]
    VisWeighted,
    /// Population variance across views.
    #[serde(rename = "var")]
    Variance,
    #[serde(rename = "ave")]
    Average,
    #[serde(rename = "max")]
    MaxPool,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [
        FusionStrategy::Variance,
        FusionStrategy::Average,
        FusionStrategy::MaxPool,
        FusionStrategy::VisWeighted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::VisWeighted => "vis",
            FusionStrategy::Variance => "var",
            FusionStrategy::Average => "ave",
            FusionStrategy::MaxPool => "max",
        }
    }

    /// Turns a fused volume into a matching score (higher = better match).
    ///
    /// Variance measures disagreement, so it is negated; the others already
    /// aggregate correlations.
    pub fn matching_score(self, fused: &CostVolume) -> CostVolume {
        match self {
            FusionStrategy::Variance => fused.map_values(|v| -v),
            _ => fused.clone(),
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vis" => Ok(FusionStrategy::VisWeighted),
            "var" => Ok(FusionStrategy::Variance),
            "ave" => Ok(FusionStrategy::Average),
            "max" => Ok(FusionStrategy::MaxPool),
            other => Err(Error::config(format!(
                "unknown fusion strategy '{other}' (expected vis, var, ave or max)"
            ))),
        }
    }
}

/// Per-view weights `exp(-S_i) / sum_m exp(-S_m)` over all views at each pixel.
pub fn fusion_weights(log_uncertainties: &[Grid<f64>]) -> Result<Vec<Grid<f64>>> {
    let first = log_uncertainties
        .first()
        .ok_or_else(|| Error::config("no log-uncertainty maps to weight"))?;
    for s in log_uncertainties {
        first.check_dims(s, "fusion weights")?;
    }
    let n = first.len();
    let mut weights: Vec<Vec<f64>> = vec![vec![0.0; n]; log_uncertainties.len()];
    for p in 0..n {
        let s_min = log_uncertainties
            .iter()
            .map(|s| s.as_slice()[p])
            .fold(f64::INFINITY, f64::min);
        let total: f64 = log_uncertainties
            .iter()
            .map(|s| (s_min - s.as_slice()[p]).exp())
            .sum();
        for (i, s) in log_uncertainties.iter().enumerate() {
            weights[i][p] = (s_min - s.as_slice()[p]).exp() / total;
        }
    }
    weights
        .into_iter()
        .map(|w| Grid::from_vec(first.width(), first.height(), w))
        .collect()
}

/// Fuses latent volumes into one volume.
///
/// Validity per (pixel, depth) cell: `vis`, `ave` and `max` combine whichever
/// inputs are valid there (weights renormalized over them); `var` requires
/// every input to be valid.
pub fn fuse_volumes(
    vols: &[CostVolume],
    log_uncertainties: Option<&[Grid<f64>]>,
    strategy: FusionStrategy,
) -> Result<CostVolume> {
    let first = vols
        .first()
        .ok_or_else(|| Error::config("cannot fuse an empty list of volumes"))?;
    if vols.iter().any(|v| !v.same_shape(first)) {
        return Err(Error::config("fused volumes differ in shape or hypotheses"));
    }
    let (w, h, g) = (first.width(), first.height(), first.groups());
    let n = w * h;
    let nd = first.depth_count();

    let log_unc = match (strategy, log_uncertainties) {
        (FusionStrategy::VisWeighted, Some(s)) if s.len() == vols.len() => {
            if s.iter().any(|m| m.dims() != (w, h)) {
                return Err(Error::config(
                    "log-uncertainty map does not match the volumes",
                ));
            }
            Some(s)
        }
        (FusionStrategy::VisWeighted, _) => {
            return Err(Error::config(
                "visibility-weighted fusion needs one log-uncertainty map per volume",
            ))
        }
        _ => None,
    };

    let mut data = vec![0.0; nd * n * g];
    let mut validity = vec![false; nd * n];
    data.par_chunks_mut(g)
        .zip(validity.par_iter_mut())
        .enumerate()
        .for_each(|(cell, (out, valid))| {
            let p = cell % n;
            let j = cell / n;
            let live: Vec<usize> = (0..vols.len())
                .filter(|&i| vols[i].is_valid(j, p))
                .collect();
            if live.is_empty() {
                return;
            }
            match strategy {
                FusionStrategy::VisWeighted => {
                    let s = log_unc.expect("checked above");
                    let s_min = live
                        .iter()
                        .map(|&i| s[i].as_slice()[p])
                        .fold(f64::INFINITY, f64::min);
                    let wts: Vec<f64> = live
                        .iter()
                        .map(|&i| (s_min - s[i].as_slice()[p]).exp())
                        .collect();
                    let total: f64 = wts.iter().sum();
                    for (gi, o) in out.iter_mut().enumerate() {
                        let acc: f64 = live
                            .iter()
                            .zip(&wts)
                            .map(|(&i, wt)| wt * vols[i].value(j, p, gi))
                            .sum();
                        *o = acc / total;
                    }
                }
                FusionStrategy::Average => {
                    for (gi, o) in out.iter_mut().enumerate() {
                        let acc: f64 = live.iter().map(|&i| vols[i].value(j, p, gi)).sum();
                        *o = acc / live.len() as f64;
                    }
                }
                FusionStrategy::MaxPool => {
                    for (gi, o) in out.iter_mut().enumerate() {
                        *o = live
                            .iter()
                            .map(|&i| vols[i].value(j, p, gi))
                            .fold(f64::NEG_INFINITY, f64::max);
                    }
                }
                FusionStrategy::Variance => {
                    if live.len() != vols.len() {
                        return;
                    }
                    let m = vols.len() as f64;
                    for (gi, o) in out.iter_mut().enumerate() {
                        let mean: f64 = vols.iter().map(|v| v.value(j, p, gi)).sum::<f64>() / m;
                        *o = vols
                            .iter()
                            .map(|v| {
                                let d = v.value(j, p, gi) - mean;
                                d * d
                            })
                            .sum::<f64>()
                            / m;
                    }
                }
            }
            *valid = true;
        });
    CostVolume::new(first.hypotheses().clone(), w, h, g, data, validity)
}

/// Same fixed smoothing and softmax as the pair-wise path.
pub fn regularize_fused(
    vol: &CostVolume,
    smoothing: SmoothingParams,
    temperature: f64,
) -> Result<ProbabilityVolume> {
    to_probability(&regularize_pair(vol, smoothing)?, temperature)
}
