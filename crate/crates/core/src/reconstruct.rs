//! Per-view depth inference on scene directories and full-scene point clouds.

use std::fs;
use std::path::Path;

use log::{debug, info};

use crate::cascade::{infer_depth, upsample_to, CascadeConfig, StageResult, STAGES};
use crate::dataset::SceneDir;
use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::grid::{Grid, ValidityMask};
use crate::io;
use crate::pointcloud::{
    cloud_from_depth, geometric_filter, median_fuse, photometric_filter, DepthView, FilterConfig,
    PointCloud,
};

/// Cascade output for one reference view.
#[derive(Clone, Debug)]
pub struct ViewDepth {
    pub reference: usize,
    pub sources: Vec<usize>,
    pub camera: CameraModel,
    pub stages: Vec<StageResult>,
    /// Probability maps of every stage at full resolution.
    pub prob_maps: [Grid<f64>; STAGES],
}

impl ViewDepth {
    pub fn final_stage(&self) -> &StageResult {
        &self.stages[STAGES - 1]
    }

    pub fn depth(&self) -> &Grid<f64> {
        &self.final_stage().final_estimate.depth
    }

    pub fn validity(&self) -> &ValidityMask {
        &self.final_stage().final_estimate.validity
    }
}

pub fn depth_for_view(
    scene: &SceneDir,
    reference: usize,
    n_sources: usize,
    config: &CascadeConfig,
) -> Result<ViewDepth> {
    let list = scene.meta.view_list(reference)?;
    let n = n_sources.min(list.sources.len());
    let (ref_view, sources) = scene.sample(reference, n)?;
    debug!("view {reference}: sources {:?}", &list.sources[..n]);
    let stages = infer_depth(&ref_view, &sources, config)?;
    let prob_maps =
        std::array::from_fn(|k| upsample_to(&stages[k].probability_map, STAGES - 1 - k));
    Ok(ViewDepth {
        reference,
        sources: list.sources[..n].to_vec(),
        camera: ref_view.camera,
        stages,
        prob_maps,
    })
}

/// Writes `depth.pfm`, `uncertainty.pfm`, `valid.pgm`, `prob_{k}.pfm` and,
/// per stage, `stage{k}/uncertainty_{src}.pfm` for every source view.
pub fn write_view_depth(dir: &Path, out: &ViewDepth) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let last = out.final_stage();
    io::write_pfm(&dir.join("depth.pfm"), &last.final_estimate.depth)?;
    io::write_pfm(
        &dir.join("uncertainty.pfm"),
        &last.final_estimate.log_uncertainty,
    )?;
    io::write_mask(&dir.join("valid.pgm"), &last.final_estimate.validity)?;
    for (k, map) in out.prob_maps.iter().enumerate() {
        io::write_pfm(&dir.join(format!("prob_{}.pfm", k + 1)), map)?;
    }
    for stage in &out.stages {
        let sub = dir.join(format!("stage{}", stage.stage + 1));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        io::write_pfm(&sub.join("depth.pfm"), &stage.final_estimate.depth)?;
        for (pair, &src) in stage.pairs.iter().zip(&out.sources) {
            io::write_pfm(
                &sub.join(format!("uncertainty_{src:03}.pfm")),
                &pair.log_uncertainty,
            )?;
        }
    }
    Ok(())
}

/// Filtered, median-refined depth of one view.
#[derive(Clone, Debug)]
pub struct RefinedDepth {
    pub depth: Grid<f64>,
    pub mask: ValidityMask,
    pub photometric: ValidityMask,
}

/// Photometric and geometric filtering of every view against its source list.
pub fn filter_views(views: &[ViewDepth], filter: &FilterConfig) -> Result<Vec<RefinedDepth>> {
    let photometric: Vec<ValidityMask> = views
        .iter()
        .map(|v| {
            let [p1, p2, p3] = &v.prob_maps;
            photometric_filter([p1, p2, p3], v.validity(), filter.prob_thresholds)
        })
        .collect::<Result<_>>()?;
    views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let others: Vec<DepthView<'_>> = v
                .sources
                .iter()
                .filter_map(|&s| views.iter().position(|o| o.reference == s))
                .map(|j| DepthView {
                    depth: views[j].depth(),
                    validity: &photometric[j],
                    camera: &views[j].camera,
                })
                .collect();
            filter.validate(others.len())?;
            let reference = DepthView {
                depth: v.depth(),
                validity: &photometric[i],
                camera: &v.camera,
            };
            let check = geometric_filter(&reference, &others, filter)?;
            let depth = median_fuse(v.depth(), &check.roundtrip_depths)?;
            debug!(
                "view {}: {} photometric, {} consistent",
                v.reference,
                photometric[i].count(),
                check.mask.count()
            );
            Ok(RefinedDepth {
                depth,
                mask: check.mask,
                photometric: photometric[i].clone(),
            })
        })
        .collect()
}

/// Depth for every view, filtering, fusion and colored point export.
pub fn reconstruct_scene(
    scene: &SceneDir,
    n_sources: usize,
    config: &CascadeConfig,
    filter: &FilterConfig,
) -> Result<PointCloud> {
    let views: Vec<ViewDepth> = (0..scene.meta.view_count)
        .map(|r| {
            depth_for_view(scene, r, n_sources, config).map_err(|e| match e {
                Error::Config(msg) => Error::config(format!("view {r}: {msg}")),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let refined = filter_views(&views, filter)?;
    let mut cloud = PointCloud {
        points: Vec::new(),
        colors: Some(Vec::new()),
    };
    for (v, r) in views.iter().zip(&refined) {
        let image = scene.rgb(v.reference)?;
        cloud.extend(cloud_from_depth(
            &r.depth,
            &r.mask,
            &v.camera,
            Some(&image),
        )?);
    }
    info!("{}: {} points", scene.meta.name, cloud.len());
    Ok(cloud)
}
