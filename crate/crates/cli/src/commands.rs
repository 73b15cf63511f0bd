use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::{info, warn};
use serde::Serialize;

use planesweep::config::PipelineConfig;
use planesweep::dataset::{write_scene, SceneDir, META_FILE};
use planesweep::grid::Grid;
use planesweep::io;
use planesweep::losses::{accuracy_metrics, AccuracyMetrics};
use planesweep::reconstruct::{depth_for_view, reconstruct_scene, write_view_depth};
use planesweep::synth::{standard_suites_with, MIN_SOURCES};
use planesweep::FusionStrategy;

pub fn init_threads(jobs: usize) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("starting worker threads")
}

fn csv_writer(out: Option<&Path>) -> anyhow::Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
            Box::new(
                fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
            )
        }
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

#[derive(Serialize)]
struct ManifestRow<'a> {
    suite: &'a str,
    scene: &'a str,
    reference: usize,
    n_views: usize,
    path: String,
}

pub fn synth(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let root = &cfg.paths.data;
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let suites = standard_suites_with(cfg.seed, &cfg.synth)?;
    let manifest = root.join("manifest.csv");
    let mut rows = csv_writer(Some(&manifest))?;
    for suite in &suites {
        for scene in &suite.scenes {
            let rel = PathBuf::from(suite.kind.name()).join(&scene.name);
            let rendered = scene.render_all()?;
            let dir = write_scene(&root.join(&rel), &rendered)?;
            info!("wrote {}", dir.root.display());
            for n in MIN_SOURCES..=rendered.cameras.len() - 1 {
                rows.serialize(ManifestRow {
                    suite: suite.kind.name(),
                    scene: &scene.name,
                    reference: 0,
                    n_views: n,
                    path: format!("{}/{}", suite.kind.name(), scene.name),
                })?;
            }
        }
    }
    rows.flush()
        .with_context(|| format!("writing {}", manifest.display()))?;
    println!("{}", manifest.display());
    Ok(())
}

fn gt_metrics(
    scene: &SceneDir,
    reference: usize,
    depth: &Grid<f64>,
    valid: &Grid<bool>,
    interval: f64,
) -> Option<AccuracyMetrics> {
    if !scene.gt_depth_path(reference).exists() {
        return None;
    }
    let gt = scene.gt_depth(reference).ok()?;
    accuracy_metrics(depth, &gt, valid, interval).ok()
}

pub fn depth(cfg: &PipelineConfig, scene: &Path, reference: usize) -> anyhow::Result<()> {
    let dir = SceneDir::open(scene)?;
    let cascade = cfg.cascade(dir.meta.d_min, dir.meta.delta);
    let result = depth_for_view(&dir, reference, cfg.n_views, &cascade)
        .with_context(|| format!("depth for view {reference} of {}", scene.display()))?;
    let out = cfg.paths.output.join(format!("{reference:03}"));
    write_view_depth(&out, &result)?;
    let est = &result.final_stage().final_estimate;
    match gt_metrics(
        &dir,
        reference,
        &est.depth,
        &est.validity,
        cascade.final_interval(),
    ) {
        Some(m) => println!(
            "{}: <1 {:.2}%  <3 {:.2}%  mae {:.3} intervals",
            out.display(),
            m.pct_lt1,
            m.pct_lt3,
            m.mae
        ),
        None => println!("{}", out.display()),
    }
    Ok(())
}

pub fn reconstruct(cfg: &PipelineConfig, scene: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let dir = SceneDir::open(scene)?;
    let cascade = cfg.cascade(dir.meta.d_min, dir.meta.delta);
    let cloud = reconstruct_scene(&dir, cfg.n_views, &cascade, &cfg.filter)
        .with_context(|| format!("reconstructing {}", scene.display()))?;
    let path = out.unwrap_or_else(|| cfg.paths.output.join(format!("{}.ply", dir.meta.name)));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    io::write_ply(&path, &cloud)?;
    println!("{}: {} points", path.display(), cloud.len());
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    sample: String,
    pct_lt1: Option<f64>,
    pct_lt3: Option<f64>,
    mae: Option<f64>,
    error: String,
}

/// Subdirectories holding a `depth.pfm`, sorted by name.
fn output_samples(outputs: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let entries =
        fs::read_dir(outputs).with_context(|| format!("reading {}", outputs.display()))?;
    let mut samples = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.join("depth.pfm").is_file() {
            let name = path
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            samples.push((name, path));
        }
    }
    samples.sort();
    Ok(samples)
}

fn eval_sample(sample: &Path, gt_path: &Path, interval: f64) -> anyhow::Result<AccuracyMetrics> {
    let depth = io::read_pfm(&sample.join("depth.pfm"))?;
    let gt = io::read_pfm(gt_path)?;
    if gt.dims() != depth.dims() {
        bail!(
            "output is {}x{} but {} is {}x{}",
            depth.width(),
            depth.height(),
            gt_path.display(),
            gt.width(),
            gt.height()
        );
    }
    let valid_path = sample.join("valid.pgm");
    let valid = if valid_path.is_file() {
        io::read_mask(&valid_path)?
    } else {
        Grid::filled(depth.width(), depth.height(), true)
    };
    let valid = Grid::from_fn(depth.width(), depth.height(), |x, y| {
        *valid.get(x, y) && *gt.get(x, y) > 0.0
    });
    Ok(accuracy_metrics(&depth, &gt, &valid, interval)?)
}

/// Returns whether every sample was evaluated.
pub fn eval(
    cfg: &PipelineConfig,
    outputs: &Path,
    gt: &Path,
    interval: Option<f64>,
    out: Option<&Path>,
) -> anyhow::Result<bool> {
    let scene = gt
        .join(META_FILE)
        .is_file()
        .then(|| SceneDir::open(gt))
        .transpose()?;
    let interval = match (interval, &scene) {
        (Some(i), _) => i,
        (None, Some(s)) => cfg.cascade(s.meta.d_min, s.meta.delta).final_interval(),
        (None, None) => {
            bail!("--interval is required when the ground truth is not a scene directory")
        }
    };
    if !(interval > 0.0) {
        bail!("interval must be positive, got {interval}");
    }
    let samples = output_samples(outputs)?;
    if samples.is_empty() {
        bail!("no <id>/depth.pfm outputs under {}", outputs.display());
    }
    let mut rows = csv_writer(out)?;
    let mut ok = Vec::new();
    let mut failures = 0;
    for (name, path) in &samples {
        let gt_path = match &scene {
            Some(s) => s.root.join("depths").join(format!("{name}.pfm")),
            None => gt.join(format!("{name}.pfm")),
        };
        let row = match eval_sample(path, &gt_path, interval) {
            Ok(m) => {
                ok.push(m);
                EvalRow {
                    sample: name.clone(),
                    pct_lt1: Some(m.pct_lt1),
                    pct_lt3: Some(m.pct_lt3),
                    mae: Some(m.mae),
                    error: String::new(),
                }
            }
            Err(e) => {
                failures += 1;
                warn!("{name}: {e:#}");
                EvalRow {
                    sample: name.clone(),
                    pct_lt1: None,
                    pct_lt3: None,
                    mae: None,
                    error: format!("{e:#}"),
                }
            }
        };
        rows.serialize(row)?;
    }
    if !ok.is_empty() {
        let n = ok.len() as f64;
        rows.serialize(EvalRow {
            sample: "mean".into(),
            pct_lt1: Some(ok.iter().map(|m| m.pct_lt1).sum::<f64>() / n),
            pct_lt3: Some(ok.iter().map(|m| m.pct_lt3).sum::<f64>() / n),
            mae: Some(ok.iter().map(|m| m.mae).sum::<f64>() / n),
            error: String::new(),
        })?;
    }
    rows.flush()?;
    if failures > 0 {
        eprintln!("error: {failures} of {} samples failed", samples.len());
    }
    Ok(failures == 0)
}

fn collect_scenes(paths: &[PathBuf]) -> anyhow::Result<Vec<SceneDir>> {
    let mut scenes = Vec::new();
    for path in paths {
        if path.join(META_FILE).is_file() {
            scenes.push(SceneDir::open(path)?);
            continue;
        }
        let mut subdirs: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(META_FILE).is_file())
            .collect();
        subdirs.sort();
        if subdirs.is_empty() {
            bail!("{} holds no scene directories", path.display());
        }
        for dir in subdirs {
            scenes.push(SceneDir::open(&dir)?);
        }
    }
    Ok(scenes)
}

#[derive(Serialize)]
struct AblationRow {
    fusion: &'static str,
    n_views: usize,
    scenes: usize,
    pct_lt1: f64,
    pct_lt3: f64,
    mae: f64,
}

pub fn ablate(
    cfg: &PipelineConfig,
    paths: &[PathBuf],
    views: RangeInclusive<usize>,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    if views.is_empty() || *views.start() == 0 {
        bail!("view range {}..={} is empty", views.start(), views.end());
    }
    let scenes = collect_scenes(paths)?;
    let mut rows = csv_writer(out)?;
    for strategy in FusionStrategy::ALL {
        for n in views.clone() {
            let mut sums = [0.0; 3];
            for scene in &scenes {
                let available = scene.meta.view_list(0)?.sources.len();
                if n > available {
                    bail!("{} has only {available} source views", scene.root.display());
                }
                let mut cascade = cfg.cascade(scene.meta.d_min, scene.meta.delta);
                cascade.fusion = strategy;
                let result = depth_for_view(scene, 0, n, &cascade)
                    .with_context(|| format!("depth for {}", scene.root.display()))?;
                let est = &result.final_stage().final_estimate;
                let gt = scene.gt_depth(0)?;
                let m = accuracy_metrics(&est.depth, &gt, &est.validity, cascade.final_interval())?;
                sums[0] += m.pct_lt1;
                sums[1] += m.pct_lt3;
                sums[2] += m.mae;
            }
            let k = scenes.len() as f64;
            info!("{strategy} n={n}: <1 {:.2}%", sums[0] / k);
            rows.serialize(AblationRow {
                fusion: strategy.name(),
                n_views: n,
                scenes: scenes.len(),
                pct_lt1: sums[0] / k,
                pct_lt3: sums[1] / k,
                mae: sums[2] / k,
            })?;
            rows.flush()?;
        }
    }
    Ok(())
}
