//! Scene directories as consumed by the command-line tools.
//!
//! ```text
//! <scene>/scene.toml               name, depth range, view lists
//! <scene>/images/000.ppm           one image per view
//! <scene>/cams/000.txt             one camera per view
//! <scene>/depths/000.pfm           ground-truth depth (synthetic scenes only)
//! <scene>/visibility/000_003.pgm   reference 0 pixels visible in view 3
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::cascade::View;
use crate::error::{Error, Result};
use crate::features::luma;
use crate::geometry::CameraModel;
use crate::grid::{Grid, ValidityMask};
use crate::io::{self, PoseConvention};
use crate::synth::RenderedScene;

pub const META_FILE: &str = "scene.toml";

/// Source views for one reference, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewList {
    pub reference: usize,
    pub sources: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub name: String,
    pub view_count: usize,
    pub d_min: f64,
    pub delta: f64,
    #[serde(default)]
    pub pose: PoseConvention,
    pub views: Vec<ViewList>,
}

impl SceneMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0) {
            return Err(Error::InvalidDepth(self.d_min));
        }
        if !(self.delta > 0.0) {
            return Err(Error::config("depth half-range must be positive"));
        }
        for list in &self.views {
            let ids = std::iter::once(list.reference).chain(list.sources.iter().copied());
            if let Some(bad) = ids.clone().find(|&i| i >= self.view_count) {
                return Err(Error::config(format!(
                    "view list of {} names view {bad}, but the scene has {} views",
                    list.reference, self.view_count
                )));
            }
            if list.sources.contains(&list.reference) {
                return Err(Error::config(format!(
                    "view {} lists itself as a source",
                    list.reference
                )));
            }
        }
        Ok(())
    }

    pub fn view_list(&self, reference: usize) -> Result<&ViewList> {
        self.views
            .iter()
            .find(|l| l.reference == reference)
            .ok_or_else(|| Error::config(format!("no view list for reference {reference}")))
    }
}

/// Sources ordered by camera-center distance, ties broken by index.
pub fn nearest_views(cameras: &[CameraModel], reference: usize) -> Vec<usize> {
    let c = cameras[reference].center();
    let mut others: Vec<usize> = (0..cameras.len()).filter(|&i| i != reference).collect();
    others.sort_by(|&a, &b| {
        let da = (cameras[a].center() - c).norm();
        let db = (cameras[b].center() - c).norm();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    others
}

/// A scene directory on disk.
#[derive(Clone, Debug)]
pub struct SceneDir {
    pub root: PathBuf,
    pub meta: SceneMeta,
}

fn file_name(i: usize, ext: &str) -> String {
    format!("{i:03}.{ext}")
}

impl SceneDir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let path = root.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: SceneMeta =
            toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        meta.validate()?;
        Ok(Self { root, meta })
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join("images").join(file_name(i, "ppm"))
    }

    pub fn camera_path(&self, i: usize) -> PathBuf {
        self.root.join("cams").join(file_name(i, "txt"))
    }

    pub fn gt_depth_path(&self, i: usize) -> PathBuf {
        self.root.join("depths").join(file_name(i, "pfm"))
    }

    pub fn visibility_path(&self, reference: usize, source: usize) -> PathBuf {
        self.root
            .join("visibility")
            .join(format!("{reference:03}_{source:03}.pgm"))
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.meta.view_count {
            return Err(Error::config(format!(
                "view {i} does not exist ({} views)",
                self.meta.view_count
            )));
        }
        Ok(())
    }

    pub fn camera(&self, i: usize) -> Result<CameraModel> {
        self.check_index(i)?;
        io::read_camera(&self.camera_path(i), self.meta.pose)
    }

    pub fn rgb(&self, i: usize) -> Result<RgbImage> {
        self.check_index(i)?;
        io::read_image(&self.image_path(i))
    }

    pub fn view(&self, i: usize) -> Result<View> {
        let camera = self.camera(i)?;
        let path = self.image_path(i);
        let image = luma(&self.rgb(i)?);
        if image.dims() != (camera.width(), camera.height()) {
            return Err(Error::format(
                path,
                format!(
                    "image is {}x{} but its camera is {}x{}",
                    image.width(),
                    image.height(),
                    camera.width(),
                    camera.height()
                ),
            ));
        }
        Ok(View { image, camera })
    }

    pub fn gt_depth(&self, i: usize) -> Result<Grid<f64>> {
        self.check_index(i)?;
        io::read_pfm(&self.gt_depth_path(i))
    }

    pub fn visibility(&self, reference: usize, source: usize) -> Result<ValidityMask> {
        io::read_mask(&self.visibility_path(reference, source))
    }

    /// Reference view and its first `n_sources` sources.
    pub fn sample(&self, reference: usize, n_sources: usize) -> Result<(View, Vec<View>)> {
        let list = self.meta.view_list(reference)?;
        if n_sources == 0 || n_sources > list.sources.len() {
            return Err(Error::config(format!(
                "asked for {n_sources} source views, reference {reference} has {}",
                list.sources.len()
            )));
        }
        let sources = list.sources[..n_sources]
            .iter()
            .map(|&s| self.view(s))
            .collect::<Result<_>>()?;
        Ok((self.view(reference)?, sources))
    }
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a rendered synthetic scene. View 0 keeps the render's source order.
pub fn write_scene(root: &Path, scene: &RenderedScene) -> Result<SceneDir> {
    let n = scene.cameras.len();
    let mut views = vec![ViewList {
        reference: 0,
        sources: (1..n).collect(),
    }];
    views.extend((1..n).map(|r| ViewList {
        reference: r,
        sources: nearest_views(&scene.cameras, r),
    }));
    let meta = SceneMeta {
        name: scene.name.clone(),
        view_count: n,
        d_min: scene.d_min,
        delta: scene.delta,
        pose: PoseConvention::WorldToCamera,
        views,
    };
    let dir = SceneDir {
        root: root.to_path_buf(),
        meta,
    };
    for sub in ["images", "cams", "depths", "visibility"] {
        make_dir(&root.join(sub))?;
    }
    let meta_path = root.join(META_FILE);
    let text = toml::to_string(&dir.meta).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    for (i, (cam, render)) in scene.cameras.iter().zip(&scene.renders).enumerate() {
        io::write_ppm(&dir.image_path(i), &render.image)?;
        io::write_camera(&dir.camera_path(i), cam)?;
        io::write_pfm(&dir.gt_depth_path(i), &render.depth)?;
    }
    for (k, mask) in scene.visibility.iter().enumerate() {
        io::write_mask(&dir.visibility_path(0, k + 1), mask)?;
    }
    Ok(dir)
}
