//! Procedural scenes with exact ground truth.
//!
//! Geometry is a handful of planes and axis-aligned boxes. Albedo is a pure
//! function of the surface point, so every camera sees the same value.

use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::View;
use crate::error::{Error, Result};
use crate::features::luma;
use crate::geometry::CameraModel;
use crate::grid::{Grid, ValidityMask};

pub const DEFAULT_WIDTH: usize = 256;
pub const DEFAULT_HEIGHT: usize = 192;
/// Reference plus eight sources.
pub const VIEWS_PER_SCENE: usize = 9;
pub const MIN_SOURCES: usize = 2;
pub const MAX_SOURCES: usize = 8;
const VISIBILITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Infinite plane `{x : n·(x - origin) = 0}`; `u_axis`, `v_axis` span it for texturing.
    Plane {
        origin: Vector3<f64>,
        normal: Vector3<f64>,
        u_axis: Vector3<f64>,
        v_axis: Vector3<f64>,
    },
    AxisBox {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
}

impl Shape {
    /// Plane `z = z0 + sx x + sy y`.
    pub fn slanted_plane(z0: f64, sx: f64, sy: f64) -> Self {
        let normal = Vector3::new(-sx, -sy, 1.0).normalize();
        let u_axis = Vector3::new(1.0, 0.0, sx).normalize();
        let v_axis = normal.cross(&u_axis).normalize();
        Shape::Plane {
            origin: Vector3::new(0.0, 0.0, z0),
            normal,
            u_axis,
            v_axis,
        }
    }

    pub fn fronto_parallel(z: f64) -> Self {
        Self::slanted_plane(z, 0.0, 0.0)
    }

    /// Nearest ray parameter `t > 0` with surface coordinates of the hit.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector2<f64>)> {
        match self {
            Shape::Plane {
                origin: o,
                normal,
                u_axis,
                v_axis,
            } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(o - origin)) / denom;
                if t <= 0.0 {
                    return None;
                }
                let rel = origin + dir * t - o;
                Some((t, Vector2::new(rel.dot(u_axis), rel.dot(v_axis))))
            }
            Shape::AxisBox { min, max } => {
                let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                for k in 0..3 {
                    if dir[k].abs() < 1e-15 {
                        if origin[k] < min[k] || origin[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (min[k] - origin[k]) / dir[k];
                    let b = (max[k] - origin[k]) / dir[k];
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    if lo > t_near {
                        t_near = lo;
                        axis = k;
                    }
                    t_far = t_far.min(hi);
                }
                if t_near > t_far || t_near <= 0.0 {
                    return None;
                }
                let p = origin + dir * t_near;
                let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
                // per-face offset keeps adjacent faces from sharing a pattern
                let offset = 37.0 * axis as f64;
                Some((t_near, Vector2::new(p[i] + offset, p[j] - offset)))
            }
        }
    }

    /// Euclidean distance from `p` to the surface.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            Shape::Plane { origin, normal, .. } => normal.dot(&(p - origin)).abs(),
            Shape::AxisBox { min, max } => {
                let outside = Vector3::from_fn(|k, _| (min[k] - p[k]).max(p[k] - max[k]).max(0.0));
                if outside.norm() > 0.0 {
                    outside.norm()
                } else {
                    (0..3)
                        .map(|k| (p[k] - min[k]).min(max[k] - p[k]))
                        .fold(f64::INFINITY, f64::min)
                }
            }
        }
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        match self {
            Shape::Plane { .. } => false,
            Shape::AxisBox { min, max } => (0..3).all(|k| p[k] > min[k] && p[k] < max[k]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    pub shape: Shape,
    pub tint: [f64; 3],
}

/// Fractal value noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub seed: u64,
    /// World-space period of the coarsest octave.
    pub base_period: f64,
    pub octaves: u32,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            seed: 0,
            base_period: 0.1,
            octaves: 4,
            persistence: 0.75,
        }
    }
}

fn hash64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = hash64(seed ^ hash64((ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (fade(x - fx), fade(y - fy));
    let a = lattice(ix, iy, seed);
    let b = lattice(ix + 1, iy, seed);
    let c = lattice(ix, iy + 1, seed);
    let d = lattice(ix + 1, iy + 1, seed);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

impl NoiseParams {
    /// Albedo in `[0, 1]` at surface coordinates `uv` of surface `surface`.
    pub fn albedo(&self, surface: usize, uv: &Vector2<f64>) -> f64 {
        let seed = hash64(self.seed ^ hash64(surface as u64 + 1));
        let (mut sum, mut norm, mut amp) = (0.0, 0.0, 1.0);
        let mut freq = 1.0 / self.base_period;
        for octave in 0..self.octaves {
            sum += amp * value_noise(uv.x * freq, uv.y * freq, seed.wrapping_add(octave as u64));
            norm += amp;
            amp *= self.persistence;
            freq *= 2.0;
        }
        sum / norm
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub surface: usize,
    /// Camera-frame z of the hit point.
    pub depth: f64,
    pub point: Vector3<f64>,
    pub uv: Vector2<f64>,
}

/// Camera-frame rendering of a scene.
#[derive(Clone, Debug)]
pub struct Rendering {
    pub image: RgbImage,
    pub depth: Grid<f64>,
    pub surface: Grid<usize>,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub name: String,
    pub surfaces: Vec<Surface>,
    pub texture: NoiseParams,
    /// `cameras[0]` is the reference view.
    pub cameras: Vec<CameraModel>,
    pub ambient: f64,
    pub d_min: f64,
    pub delta: f64,
}

impl SyntheticScene {
    /// Nearest surface along the ray through `pixel`.
    pub fn cast(&self, cam: &CameraModel, pixel: &Vector2<f64>) -> Option<Hit> {
        // ray parameter equals camera-frame z since the ray's camera z is 1
        let (origin, dir) = cam.world_ray(pixel);
        let mut best: Option<Hit> = None;
        for (i, surface) in self.surfaces.iter().enumerate() {
            if let Some((t, uv)) = surface.shape.intersect(&origin, &dir) {
                if best.is_none_or(|b| t < b.depth) {
                    best = Some(Hit {
                        surface: i,
                        depth: t,
                        point: origin + dir * t,
                        uv,
                    });
                }
            }
        }
        best
    }

    /// Distance from `p` to the nearest surface of the scene.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        self.surfaces
            .iter()
            .map(|s| s.shape.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn render(&self, cam: &CameraModel) -> Result<Rendering> {
        let (w, h) = (cam.width(), cam.height());
        let rows: Vec<Vec<Hit>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| {
                        self.cast(cam, &Vector2::new(x as f64, y as f64))
                            .ok_or_else(|| {
                                Error::SceneValidation(format!(
                                    "scene {}: ray through pixel ({x}, {y}) misses all surfaces",
                                    self.name
                                ))
                            })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let hit = |x: usize, y: usize| rows[y][x];
        let mut image = RgbImage::new(w as u32, h as u32);
        for (x, y, px) in image.enumerate_pixels_mut() {
            let hit = hit(x as usize, y as usize);
            let albedo = self.texture.albedo(hit.surface, &hit.uv);
            let tint = self.surfaces[hit.surface].tint;
            let shade = |c: f64| {
                let v = self.ambient + (1.0 - self.ambient) * albedo * c;
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            };
            *px = Rgb([shade(tint[0]), shade(tint[1]), shade(tint[2])]);
        }
        Ok(Rendering {
            image,
            depth: Grid::from_fn(w, h, |x, y| hit(x, y).depth),
            surface: Grid::from_fn(w, h, |x, y| hit(x, y).surface),
        })
    }

    /// Ground-truth depth at any camera (e.g. a downscaled reference).
    pub fn depth_map(&self, cam: &CameraModel) -> Result<Grid<f64>> {
        Ok(self.render(cam)?.depth)
    }

    /// True where the reference pixel's surface point is seen unobstructed by `src`.
    pub fn visibility_mask(&self, ref_cam: &CameraModel, src_cam: &CameraModel) -> ValidityMask {
        let (w, h) = (ref_cam.width(), ref_cam.height());
        let data: Vec<bool> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let pixel = Vector2::new((i % w) as f64, (i / w) as f64);
                let Some(hit) = self.cast(ref_cam, &pixel) else {
                    return false;
                };
                let Ok((proj, z)) = src_cam.project(&hit.point) else {
                    return false;
                };
                if !src_cam.in_bounds(&proj) {
                    return false;
                }
                match self.cast(src_cam, &proj) {
                    Some(src_hit) => {
                        src_hit.surface == hit.surface
                            && (src_hit.depth - z).abs() <= VISIBILITY_TOL
                    }
                    None => false,
                }
            })
            .collect();
        Grid::from_vec(w, h, data).expect("dims match")
    }

    /// Checks that camera centers are outside every box and that every reference
    /// pixel hits a surface with depth in `[d_min, d_min + 2Δd)`.
    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() || self.surfaces.is_empty() {
            return Err(Error::SceneValidation(format!(
                "scene {} needs at least one camera and one surface",
                self.name
            )));
        }
        for cam in &self.cameras {
            let c = cam.center();
            if self.surfaces.iter().any(|s| s.shape.contains(&c)) {
                return Err(Error::SceneValidation(format!(
                    "scene {}: camera inside a box",
                    self.name
                )));
            }
        }
        let depth = self.depth_map(&self.cameras[0])?;
        let hi = self.d_min + 2.0 * self.delta;
        if let Some(bad) = depth
            .as_slice()
            .iter()
            .find(|&&d| d < self.d_min || d >= hi)
        {
            return Err(Error::SceneValidation(format!(
                "scene {}: reference depth {bad} outside [{}, {hi})",
                self.name, self.d_min
            )));
        }
        Ok(())
    }

    /// Renders every view and the reference-to-source visibility masks.
    pub fn render_all(&self) -> Result<RenderedScene> {
        self.validate()?;
        let renders = self
            .cameras
            .iter()
            .map(|c| self.render(c))
            .collect::<Result<Vec<_>>>()?;
        let visibility = self.cameras[1..]
            .iter()
            .map(|src| self.visibility_mask(&self.cameras[0], src))
            .collect();
        Ok(RenderedScene {
            name: self.name.clone(),
            cameras: self.cameras.clone(),
            renders,
            visibility,
            d_min: self.d_min,
            delta: self.delta,
        })
    }
}

#[derive(Clone, Debug)]
pub struct RenderedScene {
    pub name: String,
    pub cameras: Vec<CameraModel>,
    pub renders: Vec<Rendering>,
    /// `visibility[i]`: reference pixels visible in source `i + 1`.
    pub visibility: Vec<ValidityMask>,
    pub d_min: f64,
    pub delta: f64,
}

/// Reference plus the first `n` sources of a rendered scene.
#[derive(Clone, Debug)]
pub struct Sample {
    pub reference: View,
    pub sources: Vec<View>,
    pub gt_depth: Grid<f64>,
    pub visibility: Vec<ValidityMask>,
}

impl RenderedScene {
    pub fn view(&self, index: usize) -> View {
        View {
            image: luma(&self.renders[index].image),
            camera: self.cameras[index].clone(),
        }
    }

    pub fn sample(&self, n_sources: usize) -> Result<Sample> {
        if n_sources == 0 || n_sources >= self.cameras.len() {
            return Err(Error::InvalidCount(n_sources));
        }
        Ok(Sample {
            reference: self.view(0),
            sources: (1..=n_sources).map(|i| self.view(i)).collect(),
            gt_depth: self.renders[0].depth.clone(),
            visibility: self.visibility[..n_sources].to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteKind {
    Unoccluded,
    SingleOccluder,
    HeavyOcclusion,
}

impl SuiteKind {
    pub const ALL: [SuiteKind; 3] = [
        SuiteKind::Unoccluded,
        SuiteKind::SingleOccluder,
        SuiteKind::HeavyOcclusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Unoccluded => "unoccluded",
            SuiteKind::SingleOccluder => "single-occluder",
            SuiteKind::HeavyOcclusion => "heavy-occlusion",
        }
    }
}

/// Knobs shared by all generated scenes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteParams {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Radius of the ring of source cameras around the reference.
    pub baseline: f64,
    pub d_min: f64,
    pub delta: f64,
    pub scenes_per_suite: usize,
    /// Texture settings; the seed is replaced per scene.
    pub texture: NoiseParams,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            focal: 250.0,
            baseline: 1.25,
            d_min: 2.0,
            delta: 1.25,
            scenes_per_suite: 6,
            texture: NoiseParams::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Suite {
    pub kind: SuiteKind,
    pub scenes: Vec<SyntheticScene>,
}

impl Suite {
    /// Every `(scene index, N_v)` combination with `N_v` in `2..=8`.
    pub fn samples(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.scenes.len()).flat_map(|s| (MIN_SOURCES..=MAX_SOURCES).map(move |n| (s, n)))
    }
}

/// Ring angles ordered so that any prefix is spread around the reference.
const RING_ORDER: [usize; MAX_SOURCES] = [0, 4, 2, 6, 1, 5, 3, 7];

fn ring_cameras(
    params: &SuiteParams,
    rng: &mut ChaCha8Rng,
    focus: f64,
) -> Result<Vec<CameraModel>> {
    let (w, h) = (params.width, params.height);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let f = params.focal;
    let up = Vector3::new(0.0, -1.0, 0.0);
    let mut cams = vec![CameraModel::look_at(
        Vector3::zeros(),
        Vector3::new(0.0, 0.0, 1.0),
        up,
        f,
        f,
        cx,
        cy,
        w,
        h,
    )?];
    let jitter = rng.random_range(0.0..2.0 * PI / MAX_SOURCES as f64);
    for &slot in &RING_ORDER {
        let angle = jitter + 2.0 * PI * slot as f64 / MAX_SOURCES as f64;
        let radius = params.baseline * rng.random_range(0.85..1.15);
        let eye = Vector3::new(
            radius * angle.cos(),
            radius * angle.sin(),
            rng.random_range(-0.1..0.1),
        );
        cams.push(CameraModel::look_at(
            eye,
            Vector3::new(0.0, 0.0, focus),
            up,
            f,
            f,
            cx,
            cy,
            w,
            h,
        )?);
    }
    Ok(cams)
}

fn random_tint(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(0.75..1.0),
        rng.random_range(0.75..1.0),
        rng.random_range(0.75..1.0),
    ]
}

fn background(params: &SuiteParams, rng: &mut ChaCha8Rng) -> Surface {
    background_at(params, rng, (1.2, 1.45))
}

/// Slightly slanted plane whose center depth is `d_min + Δd·u` for `u` drawn from `span`.
fn background_at(params: &SuiteParams, rng: &mut ChaCha8Rng, span: (f64, f64)) -> Surface {
    let z0 = params.d_min + params.delta * rng.random_range(span.0..span.1);
    Surface {
        shape: Shape::slanted_plane(
            z0,
            rng.random_range(-0.08..0.08),
            rng.random_range(-0.08..0.08),
        ),
        tint: random_tint(rng),
    }
}

/// Box whose front face spans `[x0, x1] × [y0, y1]` in normalized reference image coordinates.
fn occluder(
    params: &SuiteParams,
    rng: &mut ChaCha8Rng,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    z: f64,
) -> Surface {
    let half_w = params.width as f64 / (2.0 * params.focal);
    let half_h = params.height as f64 / (2.0 * params.focal);
    let to_world = |n: f64, half: f64| (2.0 * n - 1.0) * half * z;
    let thickness = rng.random_range(0.03..0.06);
    Surface {
        shape: Shape::AxisBox {
            min: Vector3::new(to_world(x0, half_w), to_world(y0, half_h), z),
            max: Vector3::new(to_world(x1, half_w), to_world(y1, half_h), z + thickness),
        },
        tint: random_tint(rng),
    }
}

fn scene_rng(seed: u64, kind: SuiteKind, index: usize) -> ChaCha8Rng {
    let stream = kind as u64 * 1000 + index as u64;
    ChaCha8Rng::seed_from_u64(hash64(seed ^ hash64(stream + 1)))
}

pub fn generate_scene(
    seed: u64,
    kind: SuiteKind,
    index: usize,
    params: &SuiteParams,
) -> Result<SyntheticScene> {
    let mut rng = scene_rng(seed, kind, index);
    let bg = background(params, &mut rng);
    let focus = params.d_min + 1.2 * params.delta;
    let mut surfaces = vec![bg];
    let near = |rng: &mut ChaCha8Rng| params.d_min + params.delta * rng.random_range(0.25..0.6);
    match kind {
        SuiteKind::Unoccluded => {}
        SuiteKind::SingleOccluder => {
            let x0 = rng.random_range(0.25..0.4);
            let y0 = rng.random_range(0.2..0.35);
            let z = near(&mut rng);
            let (xs, ys) = (
                (x0, x0 + rng.random_range(0.3..0.4)),
                (y0, y0 + rng.random_range(0.35..0.5)),
            );
            surfaces.push(occluder(params, &mut rng, xs, ys, z));
        }
        SuiteKind::HeavyOcclusion => {
            // a fence of slats; gaps narrower than the shadow bands are hidden from both sides
            surfaces[0] = background_at(params, &mut rng, (1.5, 1.7));
            let slats = rng.random_range(3..=4);
            let vertical = rng.random_bool(0.5);
            for b in 0..slats {
                let center = (b as f64 + 0.5 + rng.random_range(-0.1..0.1)) / slats as f64;
                let half = rng.random_range(0.05..0.07);
                let z = params.d_min + params.delta * rng.random_range(0.2..0.4);
                let across = (center - half, center + half);
                let along = (-0.2, 1.2);
                surfaces.push(if vertical {
                    occluder(params, &mut rng, across, along, z)
                } else {
                    occluder(params, &mut rng, along, across, z)
                });
            }
        }
    }
    let scene = SyntheticScene {
        name: format!("{}-{index:02}", kind.name()),
        surfaces,
        texture: NoiseParams {
            seed: rng.random(),
            ..params.texture
        },
        cameras: ring_cameras(params, &mut rng, focus)?,
        ambient: 0.1,
        d_min: params.d_min,
        delta: params.delta,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn generate_suite(seed: u64, kind: SuiteKind, params: &SuiteParams) -> Result<Suite> {
    let scenes = (0..params.scenes_per_suite)
        .map(|i| generate_scene(seed, kind, i, params))
        .collect::<Result<_>>()?;
    Ok(Suite { kind, scenes })
}

/// The three standard suites, deterministic in `seed`.
pub fn standard_suites(seed: u64) -> Result<Vec<Suite>> {
    standard_suites_with(seed, &SuiteParams::default())
}

pub fn standard_suites_with(seed: u64, params: &SuiteParams) -> Result<Vec<Suite>> {
    SuiteKind::ALL
        .iter()
        .map(|&k| generate_suite(seed, k, params))
        .collect()
}
