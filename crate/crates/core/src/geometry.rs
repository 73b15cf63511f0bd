//! Pinhole cameras, depth hypotheses and plane-sweep warping.
//!
//! Cameras are stored world-to-camera: `x_cam = R * x_world + t`, and pixel
//! coordinates put pixel centers on integers, so a `W`-pixel-wide image spans
//! `[0, W - 1]` horizontally.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::grid::{Grid, ValidityMask};

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    width: usize,
    height: usize,
}

impl CameraModel {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let k = &intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::config("intrinsics must be upper-triangular"));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0) {
            return Err(Error::config("intrinsics must have a positive diagonal"));
        }
        let deviation = (rotation.transpose() * rotation - Matrix3::identity())
            .abs()
            .max();
        if !(deviation <= ORTHONORMAL_TOL) {
            return Err(Error::config(format!(
                "rotation is not orthonormal (max |R^T R - I| = {deviation:e})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::config("translation must be finite"));
        }
        if width == 0 || height == 0 {
            return Err(Error::config("camera width and height must be >= 1"));
        }
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            width,
            height,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Self::new(k, rotation, translation, width, height)
    }

    /// Camera placed at `eye` looking at `target`; image y points along `-up`.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(Error::config(
                "look_at: up vector parallel to view direction",
            ));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::from_pinhole(fx, fy, cx, cy, rotation, translation, width, height)
    }

    /// Builds a camera from a camera-to-world pose by inverting it.
    pub fn from_camera_to_world(
        intrinsics: Matrix3<f64>,
        rotation_c2w: Matrix3<f64>,
        translation_c2w: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let rotation = rotation_c2w.transpose();
        let translation = -(rotation * translation_c2w);
        Self::new(intrinsics, rotation, translation, width, height)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// The same camera observing an image resampled by `factor` (e.g. 0.25).
    ///
    /// Pixel `u` of the resampled image covers the original interval centered
    /// on `(u + 0.5) / factor - 0.5`, which matches area-averaged downsampling
    /// and pixel-center bilinear upsampling.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::config("scale factor must be positive"));
        }
        let width = (self.width as f64 * factor).round() as usize;
        let height = (self.height as f64 * factor).round() as usize;
        let k = &self.intrinsics;
        let mut scaled = *k;
        scaled[(0, 0)] = k[(0, 0)] * factor;
        scaled[(0, 1)] = k[(0, 1)] * factor;
        scaled[(1, 1)] = k[(1, 1)] * factor;
        scaled[(0, 2)] = (k[(0, 2)] + 0.5) * factor - 0.5;
        scaled[(1, 2)] = (k[(1, 2)] + 0.5) * factor - 0.5;
        Self::new(scaled, self.rotation, self.translation, width, height)
    }

    pub fn to_camera_frame(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Projects a world point; returns the pixel and the camera-frame depth.
    pub fn project(&self, point: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        let pc = self.to_camera_frame(point);
        if !(pc.z > 0.0) {
            return Err(Error::BehindCamera(pc.z));
        }
        let h = self.intrinsics * pc;
        Ok((Vector2::new(h.x / h.z, h.y / h.z), pc.z))
    }

    /// Lifts a pixel at camera-frame depth `depth` back to world coordinates.
    pub fn backproject(&self, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::InvalidDepth(depth));
        }
        let pc = self.camera_ray(pixel) * depth;
        Ok(self.rotation.transpose() * (pc - self.translation))
    }

    /// Camera-frame ray through `pixel`, scaled so its z component is 1.
    pub fn camera_ray(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let k = &self.intrinsics;
        let y = (pixel.y - k[(1, 2)]) / k[(1, 1)];
        let x = (pixel.x - k[(0, 2)] - k[(0, 1)] * y) / k[(0, 0)];
        Vector3::new(x, y, 1.0)
    }

    /// World-frame ray through `pixel` with unit camera-frame depth per unit length of `t`.
    pub fn world_ray(&self, pixel: &Vector2<f64>) -> (Vector3<f64>, Vector3<f64>) {
        (
            self.center(),
            self.rotation.transpose() * self.camera_ray(pixel),
        )
    }

    pub fn in_bounds(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }
}

/// Depth hypotheses swept by one stage: a shared list or one list per pixel.
#[derive(Clone, Debug, PartialEq)]
pub enum DepthHypotheses {
    Uniform(Vec<f64>),
    PerPixel {
        count: usize,
        width: usize,
        height: usize,
        /// Pixel-major: the `count` depths of pixel `p` are `values[p*count..][..count]`.
        values: Vec<f64>,
    },
}

impl DepthHypotheses {
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        check_increasing(&values)?;
        Ok(Self::Uniform(values))
    }

    pub fn per_pixel(count: usize, width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if count == 0 || values.len() != count * width * height {
            return Err(Error::config(
                "per-pixel hypotheses have inconsistent length",
            ));
        }
        for chunk in values.chunks_exact(count) {
            check_increasing(chunk)?;
        }
        Ok(Self::PerPixel {
            count,
            width,
            height,
            values,
        })
    }

    pub fn count(&self) -> usize {
        match self {
            Self::Uniform(v) => v.len(),
            Self::PerPixel { count, .. } => *count,
        }
    }

    /// Hypotheses for the pixel with row-major index `pixel`.
    #[inline]
    pub fn at(&self, pixel: usize) -> &[f64] {
        match self {
            Self::Uniform(v) => v,
            Self::PerPixel { count, values, .. } => &values[pixel * count..(pixel + 1) * count],
        }
    }

    pub(crate) fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        match self {
            Self::Uniform(_) => Ok(()),
            Self::PerPixel {
                width: w,
                height: h,
                ..
            } if *w == width && *h == height => Ok(()),
            Self::PerPixel { .. } => Err(Error::config(
                "per-pixel hypotheses do not match the map dimensions",
            )),
        }
    }
}

fn check_increasing(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidCount(0));
    }
    if let Some(&bad) = values.iter().find(|&&d| !(d > 0.0) || !d.is_finite()) {
        return Err(Error::InvalidDepth(bad));
    }
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config(
            "depth hypotheses must be strictly increasing",
        ));
    }
    Ok(())
}

/// `n` depths uniformly covering `[d_min, d_min + 2 * delta)`.
pub fn uniform_hypotheses(d_min: f64, delta: f64, n: usize) -> Result<DepthHypotheses> {
    if n < 2 {
        return Err(Error::InvalidCount(n));
    }
    if !(d_min > 0.0) {
        return Err(Error::InvalidDepth(d_min));
    }
    if !(delta > 0.0) {
        return Err(Error::config("depth half-range must be positive"));
    }
    let spacing = 2.0 * delta / n as f64;
    DepthHypotheses::uniform((0..n).map(|j| d_min + j as f64 * spacing).collect())
}

/// Depth at which a reference pixel is swept.
#[derive(Clone, Copy, Debug)]
pub enum SweepDepth<'a> {
    Plane(f64),
    PerPixel(&'a Grid<f64>),
}

/// Maps reference pixels at a given depth to source pixel coordinates.
///
/// `src ~ depth * A * [u, v, 1] + b`, with `A = K_s R_s R_r^T K_r^-1` and
/// `b = K_s (t_s - R_s R_r^T t_r)`.
#[derive(Clone, Debug)]
pub struct PixelTransfer {
    a: Matrix3<f64>,
    b: Vector3<f64>,
    src_width: usize,
    src_height: usize,
}

impl PixelTransfer {
    pub fn new(ref_cam: &CameraModel, src_cam: &CameraModel) -> Result<Self> {
        let k_ref_inv = ref_cam
            .intrinsics
            .try_inverse()
            .ok_or_else(|| Error::config("reference intrinsics not invertible"))?;
        let rel = src_cam.rotation * ref_cam.rotation.transpose();
        Ok(Self {
            a: src_cam.intrinsics * rel * k_ref_inv,
            b: src_cam.intrinsics * (src_cam.translation - rel * ref_cam.translation),
            src_width: src_cam.width,
            src_height: src_cam.height,
        })
    }

    /// Source pixel for reference pixel `(u, v)` at `depth`, or `None` when it
    /// falls behind the source camera or outside `[0, W-1] x [0, H-1]`.
    #[inline]
    pub fn transfer(&self, u: f64, v: f64, depth: f64) -> Option<(f64, f64)> {
        let a = &self.a;
        let x = depth * (a[(0, 0)] * u + a[(0, 1)] * v + a[(0, 2)]) + self.b.x;
        let y = depth * (a[(1, 0)] * u + a[(1, 1)] * v + a[(1, 2)]) + self.b.y;
        let z = depth * (a[(2, 0)] * u + a[(2, 1)] * v + a[(2, 2)]) + self.b.z;
        if !(z > 0.0) {
            return None;
        }
        let (su, sv) = (x / z, y / z);
        let (umax, vmax) = ((self.src_width - 1) as f64, (self.src_height - 1) as f64);
        let inside = su >= -BORDER_SLACK
            && sv >= -BORDER_SLACK
            && su <= umax + BORDER_SLACK
            && sv <= vmax + BORDER_SLACK;
        inside.then(|| (su.clamp(0.0, umax), sv.clamp(0.0, vmax)))
    }
}

/// Rounding slack, in pixels, on the image border.
const BORDER_SLACK: f64 = 1e-9;

/// Bilinear sample of every channel of `map` at `(u, v)`, which must be in bounds.
#[inline]
pub(crate) fn sample_bilinear(map: &FeatureMap, u: f64, v: f64, out: &mut [f64]) {
    let (w, h, c) = (map.width(), map.height(), map.channels());
    let x0 = (u.floor() as usize).min(w.saturating_sub(2));
    let y0 = (v.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let data = map.data();
    let p00 = &data[(y0 * w + x0) * c..][..c];
    let p10 = &data[(y0 * w + x1) * c..][..c];
    let p01 = &data[(y1 * w + x0) * c..][..c];
    let p11 = &data[(y1 * w + x1) * c..][..c];
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w10 = fx * (1.0 - fy);
    let w01 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    for ch in 0..c {
        out[ch] = w00 * p00[ch] + w10 * p10[ch] + w01 * p01[ch] + w11 * p11[ch];
    }
}

/// Resamples a source feature map into the reference view at the given depth.
///
/// Out-of-bounds samples are zero and flagged false in the returned mask.
pub fn warp_to_reference(
    src_map: &FeatureMap,
    ref_cam: &CameraModel,
    src_cam: &CameraModel,
    depth: SweepDepth<'_>,
) -> Result<(FeatureMap, ValidityMask)> {
    if src_map.width() != src_cam.width || src_map.height() != src_cam.height {
        return Err(Error::config(format!(
            "feature map is {}x{} but source camera is {}x{}",
            src_map.width(),
            src_map.height(),
            src_cam.width,
            src_cam.height
        )));
    }
    let (w, h) = (ref_cam.width, ref_cam.height);
    match depth {
        SweepDepth::Plane(d) if !(d > 0.0) => return Err(Error::InvalidDepth(d)),
        SweepDepth::PerPixel(map) => {
            if map.dims() != (w, h) {
                return Err(Error::config(
                    "per-pixel depth map does not match reference camera",
                ));
            }
            if let Some(&bad) = map.as_slice().iter().find(|&&d| !(d > 0.0)) {
                return Err(Error::InvalidDepth(bad));
            }
        }
        _ => {}
    }
    let transfer = PixelTransfer::new(ref_cam, src_cam)?;
    let c = src_map.channels();
    let mut data = vec![0.0; w * h * c];
    let mut mask = Grid::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let d = match depth {
                SweepDepth::Plane(d) => d,
                SweepDepth::PerPixel(map) => map.as_slice()[p],
            };
            if let Some((su, sv)) = transfer.transfer(x as f64, y as f64, d) {
                sample_bilinear(src_map, su, sv, &mut data[p * c..(p + 1) * c]);
                mask.as_mut_slice()[p] = true;
            }
        }
    }
    let warped = FeatureMap::new(w, h, c, src_map.scale(), data)?;
    Ok((warped, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn k100() -> Matrix3<f64> {
        Matrix3::new(100.0, 0.0, 50.0, 0.0, 100.0, 50.0, 0.0, 0.0, 1.0)
    }

    fn identity_cam(k: Matrix3<f64>) -> CameraModel {
        CameraModel::new(k, Matrix3::identity(), Vector3::zeros(), 101, 101).unwrap()
    }

    #[test]
    fn project_on_optical_axis() {
        let cam = identity_cam(Matrix3::identity());
        let (px, d) = cam.project(&Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));
        assert_eq!(d, 5.0);
    }

    #[test]
    fn project_hand_computed() {
        let cam = identity_cam(k100());
        let (px, d) = cam.project(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(100.0, 50.0));
        assert_eq!(d, 2.0);
    }

    #[test]
    fn project_behind_camera() {
        let cam = identity_cam(k100());
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn backproject_hand_computed() {
        let cam = identity_cam(k100());
        let p = cam.backproject(&Vector2::new(100.0, 50.0), 2.0).unwrap();
        assert!((p - Vector3::new(1.0, 0.0, 2.0)).norm() < 1e-12);
        assert!(matches!(
            cam.backproject(&Vector2::new(1.0, 1.0), 0.0),
            Err(Error::InvalidDepth(_))
        ));
    }

    #[test]
    fn rejects_bad_cameras() {
        let mut k = k100();
        k[(1, 0)] = 1.0;
        assert!(CameraModel::new(k, Matrix3::identity(), Vector3::zeros(), 4, 4).is_err());
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraModel::new(k100(), skewed, Vector3::zeros(), 4, 4).is_err());
        assert!(CameraModel::new(k100(), Matrix3::identity(), Vector3::zeros(), 0, 4).is_err());
    }

    #[test]
    fn camera_to_world_convention_inverts() {
        let r = *Rotation3::from_euler_angles(0.1, -0.2, 0.3).matrix();
        let t = Vector3::new(0.5, -1.0, 2.0);
        let cam = CameraModel::new(k100(), r, t, 64, 64).unwrap();
        let c2w =
            CameraModel::from_camera_to_world(k100(), r.transpose(), cam.center(), 64, 64).unwrap();
        assert!((c2w.rotation() - cam.rotation()).abs().max() < 1e-12);
        assert!((c2w.translation() - cam.translation()).norm() < 1e-12);
    }

    #[test]
    fn scaled_camera_matches_pixel_centers() {
        let cam = identity_cam(k100());
        let quarter = CameraModel::from_pinhole(
            100.0,
            100.0,
            49.5,
            49.5,
            Matrix3::identity(),
            Vector3::zeros(),
            64,
            48,
        )
        .unwrap()
        .scaled(0.25)
        .unwrap();
        assert_eq!((quarter.width(), quarter.height()), (16, 12));
        assert_eq!(quarter.intrinsics()[(0, 2)], 12.0);
        // a point on the optical axis stays on the (scaled) principal point
        let (px, _) = cam.project(&Vector3::new(0.0, 0.0, 3.0)).unwrap();
        assert_eq!(px, Vector2::new(50.0, 50.0));
    }

    #[test]
    fn uniform_hypotheses_examples() {
        let h = uniform_hypotheses(425.0, 240.0, 32).unwrap();
        let v = h.at(0);
        assert_eq!(v.len(), 32);
        assert_eq!(v[0], 425.0);
        assert!((v[1] - v[0] - 15.0).abs() < 1e-12);
        assert!((v[31] - 890.0).abs() < 1e-9);

        assert_eq!(uniform_hypotheses(1.0, 0.5, 2).unwrap().at(0), &[1.0, 1.5]);
        assert_eq!(
            uniform_hypotheses(1.0, 1.0, 4).unwrap().at(0),
            &[1.0, 1.5, 2.0, 2.5]
        );
        assert!(matches!(
            uniform_hypotheses(1.0, 1.0, 1),
            Err(Error::InvalidCount(1))
        ));
    }

    #[test]
    fn hypotheses_must_increase() {
        assert!(DepthHypotheses::uniform(vec![1.0, 1.0]).is_err());
        assert!(DepthHypotheses::uniform(vec![-1.0, 1.0]).is_err());
        assert!(DepthHypotheses::per_pixel(2, 1, 2, vec![1.0, 2.0, 3.0, 2.0]).is_err());
    }

    fn ramp_map(w: usize, h: usize, c: usize) -> FeatureMap {
        let mut data = Vec::with_capacity(w * h * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push((x as f64 * 0.37 + y as f64 * 1.3 + ch as f64).sin());
                }
            }
        }
        FeatureMap::new(w, h, c, 1.0, data).unwrap()
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let cam = CameraModel::from_pinhole(
            40.0,
            40.0,
            15.5,
            11.5,
            Matrix3::identity(),
            Vector3::new(0.1, 0.0, 0.0),
            32,
            24,
        )
        .unwrap();
        let src = ramp_map(32, 24, 4);
        for d in [0.5, 3.0, 100.0] {
            let (warped, mask) = warp_to_reference(&src, &cam, &cam, SweepDepth::Plane(d)).unwrap();
            assert_eq!(mask.count(), 32 * 24);
            for (a, b) in warped.data().iter().zip(src.data()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn near_plane_exits_source_image() {
        let ref_cam = CameraModel::from_pinhole(
            40.0,
            40.0,
            15.5,
            11.5,
            Matrix3::identity(),
            Vector3::zeros(),
            32,
            24,
        )
        .unwrap();
        let src_cam = CameraModel::from_pinhole(
            40.0,
            40.0,
            15.5,
            11.5,
            Matrix3::identity(),
            Vector3::new(-1.0, 0.0, 0.0),
            32,
            24,
        )
        .unwrap();
        let src = ramp_map(32, 24, 2);
        // disparity 40 * 1 / 0.5 = 80 px, wider than the image
        let (warped, mask) =
            warp_to_reference(&src, &ref_cam, &src_cam, SweepDepth::Plane(0.5)).unwrap();
        assert_eq!(mask.count(), 0);
        assert!(warped.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn warp_rejects_dimension_mismatch() {
        let cam = identity_cam(k100());
        let src = ramp_map(10, 10, 1);
        assert!(matches!(
            warp_to_reference(&src, &cam, &cam, SweepDepth::Plane(1.0)),
            Err(Error::Config(_))
        ));
    }
}
