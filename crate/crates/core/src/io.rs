//! On-disk formats: PFM depth maps, binary PLY clouds, PNM images and
//! camera text files.
//!
//! Camera files hold 18 whitespace-separated numbers:
//!
//! ```text
//! r00 r01 r02 r10 r11 r12 r20 r21 r22   rotation, row-major
//! tx ty tz                              translation
//! fx fy cx cy                           intrinsics in pixels
//! width height
//! ```
//!
//! The pose is world-to-camera unless the file is read with
//! [`PoseConvention::CameraToWorld`]. Lines starting with `#` are skipped.
//!
//! PLY files are binary little-endian with exactly this header:
//!
//! ```text
//! ply
//! format binary_little_endian 1.0
//! element vertex <N>
//! property float x
//! property float y
//! property float z
//! property uchar red
//! property uchar green
//! property uchar blue
//! end_header
//! ```
//!
//! followed by `N` records of 15 bytes.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, RgbImage};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::grid::{Grid, ValidityMask};
use crate::pointcloud::PointCloud;

const PLY_RECORD: usize = 15;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes a single-channel little-endian PFM, bottom row first.
pub fn write_pfm(path: &Path, map: &Grid<f64>) -> Result<()> {
    let mut out = create(path)?;
    let (w, h) = map.dims();
    let mut bytes = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    bytes.reserve(4 * w * h);
    for y in (0..h).rev() {
        for x in 0..w {
            bytes.extend_from_slice(&(*map.get(x, y) as f32).to_le_bytes());
        }
    }
    out.write_all(&bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

fn read_token(reader: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut token = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        match reader.read(&mut byte) {
            Ok(0) => break,
            Ok(_) if byte[0].is_ascii_whitespace() => {
                if token.is_empty() {
                    continue;
                }
                break;
            }
            Ok(_) => token.push(byte[0]),
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    if token.is_empty() {
        return Err(Error::format(path, "unexpected end of header"));
    }
    String::from_utf8(token).map_err(|_| Error::format(path, "non-ASCII header"))
}

fn parse<T: std::str::FromStr>(token: &str, path: &Path, what: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| Error::format(path, format!("bad {what}: {token:?}")))
}

/// Reads a single-channel PFM of either endianness.
pub fn read_pfm(path: &Path) -> Result<Grid<f64>> {
    let mut reader = open(path)?;
    let magic = read_token(&mut reader, path)?;
    if magic != "Pf" {
        return Err(Error::format(
            path,
            format!("expected single-channel PFM (Pf), found {magic:?}"),
        ));
    }
    let w: usize = parse(&read_token(&mut reader, path)?, path, "width")?;
    let h: usize = parse(&read_token(&mut reader, path)?, path, "height")?;
    let scale: f64 = parse(&read_token(&mut reader, path)?, path, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, "scale must be non-zero"));
    }
    let little = scale < 0.0;
    let mut raw = vec![0u8; 4 * w * h];
    reader
        .read_exact(&mut raw)
        .map_err(|e| Error::io(path, e))?;
    let mut values = vec![0.0; w * h];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        let (x, row) = (i % w, i / w);
        values[(h - 1 - row) * w + x] = v as f64;
    }
    Grid::from_vec(w, h, values)
}

/// Header of a binary PLY with `n` colored vertices.
pub fn ply_header(n: usize) -> String {
    format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {n}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
}

/// Uncolored clouds are written white.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut bytes = ply_header(cloud.len()).into_bytes();
    bytes.reserve(PLY_RECORD * cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        for c in p {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
        let rgb = cloud.colors.as_ref().map_or([255; 3], |c| c[i]);
        bytes.extend_from_slice(&rgb);
    }
    let mut out = create(path)?;
    out.write_all(&bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads files produced by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::format(path, "missing end_header"))?
        + marker.len();
    let header =
        std::str::from_utf8(&bytes[..end]).map_err(|_| Error::format(path, "non-ASCII header"))?;
    let n = header
        .lines()
        .find_map(|l| l.strip_prefix("element vertex "))
        .ok_or_else(|| Error::format(path, "missing vertex count"))
        .and_then(|s| parse::<usize>(s.trim(), path, "vertex count"))?;
    if header != ply_header(n) {
        return Err(Error::format(path, "unsupported PLY layout"));
    }
    let body = &bytes[end..];
    if body.len() != n * PLY_RECORD {
        return Err(Error::format(
            path,
            format!(
                "expected {} body bytes, found {}",
                n * PLY_RECORD,
                body.len()
            ),
        ));
    }
    let mut points = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for rec in body.chunks_exact(PLY_RECORD) {
        let f = |k: usize| {
            f32::from_le_bytes([rec[4 * k], rec[4 * k + 1], rec[4 * k + 2], rec[4 * k + 3]])
        };
        points.push([f(0), f(1), f(2)]);
        colors.push([rec[12], rec[13], rec[14]]);
    }
    Ok(PointCloud {
        points,
        colors: Some(colors),
    })
}

/// Pose convention of a camera file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseConvention {
    #[default]
    WorldToCamera,
    CameraToWorld,
}

pub fn format_camera(cam: &CameraModel) -> String {
    let r = cam.rotation();
    let t = cam.translation();
    let k = cam.intrinsics();
    let mut s = String::new();
    for row in 0..3 {
        s += &format!("{:e} {:e} {:e}\n", r[(row, 0)], r[(row, 1)], r[(row, 2)]);
    }
    s += &format!("{:e} {:e} {:e}\n", t.x, t.y, t.z);
    s += &format!(
        "{:e} {:e} {:e} {:e}\n",
        k[(0, 0)],
        k[(1, 1)],
        k[(0, 2)],
        k[(1, 2)]
    );
    s += &format!("{} {}\n", cam.width(), cam.height());
    s
}

pub fn parse_camera(text: &str, convention: PoseConvention, path: &Path) -> Result<CameraModel> {
    let tokens: Vec<&str> = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(str::split_whitespace)
        .collect();
    if tokens.len() != 18 {
        return Err(Error::format(
            path,
            format!("camera needs 18 numbers, found {}", tokens.len()),
        ));
    }
    let v: Vec<f64> = tokens[..16]
        .iter()
        .map(|t| parse(t, path, "camera value"))
        .collect::<Result<_>>()?;
    let width: usize = parse(tokens[16], path, "width")?;
    let height: usize = parse(tokens[17], path, "height")?;
    let rotation = Matrix3::from_row_slice(&v[..9]);
    let translation = Vector3::new(v[9], v[10], v[11]);
    let intrinsics = Matrix3::new(v[12], 0.0, v[14], 0.0, v[13], v[15], 0.0, 0.0, 1.0);
    let cam = match convention {
        PoseConvention::WorldToCamera => {
            CameraModel::new(intrinsics, rotation, translation, width, height)
        }
        PoseConvention::CameraToWorld => {
            CameraModel::from_camera_to_world(intrinsics, rotation, translation, width, height)
        }
    };
    cam.map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_camera(path: &Path, cam: &CameraModel) -> Result<()> {
    fs::write(path, format_camera(cam)).map_err(|e| Error::io(path, e))
}

pub fn read_camera(path: &Path, convention: PoseConvention) -> Result<CameraModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_camera(&text, convention, path)
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Loads a PPM or PGM; gray images are expanded to RGB.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let reader = open(path)?;
    image::load(reader, ImageFormat::Pnm)
        .map(|img| img.to_rgb8())
        .map_err(|e| image_error(path, e))
}

/// Binary PPM.
pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend_from_slice(img.as_raw());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Binary PGM with 255 for set pixels.
pub fn write_mask(path: &Path, mask: &ValidityMask) -> Result<()> {
    let (w, h) = mask.dims();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(mask.as_slice().iter().map(|&m| if m { 255u8 } else { 0 }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Any nonzero gray level counts as set.
pub fn read_mask(path: &Path) -> Result<ValidityMask> {
    let reader = open(path)?;
    let gray: GrayImage = image::load(reader, ImageFormat::Pnm)
        .map(|img| img.to_luma8())
        .map_err(|e| image_error(path, e))?;
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(Grid::from_fn(w, h, |x, y| {
        let Luma([v]) = *gray.get_pixel(x as u32, y as u32);
        v > 0
    }))
}
