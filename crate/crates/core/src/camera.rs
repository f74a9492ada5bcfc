//! Pinhole camera model, focal-length normalization, depth sampling and
//! multi-view reference transforms.
//!
//! Pixel `(col, row)` covers `[col, col + 1) x [row, row + 1)`; its center sits
//! at `(col + 0.5, row + 0.5)` in the continuous image frame.

use std::path::Path;

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::Box2D;
use crate::geom3d::{Box3D, RotationMatrix};

/// Focal length (pixels) every image is rescaled to.
pub const NORMALIZED_FOCAL: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidIntrinsics(m));
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive: fx={} fy={}", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty image {}x{}", self.width, self.height));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if !(self.cx >= 0.0 && self.cx <= w && self.cy >= 0.0 && self.cy <= h) {
            return bad(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            ));
        }
        Ok(())
    }
}

/// Result of rescaling an image so that its focal length becomes 1000 px.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizedSize {
    pub width: u32,
    pub height: u32,
    /// `1000 / f_x`, kept real-valued for sub-pixel work.
    pub scale: f64,
    /// Intrinsics of the rescaled image before the integer rounding of its
    /// dimensions; `fx` is exactly 1000.
    pub scaled: ScaledIntrinsics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl NormalizedSize {
    /// Intrinsics of the resized image (integer dimensions).
    pub fn intrinsics(&self) -> CameraIntrinsics {
        let s = &self.scaled;
        CameraIntrinsics {
            fx: s.fx,
            fy: s.fy,
            cx: s.cx.min(self.width as f64),
            cy: s.cy.min(self.height as f64),
            width: self.width,
            height: self.height,
        }
    }
}

/// Rescales both image axes by `1000 / f_x`.
///
/// The vertical axis uses `f_x` as well, not `f_y`. Dimensions round half
/// away from zero and never drop below one pixel.
pub fn normalize_intrinsics(k: &CameraIntrinsics) -> NormalizedSize {
    // 1000 * v / f_x rounds once, where (1000 / f_x) * v would round twice.
    let rescale = |v: f64| NORMALIZED_FOCAL * v / k.fx;
    let scaled = ScaledIntrinsics {
        fx: NORMALIZED_FOCAL,
        fy: rescale(k.fy),
        cx: rescale(k.cx),
        cy: rescale(k.cy),
        width: rescale(k.width as f64),
        height: rescale(k.height as f64),
    };
    let to_pixels = |v: f64| v.round().clamp(1.0, u32::MAX as f64) as u32;
    NormalizedSize {
        width: to_pixels(scaled.width),
        height: to_pixels(scaled.height),
        scale: NORMALIZED_FOCAL / k.fx,
        scaled,
    }
}

pub fn project(k: &CameraIntrinsics, p: &Point3<f64>) -> Result<Point2<f64>> {
    if p.z.is_nan() || p.z <= 0.0 {
        return Err(Error::BehindCamera(p.z));
    }
    Ok(Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

pub fn backproject(k: &CameraIntrinsics, uv: &Point2<f64>, depth: f64) -> Result<Point3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(Point3::new(
        (uv.x - k.cx) * depth / k.fx,
        (uv.y - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Metric depth raster with a per-pixel validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map from row-major metric depths. Pixels whose value is not a
    /// finite positive number are marked invalid, as are pixels whose `mask`
    /// entry is `false`.
    pub fn new(width: u32, height: u32, values: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        let n = width as usize * height as usize;
        if values.len() != n {
            return Err(Error::InvalidDepthMap(format!(
                "expected {n} values for {width}x{height}, got {}",
                values.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != n {
                return Err(Error::InvalidDepthMap(format!(
                    "mask has {} entries, expected {n}",
                    m.len()
                )));
            }
        }
        let valid = values
            .iter()
            .enumerate()
            .map(|(i, d)| d.is_finite() && *d > 0.0 && mask.as_ref().map_or(true, |m| m[i]))
            .collect();
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn constant(width: u32, height: u32, depth: f64) -> Result<Self> {
        Self::new(width, height, vec![depth; width as usize * height as usize], None)
    }

    /// Reads a raw little-endian `f32` raster plus an optional one-byte-per-pixel
    /// validity mask (zero = invalid). Raw values are multiplied by
    /// `metric_scale` to obtain meters.
    pub fn read_raw(path: &Path, mask_path: Option<&Path>, width: u32, height: u32, metric_scale: f64) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::io(path, "raster length is not a multiple of 4 bytes"));
        }
        if !(metric_scale.is_finite() && metric_scale > 0.0) {
            return Err(Error::InvalidDepthMap(format!("metric scale {metric_scale}")));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64 * metric_scale)
            .collect();
        let mask = match mask_path {
            Some(p) => Some(
                std::fs::read(p)
                    .map_err(|e| Error::io(p, e))?
                    .into_iter()
                    .map(|b| b != 0)
                    .collect(),
            ),
            None => None,
        };
        Self::new(width, height, values, mask).map_err(|e| Error::io(path, e))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Depth at pixel `(col, row)` if the pixel is valid.
    pub fn at(&self, col: u32, row: u32) -> Option<f64> {
        if col >= self.width || row >= self.height {
            return None;
        }
        let i = row as usize * self.width as usize + col as usize;
        self.valid[i].then(|| self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Draws up to `n` valid pixels whose centers lie in `region`, without
/// replacement, and lifts them to camera-frame points.
///
/// The draw is a seeded partial shuffle of the valid-pixel list (row-major),
/// so the output order depends only on `seed`.
pub fn sample_region_points(
    depth: &DepthMap,
    k: &CameraIntrinsics,
    region: &Box2D,
    n: usize,
    seed: u64,
) -> Result<Vec<Point3<f64>>> {
    if depth.width != k.width || depth.height != k.height {
        return Err(Error::InvalidDepthMap(format!(
            "depth map is {}x{} but the camera is {}x{}",
            depth.width, depth.height, k.width, k.height
        )));
    }
    let col_range = pixel_span(region.x1(), region.x2(), depth.width);
    let row_range = pixel_span(region.y1(), region.y2(), depth.height);
    let mut candidates: Vec<(u32, u32, f64)> = Vec::new();
    for row in row_range {
        for col in col_range.clone() {
            if let Some(d) = depth.at(col, row) {
                candidates.push((col, row, d));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoValidDepth);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = n.min(candidates.len());
    let (chosen, _) = candidates.partial_shuffle(&mut rng, take);
    chosen
        .iter()
        .map(|&(col, row, d)| backproject(k, &Point2::new(col as f64 + 0.5, row as f64 + 0.5), d))
        .collect()
}

/// Pixel indices whose centers fall inside `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, extent: u32) -> std::ops::Range<u32> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(extent as f64 - 1.0);
    if last < first {
        return 0..0;
    }
    first as u32..last as u32 + 1
}

/// Rigid transform taking view-`i` camera coordinates into the reference
/// (first view) camera frame: `x_ref = R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds a pose from a row-major 3x3 rotation and a translation.
    pub fn from_parts(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let m = Matrix3::from_fn(|r, c| rotation[r][c]);
        Ok(Self::new(RotationMatrix::new(m)?, translation.into()))
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.matrix() * p.coords + self.translation)
    }

    /// `self` after `first`: applying the result equals applying `first`, then `self`.
    pub fn after(&self, first: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&first.rotation),
            translation: self.rotation.matrix() * first.translation + self.translation,
        }
    }
}

pub fn transform_to_reference(pose: &Pose, b: &Box3D) -> Box3D {
    b.transformed(&pose.rotation, &pose.translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom3d::{corners, euler_to_rotation, EulerAngles};
    use rand::Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_intrinsics(&CameraIntrinsics::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap());
        assert_eq!((n.width, n.height, n.scale), (640, 480, 1.0));
        let n = normalize_intrinsics(&k());
        assert_eq!((n.width, n.height, n.scale), (1280, 960, 2.0));
        let n = normalize_intrinsics(&CameraIntrinsics::new(2000.0, 2000.0, 960.0, 540.0, 1920, 1080).unwrap());
        assert_eq!((n.width, n.height, n.scale), (960, 540, 0.5));
    }

    #[test]
    fn normalization_uses_fx_for_height_and_is_idempotent() {
        let k = CameraIntrinsics::new(800.0, 400.0, 300.0, 200.0, 600, 400).unwrap();
        let n = normalize_intrinsics(&k);
        assert_eq!((n.width, n.height), (750, 500));
        let again = normalize_intrinsics(&n.intrinsics());
        assert_eq!((again.width, again.height, again.scale), (n.width, n.height, 1.0));
    }

    #[test]
    fn tiny_images_keep_one_pixel() {
        let k = CameraIntrinsics::new(1e6, 1e6, 0.5, 0.5, 1, 1).unwrap();
        let n = normalize_intrinsics(&k);
        assert_eq!((n.width, n.height), (1, 1));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 0.0, 1, 1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 1).is_err());
    }

    #[test]
    fn projection_examples() {
        let k = k();
        let uv = project(&k, &Point3::new(0.0, 0.0, 3.0)).unwrap();
        assert_eq!((uv.x, uv.y), (320.0, 240.0));
        let near = project(&k, &Point3::new(1.0, 1.0, 2.0)).unwrap();
        let far = project(&k, &Point3::new(1.0, 1.0, 4.0)).unwrap();
        assert!(((near.x - k.cx) - 2.0 * (far.x - k.cx)).abs() < 1e-12);
        assert!(matches!(
            project(&k, &Point3::new(0.0, 0.0, 0.0)),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn backprojection_examples() {
        let k = k();
        let p = backproject(&k, &Point2::new(k.cx, k.cy), 2.5).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 2.5));
        let p = backproject(&k, &Point2::new(k.cx + k.fx, k.cy), 2.0).unwrap();
        assert_eq!(p.x, 2.0);
        assert!(matches!(
            backproject(&k, &Point2::new(1.0, 1.0), 0.0),
            Err(Error::InvalidDepth(_))
        ));
        assert!(backproject(&k, &Point2::new(1.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn project_backproject_inverse() {
        let k = k();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = Point3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.1..50.0),
            );
            let q = backproject(&k, &project(&k, &p).unwrap(), p.z).unwrap();
            assert!((p - q).norm() < 1e-9);
            let uv = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let back = project(&k, &backproject(&k, &uv, p.z).unwrap()).unwrap();
            assert!((uv - back).norm() < 1e-9);
        }
    }

    #[test]
    fn constant_depth_single_sample() {
        let k = k();
        let depth = DepthMap::constant(640, 480, 2.0).unwrap();
        let region = Box2D::new(300.0, 200.0, 340.0, 280.0).unwrap();
        for seed in 0..10 {
            let pts = sample_region_points(&depth, &k, &region, 1, seed).unwrap();
            assert_eq!(pts.len(), 1);
            assert_eq!(pts[0].z, 2.0);
        }
    }

    #[test]
    fn exhaustion_returns_every_valid_pixel() {
        let k = CameraIntrinsics::new(10.0, 10.0, 5.0, 5.0, 10, 10).unwrap();
        let depth = DepthMap::constant(10, 10, 1.0).unwrap();
        let region = Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let a = sample_region_points(&depth, &k, &region, 100, 1).unwrap();
        let b = sample_region_points(&depth, &k, &region, 500, 2).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(b.len(), 100);
        assert_ne!(a, b, "order should depend on the seed");
        let key = |v: &[Point3<f64>]| {
            let mut k: Vec<(i64, i64)> = v.iter().map(|p| ((p.x * 1e6) as i64, (p.y * 1e6) as i64)).collect();
            k.sort();
            k
        };
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn invalid_pixels_are_never_sampled() {
        let k = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let mut values = vec![1.5; 16];
        values[0] = 0.0;
        values[1] = f64::NAN;
        values[2] = -3.0;
        let mut mask = vec![true; 16];
        mask[3] = false;
        let depth = DepthMap::new(4, 4, values, Some(mask)).unwrap();
        assert_eq!(depth.valid_count(), 12);
        let region = Box2D::new(0.0, 0.0, 4.0, 4.0).unwrap();
        let pts = sample_region_points(&depth, &k, &region, 100, 0).unwrap();
        assert_eq!(pts.len(), 12);
        assert!(pts.iter().all(|p| p.z == 1.5));

        let top_row = Box2D::new(0.0, 0.0, 4.0, 1.0).unwrap();
        assert_eq!(
            sample_region_points(&depth, &k, &top_row, 5, 0),
            Err(Error::NoValidDepth)
        );
    }

    #[test]
    fn pixel_span_uses_centers() {
        assert_eq!(pixel_span(0.0, 10.0, 10), 0..10);
        assert!(pixel_span(0.6, 1.4, 10).is_empty());
        assert_eq!(pixel_span(0.5, 1.5, 10), 0..2);
        assert!(pixel_span(3.2, 3.4, 10).is_empty());
    }

    #[test]
    fn reference_transform_examples() {
        let b = Box3D::from_array([0.5, -0.2, 4.0, 1.0, 2.0, 3.0, 0.1, 0.2, -0.3]).unwrap();
        let same = transform_to_reference(&Pose::identity(), &b);
        assert_eq!(same.center(), b.center());
        assert_eq!(same.size(), b.size());
        // angles pass through the euler round trip
        for (x, y) in same.angles().to_array().iter().zip(b.angles().to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
        let shift = Pose::new(RotationMatrix::identity(), Vector3::new(1.0, 2.0, 3.0));
        let moved = transform_to_reference(&shift, &b);
        assert_eq!(moved.center(), &Point3::new(1.5, 1.8, 7.0));
        assert_eq!(moved.size(), b.size());
    }

    #[test]
    fn reference_transform_maps_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let pose = Pose::new(
                euler_to_rotation(&EulerAngles::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )),
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ),
            );
            let b = Box3D::from_array([
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(1.0..9.0),
                rng.random_range(0.2..3.0),
                rng.random_range(0.2..3.0),
                rng.random_range(0.2..3.0),
                rng.random_range(-0.45..0.45),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ])
            .unwrap();
            let out = corners(&transform_to_reference(&pose, &b));
            for (c, o) in corners(&b).iter().zip(out.iter()) {
                assert!((pose.apply(c) - o).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn pose_composition() {
        let p1 = Pose::new(
            euler_to_rotation(&EulerAngles::new(0.1, 0.2, 0.3)),
            Vector3::new(1.0, 0.0, 0.0),
        );
        let p2 = Pose::new(
            euler_to_rotation(&EulerAngles::new(-0.2, 0.0, 0.7)),
            Vector3::new(0.0, -2.0, 0.5),
        );
        let b = Box3D::from_array([0.0, 0.0, 3.0, 1.0, 1.0, 2.0, 0.0, 0.0, 0.1]).unwrap();
        let stepwise = transform_to_reference(&p2, &transform_to_reference(&p1, &b));
        let composed = transform_to_reference(&p2.after(&p1), &b);
        for (a, c) in corners(&stepwise).iter().zip(corners(&composed).iter()) {
            assert!((a - c).norm() < 1e-9);
        }
    }

    #[test]
    fn raw_raster_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let raster = dir.path().join("d.f32");
        let mask = dir.path().join("d.mask");
        let vals: [f32; 4] = [1000.0, 0.0, f32::NAN, 2500.0];
        std::fs::write(&raster, vals.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()).unwrap();
        std::fs::write(&mask, [1u8, 1, 1, 0]).unwrap();
        let d = DepthMap::read_raw(&raster, Some(&mask), 2, 2, 1e-3).unwrap();
        assert_eq!(d.at(0, 0), Some(1.0));
        assert_eq!(d.at(1, 0), None);
        assert_eq!(d.at(0, 1), None);
        assert_eq!(d.at(1, 1), None);
        assert!(DepthMap::read_raw(&raster, None, 3, 3, 1.0).is_err());
    }
}
