//! Oriented 3D boxes in the camera frame (+x right, +y down, +z forward).
//!
//! Orientation is stored as normalized Euler angles: a value `t` in `[-1, 1)`
//! stands for the angle `pi * t`. The rotation is composed as
//! `R = R_y(yaw) * R_x(pitch) * R_z(roll)`, so roll is applied first in the
//! box frame and yaw last. Box extents `(w, h, l)` run along the box's local
//! x, y and z axes, i.e. the columns of `R`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

/// Orthonormality tolerance for [`RotationMatrix::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;
/// Half-space membership slack used while clipping.
pub const CLIP_EPSILON: f64 = 1e-12;
/// Vertices closer than this are merged before measuring volume.
pub const MERGE_EPSILON: f64 = 1e-10;
/// Two variants whose traces differ by less than this are considered tied.
pub const TRACE_TIE_EPSILON: f64 = 1e-9;
/// Volumes below this (cubic meters) count as degenerate.
pub const MIN_VOLUME: f64 = 1e-15;

/// Normalized Euler angles, each in `[-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn new(pitch: f64, roll: f64, yaw: f64) -> Self {
        Self { pitch, roll, yaw }
    }

    /// `(pitch, roll, yaw)`, the order used by the text format.
    pub fn to_array(&self) -> [f64; 3] {
        [self.pitch, self.roll, self.yaw]
    }

    fn in_range(&self) -> bool {
        self.to_array().iter().all(|t| t.is_finite() && (-1.0..1.0).contains(t))
    }
}

/// Maps an angle in radians to the normalized range `[-1, 1)`.
pub fn normalize_angle(radians: f64) -> f64 {
    let t = (radians / PI).rem_euclid(2.0);
    let t = if t >= 1.0 { t - 2.0 } else { t };
    // rem_euclid can land exactly on 2.0 for tiny negative inputs
    if t >= 1.0 {
        -1.0
    } else {
        t
    }
}

/// A proper rotation: orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entries".into()));
        }
        let ortho_err = (m.transpose() * m - Matrix3::identity()).amax();
        if ortho_err > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation(format!(
                "not orthonormal (max |R^T R - I| = {ortho_err:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation(format!("determinant {det}")));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    #[cfg(test)]
    pub(crate) fn new_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn euler_to_rotation(angles: &EulerAngles) -> RotationMatrix {
    RotationMatrix(rot_y(PI * angles.yaw) * rot_x(PI * angles.pitch) * rot_z(PI * angles.roll))
}

/// Inverse of [`euler_to_rotation`], with pitch reported in `[-0.5, 0.5]`.
///
/// At gimbal lock (pitch of +-0.5) roll and yaw are not separable; roll is
/// then fixed to exactly zero.
pub fn rotation_to_euler(r: &RotationMatrix) -> Result<EulerAngles> {
    let r = RotationMatrix::new(r.0)?;
    Ok(rotation_to_euler_unchecked(&r.0))
}

pub(crate) fn rotation_to_euler_unchecked(m: &Matrix3<f64>) -> EulerAngles {
    let sin_pitch = (-m[(1, 2)]).clamp(-1.0, 1.0);
    let cos_pitch = m[(1, 0)].hypot(m[(1, 1)]);
    if cos_pitch < 1e-12 {
        let pitch = if sin_pitch > 0.0 { 0.5 } else { -0.5 };
        let yaw = (-m[(2, 0)]).atan2(m[(0, 0)]);
        return EulerAngles::new(pitch, 0.0, normalize_angle(yaw));
    }
    let pitch = sin_pitch.atan2(cos_pitch);
    let yaw = m[(0, 2)].atan2(m[(2, 2)]);
    let roll = m[(1, 0)].atan2(m[(1, 1)]);
    EulerAngles::new(normalize_angle(pitch), normalize_angle(roll), normalize_angle(yaw))
}

/// Oriented box: center and extents in meters plus normalized Euler angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 9]", into = "[f64; 9]")]
pub struct Box3D {
    center: Point3<f64>,
    size: Vector3<f64>,
    angles: EulerAngles,
}

impl Box3D {
    pub fn new(center: Point3<f64>, size: Vector3<f64>, angles: EulerAngles) -> Result<Self> {
        check_finite("3D box", center.coords.as_slice())?;
        check_finite("3D box", size.as_slice())?;
        if size.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidBox(format!(
                "3D box extents must be positive, got ({}, {}, {})",
                size.x, size.y, size.z
            )));
        }
        if !angles.in_range() {
            return Err(Error::InvalidBox(format!(
                "normalized angles must lie in [-1, 1), got {:?}",
                angles.to_array()
            )));
        }
        Ok(Self { center, size, angles })
    }

    /// Builds a box from `(x_c, y_c, z_c, w, h, l, pitch, roll, yaw)`.
    pub fn from_array(v: [f64; 9]) -> Result<Self> {
        Self::new(
            Point3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
            EulerAngles::new(v[6], v[7], v[8]),
        )
    }

    /// Axis-aligned box (all angles zero).
    pub fn axis_aligned(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        Self::new(center.into(), size.into(), EulerAngles::default())
    }

    pub fn to_array(&self) -> [f64; 9] {
        let c = &self.center;
        let s = &self.size;
        let a = &self.angles;
        [c.x, c.y, c.z, s.x, s.y, s.z, a.pitch, a.roll, a.yaw]
    }

    pub fn center(&self) -> &Point3<f64> {
        &self.center
    }

    pub fn size(&self) -> &Vector3<f64> {
        &self.size
    }

    pub fn angles(&self) -> &EulerAngles {
        &self.angles
    }

    pub fn rotation(&self) -> RotationMatrix {
        euler_to_rotation(&self.angles)
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    /// Same box expressed in another frame: `x' = R x + t`.
    pub fn transformed(&self, rotation: &RotationMatrix, translation: &Vector3<f64>) -> Box3D {
        let r = rotation.0 * self.rotation().0;
        Box3D {
            center: Point3::from(rotation.0 * self.center.coords + translation),
            size: self.size,
            angles: rotation_to_euler_unchecked(&r),
        }
    }

    /// Point containment test (surface inclusive).
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let local = self.rotation().0.transpose() * (p - self.center);
        local.x.abs() <= 0.5 * self.size.x && local.y.abs() <= 0.5 * self.size.y && local.z.abs() <= 0.5 * self.size.z
    }
}

impl TryFrom<[f64; 9]> for Box3D {
    type Error = Error;

    fn try_from(v: [f64; 9]) -> Result<Self> {
        Self::from_array(v)
    }
}

impl From<Box3D> for [f64; 9] {
    fn from(b: Box3D) -> Self {
        b.to_array()
    }
}

/// The eight corners, `center + R * (+-w/2, +-h/2, +-l/2)`.
///
/// Corner `i` takes the minus sign on x when bit 2 of `i` is clear, on y when
/// bit 1 is clear and on z when bit 0 is clear (x-major order).
pub fn corners(b: &Box3D) -> [Point3<f64>; 8] {
    corners_with(b, &b.rotation().0)
}

fn corners_with(b: &Box3D, r: &Matrix3<f64>) -> [Point3<f64>; 8] {
    let half = 0.5 * b.size;
    std::array::from_fn(|i| {
        let sign = |bit: usize| if i & bit == 0 { -1.0 } else { 1.0 };
        let local = Vector3::new(sign(4) * half.x, sign(2) * half.y, sign(1) * half.z);
        b.center + r * local
    })
}

/// All 24 signed permutation matrices with determinant +1.
pub fn proper_relabelings() -> Vec<Matrix3<f64>> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for perm in PERMS {
        for signs in 0..8u8 {
            let mut p = Matrix3::zeros();
            for (col, &row) in perm.iter().enumerate() {
                p[(row, col)] = if signs & (1 << col) == 0 { 1.0 } else { -1.0 };
            }
            if p.determinant() > 0.0 {
                out.push(p);
            }
        }
    }
    out
}

/// Re-labels the box axes so its rotation is the one closest to identity.
///
/// Every proper relabeling `P` describes the same solid with rotation
/// `R * P` and extents permuted accordingly. The variant with the largest
/// `trace(R * P)` wins; near-ties are settled by the lexicographically
/// smallest (size, angles) pair so the output is unique.
pub fn canonicalize(b: &Box3D) -> Box3D {
    let r = b.rotation().0;
    let size = b.size;
    let variants: Vec<(f64, Vector3<f64>, EulerAngles)> = proper_relabelings()
        .into_iter()
        .map(|p| {
            let rp = r * p;
            let new_size = Vector3::from_fn(|i, _| {
                let src = (0..3).find(|&j| p[(j, i)] != 0.0).unwrap();
                size[src]
            });
            (rp.trace(), new_size, rotation_to_euler_unchecked(&rp))
        })
        .collect();
    let best = variants.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let (_, size, angles) = variants
        .into_iter()
        .filter(|v| v.0 >= best - TRACE_TIE_EPSILON)
        .min_by(|a, b| lex_key(a).partial_cmp(&lex_key(b)).unwrap())
        .unwrap();
    Box3D {
        center: b.center,
        size,
        angles,
    }
}

fn lex_key(v: &(f64, Vector3<f64>, EulerAngles)) -> [f64; 6] {
    let a = v.2.to_array();
    [v.1.x, v.1.y, v.1.z, a[0], a[1], a[2]]
}

/// Convex polytope stored as a list of planar faces.
#[derive(Debug, Clone, Default)]
struct Polytope {
    faces: Vec<Vec<Point3<f64>>>,
}

const BOX_FACES: [[usize; 4]; 6] = [
    [0, 1, 3, 2],
    [4, 6, 7, 5],
    [0, 4, 5, 1],
    [2, 3, 7, 6],
    [0, 2, 6, 4],
    [1, 5, 7, 3],
];

impl Polytope {
    fn from_corners(c: &[Point3<f64>; 8]) -> Self {
        Self {
            faces: BOX_FACES.iter().map(|f| f.iter().map(|&i| c[i]).collect()).collect(),
        }
    }

    fn is_empty(&self) -> bool {
        self.faces.len() < 4
    }

    /// Keeps the part with `normal . x <= offset`.
    fn clip(self, normal: &Vector3<f64>, offset: f64) -> Polytope {
        let dist = |p: &Point3<f64>| normal.dot(&p.coords) - offset;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in self.faces.iter().flatten() {
            let d = dist(p);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        if hi <= CLIP_EPSILON {
            return self;
        }
        if lo >= -CLIP_EPSILON {
            return Polytope::default();
        }

        let mut faces = Vec::with_capacity(self.faces.len() + 1);
        let mut on_plane: Vec<Point3<f64>> = Vec::new();
        for face in &self.faces {
            let mut out = Vec::with_capacity(face.len() + 2);
            for (i, cur) in face.iter().enumerate() {
                let next = &face[(i + 1) % face.len()];
                let (dc, dn) = (dist(cur), dist(next));
                if dc <= CLIP_EPSILON {
                    out.push(*cur);
                    if dc >= -CLIP_EPSILON {
                        on_plane.push(*cur);
                    }
                }
                if (dc < -CLIP_EPSILON && dn > CLIP_EPSILON) || (dc > CLIP_EPSILON && dn < -CLIP_EPSILON) {
                    let t = dc / (dc - dn);
                    let p = cur + (next - cur) * t;
                    out.push(p);
                    on_plane.push(p);
                }
            }
            dedup_ring(&mut out);
            if out.len() >= 3 {
                faces.push(out);
            }
        }
        if let Some(cap) = cap_polygon(on_plane, normal) {
            faces.push(cap);
        }
        Polytope { faces }
    }

    fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let n: usize = self.faces.iter().map(Vec::len).sum();
        let reference = self
            .faces
            .iter()
            .flatten()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords)
            / n as f64;
        let mut six_vol = 0.0;
        for face in &self.faces {
            let a = face[0].coords - reference;
            for w in face[1..].windows(2) {
                let b = w[0].coords - reference;
                let c = w[1].coords - reference;
                six_vol += a.dot(&b.cross(&c)).abs();
            }
        }
        six_vol / 6.0
    }
}

fn dedup_ring(ring: &mut Vec<Point3<f64>>) {
    ring.dedup_by(|a, b| (*a - *b).norm() <= MERGE_EPSILON);
    while ring.len() > 1 && (ring[0] - ring[ring.len() - 1]).norm() <= MERGE_EPSILON {
        ring.pop();
    }
}

/// Orders the coplanar cut points into a convex polygon.
fn cap_polygon(mut pts: Vec<Point3<f64>>, normal: &Vector3<f64>) -> Option<Vec<Point3<f64>>> {
    let mut merged: Vec<Point3<f64>> = Vec::with_capacity(pts.len());
    for p in pts.drain(..) {
        if merged.iter().all(|q| (p - q).norm() > MERGE_EPSILON) {
            merged.push(p);
        }
    }
    if merged.len() < 3 {
        return None;
    }
    let centroid = merged.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / merged.len() as f64;
    let n = normal.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    let mut keyed: Vec<(f64, Point3<f64>)> = merged
        .into_iter()
        .map(|p| {
            let d = p.coords - centroid;
            (d.dot(&v).atan2(d.dot(&u)), p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(keyed.into_iter().map(|(_, p)| p).collect())
}

fn aabb(c: &[Point3<f64>; 8]) -> (Vector3<f64>, Vector3<f64>) {
    c.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(&p.coords), hi.sup(&p.coords)),
    )
}

/// Volume of the intersection of two oriented boxes.
pub fn intersection_volume(a: &Box3D, b: &Box3D) -> f64 {
    let ra = a.rotation().0;
    let rb = b.rotation().0;
    let ca = corners_with(a, &ra);
    let cb = corners_with(b, &rb);
    let (alo, ahi) = aabb(&ca);
    let (blo, bhi) = aabb(&cb);
    if (0..3).any(|i| alo[i] > bhi[i] || blo[i] > ahi[i]) {
        return 0.0;
    }

    let mut poly = Polytope::from_corners(&ca);
    for axis in 0..3 {
        let n = rb.column(axis).into_owned();
        let half = 0.5 * b.size[axis];
        let c = n.dot(&b.center.coords);
        poly = poly.clip(&n, c + half);
        if poly.is_empty() {
            return 0.0;
        }
        poly = poly.clip(&-n, -c + half);
        if poly.is_empty() {
            return 0.0;
        }
    }
    poly.volume()
}

/// Exact intersection-over-union of two oriented boxes.
///
/// One box is clipped against the six face half-spaces of the other and the
/// volume of the resulting convex polytope is measured directly.
pub fn iou3d(a: &Box3D, b: &Box3D) -> Result<f64> {
    let va = a.volume();
    let vb = b.volume();
    if va < MIN_VOLUME && vb < MIN_VOLUME {
        return Err(Error::DegenerateGeometry("both 3D boxes have near-zero volume"));
    }
    if a == b {
        return Ok(1.0);
    }
    // Clip in a fixed operand order so the result is bitwise symmetric.
    let (first, second) = match a
        .to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| x.total_cmp(&y))
        .find(|o| o.is_ne())
    {
        Some(std::cmp::Ordering::Greater) => (b, a),
        _ => (a, b),
    };
    let inter = intersection_volume(first, second).min(va).min(vb);
    let union = va + vb - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}
