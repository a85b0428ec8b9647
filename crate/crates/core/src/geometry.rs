//! Rotations, pinhole cameras, raymaps and rigid transforms.
//!
//! Conventions used everywhere in the crate:
//! * poses are world-from-camera: `x_world = R · x_cam + t`;
//! * camera frame is x right, y down, z forward;
//! * pixel `(u, v)` has its centre at `(u + 0.5, v + 0.5)`;
//! * quaternions are Hamilton `[w, x, y, z]` with `w ≥ 0`;
//! * fields of view are in radians.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-6;

/// Pinhole calibration in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
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

    /// Centred principal point.
    pub fn centered(fx: f64, fy: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64
            && [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Rigid world-from-camera transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let r = p.rotation;
        PoseRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = Error;

    fn try_from(r: PoseRepr) -> Result<Self> {
        let m = Mat3::from_fn(|i, j| r.rotation[i][j]);
        Pose::new(m, Vec3::from(r.translation))
    }
}

impl Pose {
    /// Rejects rotations that are not orthonormal with determinant +1.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation, ORTHO_TOL)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Same rotation, translation multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: self.translation * s,
        }
    }
}

fn check_rotation(r: &Mat3, tol: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite rotation".into()));
    }
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    let det = r.determinant();
    if err > tol || (det - 1.0).abs() > tol {
        return Err(Error::InvalidInput(format!(
            "rotation not orthonormal (|RᵀR−I|={err:.3e}, det={det:.6})"
        )));
    }
    Ok(())
}

/// First two columns of a rotation matrix, stacked: `[c0; c1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rot6d(pub [f64; 6]);

const DEGENERATE_TOL: f64 = 1e-9;

/// Gram–Schmidt on the two columns, third column by cross product.
pub fn rot6d_to_matrix(r: &Rot6d) -> Result<Mat3> {
    let a = Vec3::new(r.0[0], r.0[1], r.0[2]);
    let b = Vec3::new(r.0[3], r.0[4], r.0[5]);
    let na = a.norm();
    let nb = b.norm();
    if !(na > DEGENERATE_TOL && nb > DEGENERATE_TOL) {
        return Err(Error::Degenerate(format!("6D rotation with a vanishing half {:?}", r.0)));
    }
    let c0 = a / na;
    let orth = b - c0 * c0.dot(&b);
    let no = orth.norm();
    if !(no > DEGENERATE_TOL * nb) {
        return Err(Error::Degenerate(format!("6D rotation with parallel halves {:?}", r.0)));
    }
    let c1 = orth / no;
    let c2 = c0.cross(&c1);
    Ok(Mat3::from_columns(&[c0, c1, c2]))
}

pub fn matrix_to_rot6d(r: &Mat3) -> Result<Rot6d> {
    check_rotation(r, ORTHO_TOL)?;
    Ok(Rot6d([
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ]))
}

/// Rotation from a Hamilton quaternion `[w, x, y, z]`, normalised first.
pub fn quat_to_matrix(q: [f64; 4]) -> Result<Mat3> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::Degenerate("zero quaternion".into()));
    }
    let [w, x, y, z] = q.map(|v| v / n);
    Ok(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Shepperd's method; the result is unit-norm with `w ≥ 0`.
pub fn matrix_to_quat(r: &Mat3) -> Result<[f64; 4]> {
    check_rotation(r, ORTHO_TOL)?;
    let m = |i, j| r[(i, j)];
    let tr = m(0, 0) + m(1, 1) + m(2, 2);
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s]
    } else if m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2) {
        let s = (1.0 + m(0, 0) - m(1, 1) - m(2, 2)).sqrt() * 2.0;
        [(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s]
    } else if m(1, 1) > m(2, 2) {
        let s = (1.0 + m(1, 1) - m(0, 0) - m(2, 2)).sqrt() * 2.0;
        [(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s]
    } else {
        let s = (1.0 + m(2, 2) - m(0, 0) - m(1, 1)).sqrt() * 2.0;
        [(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(canonical_quat(q.map(|v| v / n)))
}

/// Flips the sign so that `w ≥ 0`.
pub fn canonical_quat(q: [f64; 4]) -> [f64; 4] {
    if q[0] < 0.0 {
        q.map(|v| -v)
    } else {
        q
    }
}

/// Camera parameter vector `[q, t, f]`: rotation quaternion, translation in
/// normalised units and field of view.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraParam {
    pub q: [f64; 4],
    pub t: [f64; 3],
    pub fov: [f64; 2],
}

impl CameraParam {
    pub fn from_pose(pose: &Pose, k: &Intrinsics, translation_scale: f64) -> Result<Self> {
        let t = pose.translation() / translation_scale;
        Ok(Self {
            q: matrix_to_quat(pose.rotation())?,
            t: [t.x, t.y, t.z],
            fov: fov_from_intrinsics(k),
        })
    }

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.q[0], self.q[1], self.q[2], self.q[3], self.t[0], self.t[1], self.t[2], self.fov[0], self.fov[1],
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::InvalidInput(format!("camera vector of length {}", v.len())));
        }
        Ok(Self {
            q: [v[0], v[1], v[2], v[3]],
            t: [v[4], v[5], v[6]],
            fov: [v[7], v[8]],
        })
    }

    pub fn pose(&self) -> Result<Pose> {
        Pose::new(quat_to_matrix(self.q)?, Vec3::from(self.t))
    }
}

/// Unnormalised viewing direction `((u+½−cx)/fx, (v+½−cy)/fy, 1)`; `u`, `v`
/// may be fractional pixel indices.
pub fn pixel_direction(k: &Intrinsics, u: f64, v: f64) -> Vec3 {
    Vec3::new((u + 0.5 - k.cx) / k.fx, (v + 0.5 - k.cy) / k.fy, 1.0)
}

pub fn ray_direction(k: &Intrinsics, u: f64, v: f64) -> Vec3 {
    pixel_direction(k, u, v).normalize()
}

/// Unit ray directions for every pixel, shape `[H, W, 3]`. No origin
/// channels.
pub fn make_raymap(k: &Intrinsics) -> Result<Tensor> {
    k.validate()?;
    let mut data = Vec::with_capacity(k.pixel_count() * 3);
    for v in 0..k.height {
        for u in 0..k.width {
            let d = ray_direction(k, u as f64, v as f64);
            data.extend([d.x, d.y, d.z]);
        }
    }
    Tensor::new([k.height, k.width, 3], data)
}

/// Fractional pixel index whose centre the point projects to, or `None` for
/// points at or behind the camera plane.
pub fn project(k: &Intrinsics, p: &Vec3) -> Option<(f64, f64)> {
    if p.z <= 0.0 {
        return None;
    }
    Some((k.fx * p.x / p.z + k.cx - 0.5, k.fy * p.y / p.z + k.cy - 0.5))
}

/// Camera-frame points with a validity flag per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
}

impl PointMap {
    pub fn valid_points(&self) -> impl Iterator<Item = &Vec3> {
        self.points.iter().zip(&self.valid).filter(|(_, &ok)| ok).map(|(p, _)| p)
    }
}

/// Back-projects a z-depth map. Zero depth marks an invalid pixel.
pub fn unproject(depth: &[f64], k: &Intrinsics) -> Result<PointMap> {
    k.validate()?;
    if depth.len() != k.pixel_count() {
        return Err(Error::InvalidInput(format!(
            "depth has {} values for a {}x{} camera",
            depth.len(),
            k.width,
            k.height
        )));
    }
    if let Some(i) = depth.iter().position(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid depth {} at pixel {i}", depth[i])));
    }
    let mut points = Vec::with_capacity(depth.len());
    let mut valid = Vec::with_capacity(depth.len());
    for v in 0..k.height {
        for u in 0..k.width {
            let d = depth[v * k.width + u];
            points.push(pixel_direction(k, u as f64, v as f64) * d);
            valid.push(d > 0.0);
        }
    }
    Ok(PointMap {
        width: k.width,
        height: k.height,
        points,
        valid,
    })
}

pub fn transform_points(points: &[Vec3], pose: &Pose) -> Vec<Vec3> {
    points.iter().map(|p| pose.transform_point(p)).collect()
}

/// Horizontal and vertical field of view.
pub fn fov_from_intrinsics(k: &Intrinsics) -> [f64; 2] {
    [
        2.0 * (k.width as f64 / (2.0 * k.fx)).atan(),
        2.0 * (k.height as f64 / (2.0 * k.fy)).atan(),
    ]
}

/// Intrinsics with a centred principal point and the given field of view.
pub fn intrinsics_from_fov(fov: [f64; 2], width: usize, height: usize) -> Result<Intrinsics> {
    for f in fov {
        if !(f > 0.0 && f < std::f64::consts::PI) {
            return Err(Error::InvalidInput(format!("field of view {f} outside (0, π)")));
        }
    }
    let fx = width as f64 / (2.0 * (fov[0] / 2.0).tan());
    let fy = height as f64 / (2.0 * (fov[1] / 2.0).tan());
    Intrinsics::centered(fx, fy, width, height)
}

/// Poses re-expressed relative to the first one, which becomes the identity.
pub fn anchor_to_first(poses: &[Pose]) -> Vec<Pose> {
    let Some(first) = poses.first() else {
        return Vec::new();
    };
    let inv = first.inverse();
    poses.iter().map(|p| inv.compose(p)).collect()
}

/// Rotation by `angle` radians about a unit axis.
pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn canonical_6d_decodes_to_identity() {
        let r = rot6d_to_matrix(&Rot6d([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(r, Mat3::identity());
        let r = rot6d_to_matrix(&Rot6d([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert_eq!(r, Mat3::identity());
    }

    #[test]
    fn parallel_halves_are_degenerate() {
        let e = rot6d_to_matrix(&Rot6d([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(e, Error::Degenerate(_)));
        assert!(rot6d_to_matrix(&Rot6d([0.0; 6])).is_err());
    }

    #[test]
    fn encode_identity_and_quarter_turn() {
        assert_eq!(matrix_to_rot6d(&Mat3::identity()).unwrap().0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let rz = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(matrix_to_rot6d(&rz).unwrap().0, [0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
        let q = matrix_to_quat(&rz).unwrap();
        let h = (0.5f64).sqrt();
        assert!((q[0] - h).abs() < 1e-15 && (q[3] - h).abs() < 1e-15);
    }

    #[test]
    fn non_orthonormal_is_rejected() {
        let mut m = Mat3::identity();
        m[(0, 1)] = 1e-3;
        assert!(matrix_to_rot6d(&m).is_err());
        assert!(matrix_to_quat(&(Mat3::identity() * -1.0)).is_err());
    }

    #[test]
    fn quaternion_double_cover_and_zero() {
        assert_eq!(quat_to_matrix([1.0, 0.0, 0.0, 0.0]).unwrap(), Mat3::identity());
        let q = [0.3, -0.5, 0.1, 0.8];
        let a = quat_to_matrix(q).unwrap();
        let b = quat_to_matrix(q.map(|v| -v)).unwrap();
        assert!((a - b).abs().max() < 1e-15);
        assert!(quat_to_matrix([0.0; 4]).is_err());
    }

    #[test]
    fn raymap_principal_point_and_unit_norm() {
        let k = Intrinsics::new(5.0, 5.0, 10.5, 8.5, 21, 17).unwrap();
        let d = ray_direction(&k, 10.0, 8.0);
        assert_eq!((d.x, d.y, d.z), (0.0, 0.0, 1.0));
        let d = ray_direction(&k, 15.0, 8.0);
        let h = 0.5f64.sqrt();
        assert!((d.x - h).abs() < 1e-15 && d.y == 0.0 && (d.z - h).abs() < 1e-15);
        let map = make_raymap(&k).unwrap();
        assert_eq!(map.shape(), &[17, 21, 3]);
        for px in map.data().chunks(3) {
            let n = (px[0] * px[0] + px[1] * px[1] + px[2] * px[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unproject_principal_point_and_invalid_pixels() {
        let k = Intrinsics::new(5.0, 5.0, 1.5, 1.5, 3, 3).unwrap();
        let mut depth = vec![2.0; 9];
        depth[0] = 0.0;
        let pm = unproject(&depth, &k).unwrap();
        assert_eq!(pm.points[4], Vec3::new(0.0, 0.0, 2.0));
        assert!(!pm.valid[0]);
        assert_eq!(pm.valid_points().count(), 8);
        depth[1] = -1.0;
        assert!(unproject(&depth, &k).is_err());
    }

    #[test]
    fn unproject_then_project_recovers_pixels() {
        let k = Intrinsics::new(37.0, 41.0, 15.3, 11.8, 32, 24).unwrap();
        let depth: Vec<f64> = (0..k.pixel_count()).map(|i| 0.5 + (i % 7) as f64 * 0.9).collect();
        let pm = unproject(&depth, &k).unwrap();
        for (i, p) in pm.points.iter().enumerate() {
            let (u, v) = project(&k, p).unwrap();
            assert!((u - (i % k.width) as f64).abs() < 1e-9);
            assert!((v - (i / k.width) as f64).abs() < 1e-9);
            assert!((p.z - depth[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn transforms_identity_translation_and_composition() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-4.0, 0.5, 9.0)];
        assert_eq!(transform_points(&pts, &Pose::identity()), pts);
        let t = Vec3::new(0.1, -0.2, 0.3);
        let moved = transform_points(&pts, &Pose::from_translation(t));
        assert_eq!(moved[0], pts[0] + t);
        let a = Pose::new(axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.7), Vec3::new(1.0, 0.0, -2.0)).unwrap();
        let b = Pose::new(axis_angle(Vec3::new(-0.3, 1.0, 0.2), -1.9), Vec3::new(0.0, 3.0, 0.5)).unwrap();
        let two_step = transform_points(&transform_points(&pts, &b), &a);
        let once = transform_points(&pts, &a.compose(&b));
        for (p, q) in two_step.iter().zip(&once) {
            assert!((p - q).norm() < 1e-12);
        }
        let id = a.compose(&a.inverse());
        assert!((id.rotation() - Mat3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn fov_round_trip_and_quarter_turn() {
        let k = Intrinsics::centered(32.0, 32.0, 64, 64).unwrap();
        let f = fov_from_intrinsics(&k);
        assert!((f[0] - FRAC_PI_2).abs() < 1e-15);
        let k2 = intrinsics_from_fov(f, 64, 64).unwrap();
        assert!((k2.fx - k.fx).abs() < 1e-12 && (k2.fy - k.fy).abs() < 1e-12);
        assert!(intrinsics_from_fov([PI, 1.0], 64, 64).is_err());
        assert!(intrinsics_from_fov([0.0, 1.0], 64, 64).is_err());
    }

    #[test]
    fn intrinsics_invariants() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 2.0, 2.0, 4, 4).is_ok());
    }

    #[test]
    fn pose_json_round_trip() {
        let p = Pose::new(axis_angle(Vec3::new(0.2, 1.0, -0.4), 1.1), Vec3::new(0.1, 0.2, 0.3)).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }
}
