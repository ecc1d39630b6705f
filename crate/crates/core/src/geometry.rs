//! Rigid poses, pinhole projection, homogeneous 2D lines and two-view
//! epipolar geometry.
//!
//! Poses map world coordinates into the camera frame: `X_c = R * X_w + t`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Camera-frame depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Minimum length of a 2D segment admitted to matching and decoding.
pub const MIN_SEGMENT_LENGTH: f64 = 4.0;

/// Cross-product magnitude below which two normalized lines are parallel.
pub const PARALLEL_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite())
            || !self.fx.is_finite()
            || !self.fy.is_finite()
        {
            return Err(Error::InvalidInput(format!(
                "intrinsics need positive finite focal lengths, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a camera-frame point to pixels.
    pub fn project_camera(&self, pc: &Vec3) -> Result<Vec2> {
        if pc.z <= MIN_DEPTH {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        Ok(Vec2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        ))
    }

    /// Normalized viewing ray (z = 1) through a pixel, in the camera frame.
    pub fn unproject(&self, p: &Vec2) -> Vec3 {
        Vec3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }
}

/// Rigid world-to-camera transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRecord", try_from = "PoseRecord")]
pub struct Pose {
    rotation: Rotation3<f64>,
    translation: Vec3,
}

/// On-disk pose layout: unit quaternion (w, x, y, z) and translation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseRecord {
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        Self {
            quaternion: p.quaternion(),
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseRecord> for Pose {
    type Error = Error;

    fn try_from(r: PoseRecord) -> Result<Self> {
        Pose::from_quaternion(r.quaternion, Vec3::from(r.translation))
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose from a raw rotation matrix, checking orthonormality and
    /// handedness to 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "not a rigid transform (orthonormality error {ortho:e}, det {det})"
            )));
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn from_quaternion(wxyz: [f64; 4], translation: Vec3) -> Result<Self> {
        let [w, x, y, z] = wxyz;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "quaternion must be unit length, got norm {n}"
            )));
        }
        let uq = UnitQuaternion::new_normalize(q);
        Self::new(uq.to_rotation_matrix().into_inner(), translation)
    }

    /// Pose of a camera with rotation `world_to_camera` located at `center`.
    pub fn from_center(world_to_camera: Rotation3<f64>, center: Vec3) -> Self {
        Self {
            rotation: world_to_camera,
            translation: -(world_to_camera * center),
        }
    }

    /// Camera at `eye` looking at `target`, image y axis pointing roughly
    /// along `-up`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("look_at target equals eye".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("look_at up is parallel to view".into()))?;
        let y = z.cross(&x);
        let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self::from_center(Rotation3::from_matrix_unchecked(rot), eye))
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Left-multiplicative update: `Exp(ω) · T` followed by a translation
    /// `v`, with `delta = (ω, v)`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        let omega = Vec3::new(delta[0], delta[1], delta[2]);
        let v = Vec3::new(delta[3], delta[4], delta[5]);
        let dr = Rotation3::new(omega);
        Self {
            rotation: dr * self.rotation,
            translation: dr * self.translation + v,
        }
    }
}

/// Finite 2D line segment with canonically ordered endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Segment2DRecord")]
pub struct Segment2D {
    p_left: Vec2,
    p_right: Vec2,
    pub confidence: f64,
}

#[derive(Deserialize)]
struct Segment2DRecord {
    p_left: Vec2,
    p_right: Vec2,
    confidence: f64,
}

impl From<Segment2DRecord> for Segment2D {
    fn from(r: Segment2DRecord) -> Self {
        Segment2D::new(r.p_left, r.p_right, r.confidence)
    }
}

/// True when `a` precedes `b` in the canonical endpoint order (x, then y).
fn endpoint_before(a: &Vec2, b: &Vec2) -> bool {
    a.x < b.x || (a.x == b.x && a.y <= b.y)
}

impl Segment2D {
    pub fn new(a: Vec2, b: Vec2, confidence: f64) -> Self {
        let (p_left, p_right) = if endpoint_before(&a, &b) { (a, b) } else { (b, a) };
        Self {
            p_left,
            p_right,
            confidence,
        }
    }

    pub fn p_left(&self) -> &Vec2 {
        &self.p_left
    }

    pub fn p_right(&self) -> &Vec2 {
        &self.p_right
    }

    pub fn length(&self) -> f64 {
        (self.p_right - self.p_left).norm()
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.p_left + self.p_right) * 0.5
    }

    pub fn is_finite(&self) -> bool {
        self.p_left.iter().chain(self.p_right.iter()).all(|v| v.is_finite())
    }

    /// Infinite supporting line.
    pub fn line(&self) -> Result<HomogeneousLine2D> {
        line_through_points(&self.p_left.push(1.0), &self.p_right.push(1.0))
    }

    /// Errors when the segment is shorter than [`MIN_SEGMENT_LENGTH`].
    pub fn check_length(&self) -> Result<()> {
        let length = self.length();
        if length < MIN_SEGMENT_LENGTH || !length.is_finite() {
            return Err(Error::DegenerateSegment { length });
        }
        Ok(())
    }
}

/// Where a mapped 3D segment came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentSource {
    pub image: u32,
    pub segment: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment3D {
    pub p_left: Vec3,
    pub p_right: Vec3,
    #[serde(default)]
    pub source: Option<SegmentSource>,
}

impl Segment3D {
    pub fn new(p_left: Vec3, p_right: Vec3) -> Self {
        Self {
            p_left,
            p_right,
            source: None,
        }
    }

    pub fn length(&self) -> f64 {
        (self.p_right - self.p_left).norm()
    }

    pub fn midpoint(&self) -> Vec3 {
        (self.p_left + self.p_right) * 0.5
    }
}

/// `a x + b y + c = 0` with `a² + b² = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomogeneousLine2D {
    a: f64,
    b: f64,
    c: f64,
}

impl HomogeneousLine2D {
    /// Normalizes raw coefficients; fails when `(a, b)` vanishes.
    pub fn from_coefficients(v: &Vec3) -> Result<Self> {
        let n = v.x.hypot(v.y);
        if !(n > 0.0) || !n.is_finite() || !v.z.is_finite() {
            return Err(Error::DegenerateLine);
        }
        Ok(Self {
            a: v.x / n,
            b: v.y / n,
            c: v.z / n,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn coefficients(&self) -> Vec3 {
        Vec3::new(self.a, self.b, self.c)
    }

    pub fn signed_distance(&self, p: &Vec2) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }

    /// Unit direction along the line.
    pub fn direction(&self) -> Vec2 {
        Vec2::new(-self.b, self.a)
    }
}

pub fn project_point(k: &CameraIntrinsics, pose: &Pose, p: &Vec3) -> Result<Vec2> {
    k.project_camera(&pose.transform(p))
}

/// Endpoint-wise projection with canonical ordering; confidence is 1.
pub fn project_segment(k: &CameraIntrinsics, pose: &Pose, seg: &Segment3D) -> Result<Segment2D> {
    let a = project_point(k, pose, &seg.p_left)?;
    let b = project_point(k, pose, &seg.p_right)?;
    Ok(Segment2D::new(a, b, 1.0))
}

pub fn line_through_points(p: &Vec3, q: &Vec3) -> Result<HomogeneousLine2D> {
    let l = p.cross(q);
    if l.x == 0.0 && l.y == 0.0 {
        return Err(Error::DegenerateLine);
    }
    HomogeneousLine2D::from_coefficients(&l)
}

/// Homogeneous intersection point of two lines.
pub fn intersect_lines(l1: &HomogeneousLine2D, l2: &HomogeneousLine2D) -> Result<Vec3> {
    let p = l1.coefficients().cross(&l2.coefficients());
    if p.z.abs() <= PARALLEL_EPS {
        return Err(Error::ParallelLines);
    }
    Ok(p)
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Fundamental matrix mapping query pixels to epipolar lines in the database
/// image (`l_d = F p_q`), scaled to unit Frobenius norm.
pub fn fundamental_matrix(
    k_q: &CameraIntrinsics,
    pose_q: &Pose,
    k_d: &CameraIntrinsics,
    pose_d: &Pose,
) -> Result<Matrix3<f64>> {
    let baseline = (pose_q.center() - pose_d.center()).norm();
    if !(baseline > 1e-9) {
        return Err(Error::DegenerateBaseline { baseline });
    }
    let r = pose_d.rotation() * pose_q.rotation().inverse();
    let t = pose_d.translation() - r * pose_q.translation();
    let e = skew(&t) * r.matrix();
    let f = k_d.inverse_matrix().transpose() * e * k_q.inverse_matrix();
    Ok(f / f.norm())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Camera center distance in meters.
    pub translation: f64,
    /// Relative rotation angle in degrees.
    pub rotation_deg: f64,
}

pub fn pose_error(est: &Pose, gt: &Pose) -> PoseError {
    let translation = (est.center() - gt.center()).norm();
    let rel = est.rotation().matrix().transpose() * gt.rotation().matrix();
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    PoseError {
        translation,
        rotation_deg: cos.acos().to_degrees(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCorrespondence {
    pub p2d: Vec2,
    pub p3d: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineCorrespondence {
    pub seg2d: Segment2D,
    pub seg3d: Segment3D,
}
