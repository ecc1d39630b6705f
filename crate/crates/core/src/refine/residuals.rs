//! Line and point reprojection residuals with analytic Jacobians.
//!
//! Jacobians are taken with respect to the left-multiplicative local update
//! `δ = (ω, v)` of [`Pose::retract`]. At `δ = 0` a camera-frame point moves
//! as `X_c + ω × X_c + v`, so `∂X_c/∂δ = [-[X_c]ₓ | I]`.
//!
//! Each line contributes three entries: the 2-vector midpoint difference
//! (whose norm is the midpoint distance `d`) and the scaled sine of the angle
//! between the observed and projected lines. Each point contributes its
//! 2-vector reprojection error. Huber weighting is applied per block on the
//! squared block norm, and the weighted entries are rescaled so that their
//! squares sum to the robust cost.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3x6, SMatrix, SVector, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    project_segment, CameraIntrinsics, LineCorrespondence, PointCorrespondence, Pose, Segment2D, Segment3D, Vec2, Vec3,
    MIN_DEPTH,
};

/// Scale `s` applied to the sine of the angle between observed and projected
/// lines, converting it to pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleScale {
    /// `s` equals the length of the projected segment.
    #[default]
    ProjectedLength,
    Constant(f64),
}

/// Huber loss on a squared norm.
pub fn huber(squared: f64, delta: f64) -> f64 {
    if squared <= delta * delta {
        squared
    } else {
        2.0 * delta * squared.sqrt() - delta * delta
    }
}

/// Midpoint distance and scaled angle term between an observed segment and a
/// projected one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineTerms {
    pub d: f64,
    pub theta: f64,
}

impl LineTerms {
    pub fn total(&self) -> f64 {
        self.d + self.theta
    }
}

pub fn segment_terms(observed: &Segment2D, projected: &Segment2D, scale: AngleScale) -> Result<LineTerms> {
    let l = observed.line()?;
    let lp = projected.line()?;
    let s = match scale {
        AngleScale::ProjectedLength => projected.length(),
        AngleScale::Constant(c) => c,
    };
    let sine = (l.a() * lp.b() - l.b() * lp.a()).abs();
    Ok(LineTerms {
        d: (observed.midpoint() - projected.midpoint()).norm(),
        theta: s * sine,
    })
}

/// Terms for an observed segment against the projection of a 3D segment.
pub fn line_terms(
    k: &CameraIntrinsics,
    pose: &Pose,
    observed: &Segment2D,
    seg3d: &Segment3D,
    scale: AngleScale,
) -> Result<LineTerms> {
    let projected = project_segment(k, pose, seg3d)?;
    segment_terms(observed, &projected, scale)
}

/// Pixel projection of a camera-frame point and its Jacobian w.r.t. `δ`.
fn project_with_jacobian(k: &CameraIntrinsics, pc: &Vec3) -> (Vec2, SMatrix<f64, 2, 6>) {
    let iz = 1.0 / pc.z;
    let p = Vec2::new(k.fx * pc.x * iz + k.cx, k.fy * pc.y * iz + k.cy);
    let dp = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * pc.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * pc.y * iz * iz,
    );
    let mut dpc = Matrix3x6::zeros();
    dpc.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-crate::geometry::skew(pc)));
    dpc.fixed_view_mut::<3, 3>(0, 3).fill_with_identity();
    (p, dp * dpc)
}

/// Rescales a residual block so its squared norm equals the Huber cost of the
/// original squared norm, with the exact Jacobian of the rescaled block.
fn robustify<const R: usize>(
    r: SVector<f64, R>,
    j: SMatrix<f64, R, 6>,
    delta: f64,
) -> (SVector<f64, R>, SMatrix<f64, R, 6>) {
    let s = r.norm_squared();
    if s <= delta * delta {
        return (r, j);
    }
    let rs = s.sqrt();
    let h = 2.0 * delta / rs - delta * delta / s;
    let g = h.sqrt();
    let dh = -delta / (s * rs) + delta * delta / (s * s);
    let dg = dh / (2.0 * g);
    let jr = r * (r.transpose() * j) * (2.0 * dg);
    (r * g, j * g + jr)
}

/// Midpoint residual, its Jacobian, angle residual, its Jacobian.
type LineBlock = (SVector<f64, 2>, SMatrix<f64, 2, 6>, f64, SMatrix<f64, 1, 6>);

/// Raw (un-robustified) line block `[Δm_x, Δm_y, s·sinθ]`, or `None` when an
/// endpoint is behind the camera.
fn line_block(k: &CameraIntrinsics, pose: &Pose, corr: &LineCorrespondence, scale: AngleScale) -> Option<LineBlock> {
    let pl = pose.transform(&corr.seg3d.p_left);
    let pr = pose.transform(&corr.seg3d.p_right);
    if pl.z <= MIN_DEPTH || pr.z <= MIN_DEPTH {
        return None;
    }
    let (ql, jl) = project_with_jacobian(k, &pl);
    let (qr, jr) = project_with_jacobian(k, &pr);
    let dm = corr.seg2d.midpoint() - (ql + qr) * 0.5;
    let jdm = -(jl + jr) * 0.5;

    let u = (corr.seg2d.p_right() - corr.seg2d.p_left()).try_normalize(1e-12)?;
    let v = qr - ql;
    let jv = jr - jl;
    let sign = if u.dot(&v) >= 0.0 { 1.0 } else { -1.0 };
    let cross = u.x * v.y - u.y * v.x;
    let dcross = SMatrix::<f64, 1, 2>::new(-u.y, u.x);
    let (rt, jt) = match scale {
        AngleScale::ProjectedLength => (sign * cross, dcross * jv * sign),
        AngleScale::Constant(c) => {
            let n = v.norm();
            if n < 1e-12 {
                return None;
            }
            let dn = v.transpose() / n;
            let grad = dcross / n - dn * (cross / (n * n));
            (sign * c * cross / n, grad * jv * (sign * c))
        }
    };
    Some((dm, jdm, rt, jt))
}

/// Stacked residual vector, its Jacobian (rows × 6) and the indices of
/// correspondences that were zeroed because they fell behind the camera.
#[derive(Clone, Debug)]
pub struct ResidualSet {
    pub values: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub flagged: Vec<usize>,
}

/// Three Huber-whitened entries per line correspondence.
pub fn line_residuals(
    pose: &Pose,
    corrs: &[LineCorrespondence],
    k: &CameraIntrinsics,
    huber_delta: f64,
    scale: AngleScale,
) -> ResidualSet {
    let mut values = DVector::zeros(3 * corrs.len());
    let mut jacobian = DMatrix::zeros(3 * corrs.len(), 6);
    let mut flagged = Vec::new();
    for (i, c) in corrs.iter().enumerate() {
        let Some((dm, jdm, rt, jt)) = line_block(k, pose, c, scale) else {
            flagged.push(i);
            continue;
        };
        let (dm, jdm) = robustify(dm, jdm, huber_delta);
        let (rt, jt) = robustify(SVector::<f64, 1>::new(rt), jt, huber_delta);
        values.rows_mut(3 * i, 2).copy_from(&dm);
        values[3 * i + 2] = rt[0];
        jacobian.view_mut((3 * i, 0), (2, 6)).copy_from(&jdm);
        jacobian.view_mut((3 * i + 2, 0), (1, 6)).copy_from(&jt);
    }
    ResidualSet {
        values,
        jacobian,
        flagged,
    }
}

/// Two Huber-whitened entries per point correspondence, `p - h(K, T, P)`.
pub fn point_residuals(
    pose: &Pose,
    corrs: &[PointCorrespondence],
    k: &CameraIntrinsics,
    huber_delta: f64,
) -> ResidualSet {
    let mut values = DVector::zeros(2 * corrs.len());
    let mut jacobian = DMatrix::zeros(2 * corrs.len(), 6);
    let mut flagged = Vec::new();
    for (i, c) in corrs.iter().enumerate() {
        let pc = pose.transform(&c.p3d);
        if pc.z <= MIN_DEPTH {
            flagged.push(i);
            continue;
        }
        let (p, jp) = project_with_jacobian(k, &pc);
        let (e, je) = robustify(c.p2d - p, -jp, huber_delta);
        values.rows_mut(2 * i, 2).copy_from(&e);
        jacobian.view_mut((2 * i, 0), (2, 6)).copy_from(&je);
    }
    ResidualSet {
        values,
        jacobian,
        flagged,
    }
}

/// Raw point reprojection error `p - h(K, T, P)`.
pub fn point_error(k: &CameraIntrinsics, pose: &Pose, corr: &PointCorrespondence) -> Result<Vec2> {
    let pc = pose.transform(&corr.p3d);
    if pc.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth: pc.z });
    }
    Ok(corr.p2d - k.project_camera(&pc)?)
}

/// Central finite-difference Jacobian of `f` over the six local parameters.
pub fn numeric_jacobian<F>(f: F, pose: &Pose, epsilon: f64) -> DMatrix<f64>
where
    F: Fn(&Pose) -> DVector<f64>,
{
    let n = f(pose).len();
    let mut jac = DMatrix::zeros(n, 6);
    for i in 0..6 {
        let mut d = Vector6::zeros();
        d[i] = epsilon;
        let plus = f(&pose.retract(&d));
        let minus = f(&pose.retract(&(-d)));
        jac.set_column(i, &((plus - minus) / (2.0 * epsilon)));
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0).unwrap()
    }

    fn seg2(a: (f64, f64), b: (f64, f64)) -> Segment2D {
        Segment2D::new(Vec2::new(a.0, a.1), Vec2::new(b.0, b.1), 1.0)
    }

    #[test]
    fn segment_terms_examples() {
        let obs = seg2((0.0, 0.0), (2.0, 0.0));
        let t = segment_terms(&obs, &obs, AngleScale::ProjectedLength).unwrap();
        assert_eq!((t.d, t.theta, t.total()), (0.0, 0.0, 0.0));

        let proj = seg2((0.0, 1.0), (2.0, 1.0));
        let t = segment_terms(&obs, &proj, AngleScale::ProjectedLength).unwrap();
        assert_eq!((t.d, t.theta, t.total()), (1.0, 0.0, 1.0));

        let diag = seg2((0.0, 0.0), (2.0, 2.0));
        let t = segment_terms(&obs, &diag, AngleScale::Constant(1.0)).unwrap();
        assert!((t.theta - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn line_terms_through_projection() {
        let kk = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let obs = seg2((0.0, 0.0), (2.0, 0.0));
        let l3 = Segment3D::new(Vec3::new(0.0, 1.0, 1.0), Vec3::new(2.0, 1.0, 1.0));
        let t = line_terms(&kk, &Pose::identity(), &obs, &l3, AngleScale::ProjectedLength).unwrap();
        assert!((t.d - 1.0).abs() < 1e-15 && t.theta.abs() < 1e-15);
    }

    #[test]
    fn collinear_disjoint_pair_has_positive_cost() {
        let obs = seg2((0.0, 5.0), (8.0, 5.0));
        let proj = seg2((18.0, 5.0), (26.0, 5.0));
        let t = segment_terms(&obs, &proj, AngleScale::ProjectedLength).unwrap();
        assert_eq!(t.d, 18.0);
        assert_eq!(t.theta, 0.0);
        // endpoint-to-line distance of the projection would be zero
        let l = obs.line().unwrap();
        assert_eq!(l.signed_distance(proj.p_left()), 0.0);
        assert_eq!(l.signed_distance(proj.p_right()), 0.0);
    }

    #[test]
    fn huber_is_continuous() {
        let d = 2.0;
        assert_eq!(huber(4.0, d), 4.0);
        assert!((huber(4.0 + 1e-12, d) - 4.0).abs() < 1e-11);
        assert_eq!(huber(16.0, d), 2.0 * 2.0 * 4.0 - 4.0);
    }

    #[test]
    fn point_residual_first_order_sensitivity() {
        let corr = PointCorrespondence {
            p2d: Vec2::new(64.0, 64.0),
            p3d: Vec3::new(0.0, 0.0, 2.0),
        };
        let pose = Pose::from_parts(Rotation3::identity(), Vec3::new(0.02, 0.0, 0.0));
        let r = point_residuals(&pose, &[corr], &k(), 2.0);
        assert!((r.values[0] + 1.0).abs() < 1e-12);
        assert_eq!(r.values[1], 0.0);

        let behind = PointCorrespondence {
            p2d: Vec2::new(64.0, 64.0),
            p3d: Vec3::new(0.0, 0.0, -2.0),
        };
        let r = point_residuals(&Pose::identity(), &[behind], &k(), 2.0);
        assert_eq!(r.flagged, vec![0]);
        assert_eq!(r.values.norm(), 0.0);
    }

    #[test]
    fn line_residual_normal_shift() {
        // observed along y = 64; the 3D line projects 1 px lower
        let obs = seg2((40.0, 64.0), (90.0, 64.0));
        let l3 = Segment3D::new(Vec3::new(-0.48, 0.02, 2.0), Vec3::new(0.52, 0.02, 2.0));
        let corr = LineCorrespondence { seg2d: obs, seg3d: l3 };
        let r = line_residuals(&Pose::identity(), &[corr], &k(), 1e9, AngleScale::ProjectedLength);
        assert!((r.values.rows(0, 2).norm() - 1.0).abs() < 1e-12);
        assert!(r.values[2].abs() < 1e-12);
    }

    #[test]
    fn zero_residual_means_zero_gradient() {
        let obs = seg2((64.0, 64.0), (114.0, 64.0));
        let l3 = Segment3D::new(Vec3::new(0.0, 0.0, 2.0), Vec3::new(1.0, 0.0, 2.0));
        let corr = LineCorrespondence { seg2d: obs, seg3d: l3 };
        let r = line_residuals(&Pose::identity(), &[corr], &k(), 2.0, AngleScale::ProjectedLength);
        assert_eq!(r.values.norm(), 0.0);
        assert_eq!((r.jacobian.transpose() * &r.values).norm(), 0.0);
    }

    fn random_config(rng: &mut ChaCha8Rng) -> (Pose, Vec<LineCorrespondence>, Vec<PointCorrespondence>) {
        let pose = Pose::from_center(
            Rotation3::new(Vec3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            )),
            Vec3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ),
        );
        let mut lines = vec![];
        let mut points = vec![];
        for _ in 0..5 {
            let a = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(3.0..5.0),
            );
            let b = a + Vec3::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.5..0.5),
            );
            let proj = project_segment(&k(), &pose, &Segment3D::new(a, b)).unwrap();
            // observation displaced by several pixels so both Huber regimes occur
            let off = Vec2::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
            let tilt = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let obs = Segment2D::new(proj.p_left() + off, proj.p_right() + off + tilt, 1.0);
            lines.push(LineCorrespondence {
                seg2d: obs,
                seg3d: Segment3D::new(a, b),
            });
            let p = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(3.0..5.0),
            );
            let px = crate::geometry::project_point(&k(), &pose, &p).unwrap();
            points.push(PointCorrespondence {
                p2d: px + Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
                p3d: p,
            });
        }
        (pose, lines, points)
    }

    fn max_rel_error(a: &DMatrix<f64>, n: &DMatrix<f64>) -> f64 {
        a.iter()
            .zip(n.iter())
            .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let (pose, lines, points) = random_config(&mut rng);
            for scale in [AngleScale::ProjectedLength, AngleScale::Constant(30.0)] {
                let r = line_residuals(&pose, &lines, &k(), 2.0, scale);
                let n = numeric_jacobian(|p| line_residuals(p, &lines, &k(), 2.0, scale).values, &pose, 1e-6);
                assert!(max_rel_error(&r.jacobian, &n) < 1e-4);
            }
            let r = point_residuals(&pose, &points, &k(), 2.0);
            let n = numeric_jacobian(|p| point_residuals(p, &points, &k(), 2.0).values, &pose, 1e-6);
            assert!(max_rel_error(&r.jacobian, &n) < 1e-5);
        }
    }

    #[test]
    fn squared_residuals_equal_robust_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (pose, lines, points) = random_config(&mut rng);
        let delta = 2.0;
        let r = line_residuals(&pose, &lines, &k(), delta, AngleScale::ProjectedLength);
        let direct: f64 = lines
            .iter()
            .map(|c| {
                let t = line_terms(&k(), &pose, &c.seg2d, &c.seg3d, AngleScale::ProjectedLength).unwrap();
                huber(t.d * t.d, delta) + huber(t.theta * t.theta, delta)
            })
            .sum();
        assert!((r.values.norm_squared() - direct).abs() < 1e-12 * direct.max(1.0));

        let r = point_residuals(&pose, &points, &k(), delta);
        let direct: f64 = points
            .iter()
            .map(|c| huber(point_error(&k(), &pose, c).unwrap().norm_squared(), delta))
            .sum();
        assert!((r.values.norm_squared() - direct).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn residuals_ignore_stored_endpoint_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (pose, lines, _) = random_config(&mut rng);
        let swapped: Vec<_> = lines
            .iter()
            .map(|c| LineCorrespondence {
                seg2d: c.seg2d,
                seg3d: Segment3D::new(c.seg3d.p_right, c.seg3d.p_left),
            })
            .collect();
        let a = line_residuals(&pose, &lines, &k(), 2.0, AngleScale::ProjectedLength);
        let b = line_residuals(&pose, &swapped, &k(), 2.0, AngleScale::ProjectedLength);
        assert!((a.values.norm_squared() - b.values.norm_squared()).abs() < 1e-9);
    }
}
