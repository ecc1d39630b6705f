//! 3D line map construction from posed database images with per-pixel world
//! coordinates.
//!
//! Each 2D segment is lifted by sampling the coordinate map along it and
//! fitting a 3D line to the samples. The lifted endpoints of an image are then
//! checked jointly with PnP-RANSAC; a line survives only when both of its
//! endpoints are consensus inliers.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    pose_error, CameraIntrinsics, PointCorrespondence, Pose, PoseError, Segment2D, Segment3D, SegmentSource, Vec2,
    Vec3, MIN_DEPTH,
};
use crate::refine::{refine_pose_points, OptimizerConfig};

/// Minimum fraction of valid coordinate samples along a lifted segment.
pub const MIN_VALID_RATIO: f64 = 0.5;

/// Best inlier ratio below which RANSAC reports no consensus.
pub const MIN_CONSENSUS_RATIO: f64 = 0.3;

/// Per-pixel world coordinates; non-finite entries mark invalid pixels.
/// Pixel `(x, y)` covers the image point with integer coordinates `(x, y)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct XyzMap {
    pub width: usize,
    pub height: usize,
    /// Row-major `x, y, z` triples.
    pub data: Vec<f32>,
}

impl XyzMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![f32::NAN; 3 * width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Vec3> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let i = 3 * (y * self.width + x);
        let v = &self.data[i..i + 3];
        v.iter()
            .all(|c| c.is_finite())
            .then(|| Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64))
    }

    pub fn set(&mut self, x: usize, y: usize, p: Option<Vec3>) {
        let i = 3 * (y * self.width + x);
        let v = p.map_or([f32::NAN; 3], |p| [p.x as f32, p.y as f32, p.z as f32]);
        self.data[i..i + 3].copy_from_slice(&v);
    }

    /// Nearest-pixel lookup at a sub-pixel image position.
    pub fn sample(&self, p: &Vec2) -> Option<Vec3> {
        let (x, y) = (p.x.round(), p.y.round());
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        self.get(x as usize, y as usize)
    }
}

/// Pixel positions visited when lifting `seg`: `⌈length⌉ + 1` points spaced
/// evenly from the left to the right endpoint.
pub fn segment_samples(seg: &Segment2D) -> Vec<Vec2> {
    let n = seg.length().ceil() as usize + 1;
    let (a, b) = (*seg.p_left(), *seg.p_right());
    (0..n)
        .map(|i| a + (b - a) * (i as f64 / (n - 1).max(1) as f64))
        .collect()
}

/// A lifted segment together with the image positions of the samples its
/// endpoints were derived from.
#[derive(Clone, Copy, Debug)]
pub struct LiftedSegment {
    pub segment: Segment3D,
    pub support: [Vec2; 2],
}

pub fn lift_segment(seg: &Segment2D, xyz: &XyzMap) -> Result<LiftedSegment> {
    let samples = segment_samples(seg);
    let valid: Vec<(Vec2, Vec3)> = samples.iter().filter_map(|p| xyz.sample(p).map(|w| (*p, w))).collect();
    let insufficient = Error::InsufficientDepth {
        valid: valid.len(),
        total: samples.len(),
    };
    if valid.len() < 2 || (valid.len() as f64) < MIN_VALID_RATIO * samples.len() as f64 {
        return Err(insufficient);
    }
    let centroid = valid.iter().map(|(_, w)| w).sum::<Vec3>() / valid.len() as f64;
    let scatter = valid.iter().fold(Matrix3::zeros(), |acc, (_, w)| {
        let d = w - centroid;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(scatter);
    let axis: Vec3 = eig.eigenvectors.column(eig.eigenvalues.imax()).into();
    let onto_axis = |w: &Vec3| centroid + axis * axis.dot(&(w - centroid));
    let (first, last) = (valid[0], valid[valid.len() - 1]);
    let segment = Segment3D::new(onto_axis(&first.1), onto_axis(&last.1));
    if !(segment.length() > 0.0) || !segment.length().is_finite() {
        return Err(insufficient);
    }
    Ok(LiftedSegment {
        segment,
        support: [first.0, last.0],
    })
}

/// Lifts a 2D segment to 3D through the coordinate map.
///
/// The 3D line is the principal axis of the valid samples; its endpoints are
/// the first and last valid samples projected onto that axis.
pub fn lift_segment_to_3d(seg: &Segment2D, xyz: &XyzMap) -> Result<Segment3D> {
    lift_segment(seg, xyz).map(|l| l.segment)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Reprojection error in pixels.
    pub inlier_threshold: f64,
    pub min_sample: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold: 3.0,
            min_sample: 6,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.inlier_threshold > 0.0) || self.min_sample < 6 {
            return Err(Error::InvalidInput(format!("bad RANSAC settings: {self:?}")));
        }
        Ok(())
    }
}

/// Ratio of the smallest to the largest principal spread of the 3D points
/// below which they are treated as coplanar.
const PLANAR_RATIO: f64 = 1e-3;

/// Pose from at least six 2D-3D correspondences by the direct linear
/// transform on normalized image coordinates, with the rotation block
/// projected onto SO(3).
///
/// Coplanar points leave the 3x4 system rank deficient; they are solved
/// through the plane-to-image homography instead.
pub fn solve_pnp_dlt(p2d: &[Vec2], p3d: &[Vec3], k: &CameraIntrinsics) -> Result<Pose> {
    let n = p2d.len();
    if n != p3d.len() {
        return Err(Error::LengthMismatch {
            left: n,
            right: p3d.len(),
        });
    }
    if n < 6 {
        return Err(Error::TooFewCorrespondences { got: n, need: 6 });
    }
    let centroid = p3d.iter().sum::<Vec3>() / n as f64;
    let rms = (p3d.iter().map(|p| (p - centroid).norm_squared()).sum::<f64>() / n as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::DegenerateLine);
    }
    let scatter = p3d.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    let eig = SymmetricEigen::new(scatter);
    let (lo, hi) = (eig.eigenvalues.min().max(0.0), eig.eigenvalues.max());
    if (lo / hi).sqrt() < PLANAR_RATIO {
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let e1: Vec3 = eig.eigenvectors.column(order[0]).into();
        let e2: Vec3 = eig.eigenvectors.column(order[1]).into();
        return solve_pnp_planar(p2d, p3d, k, &centroid, &e1, &e2, 3f64.sqrt() / rms);
    }
    let s = 3f64.sqrt() / rms;

    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, (x, w)) in p2d.iter().zip(p3d).enumerate() {
        let ray = k.unproject(x);
        let wn = (w - centroid) * s;
        let wh = [wn.x, wn.y, wn.z, 1.0];
        for c in 0..4 {
            a[(2 * i, c)] = wh[c];
            a[(2 * i, 8 + c)] = -ray.x * wh[c];
            a[(2 * i + 1, 4 + c)] = wh[c];
            a[(2 * i + 1, 8 + c)] = -ray.y * wh[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateLine)?;
    let smallest = svd.singular_values.imin();
    let p_norm = Matrix3x4::from_row_iterator(v_t.row(smallest).iter().copied());
    let mut denorm = Matrix4::identity() * s;
    denorm[(3, 3)] = 1.0;
    denorm.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-centroid * s));
    let mut p = p_norm * denorm;
    let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into();
    if m.determinant() < 0.0 {
        p = -p;
        m = -m;
    }
    let msvd = m.svd(true, true);
    let (u, vt) = (
        msvd.u.ok_or(Error::DegenerateLine)?,
        msvd.v_t.ok_or(Error::DegenerateLine)?,
    );
    let r = u * vt;
    if r.determinant() < 0.0 {
        return Err(Error::DegenerateLine);
    }
    let scale = msvd.singular_values.mean();
    if !(scale > 0.0) {
        return Err(Error::DegenerateLine);
    }
    let t: Vec3 = p.column(3) / scale;
    Pose::new(r, t)
}

/// Pose from coplanar correspondences. Points are expressed in the plane
/// basis `(e1, e2)` around `origin`, scaled by `s`.
fn solve_pnp_planar(
    p2d: &[Vec2],
    p3d: &[Vec3],
    k: &CameraIntrinsics,
    origin: &Vec3,
    e1: &Vec3,
    e2: &Vec3,
    s: f64,
) -> Result<Pose> {
    let n = p2d.len();
    let mut a = DMatrix::zeros(2 * n, 9);
    for (i, (x, w)) in p2d.iter().zip(p3d).enumerate() {
        let ray = k.unproject(x);
        let d = w - origin;
        let q = [e1.dot(&d) * s, e2.dot(&d) * s, 1.0];
        for c in 0..3 {
            a[(2 * i, c)] = q[c];
            a[(2 * i, 6 + c)] = -ray.x * q[c];
            a[(2 * i + 1, 3 + c)] = q[c];
            a[(2 * i + 1, 6 + c)] = -ray.y * q[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateLine)?;
    let smallest = svd.singular_values.imin();
    let mut h = Matrix3::from_row_iterator(v_t.row(smallest).iter().copied());
    // the plane origin must lie in front of the camera
    if h[(2, 2)] < 0.0 {
        h = -h;
    }
    let mu = (h.column(0).norm() + h.column(1).norm()) / 2.0;
    if !(mu > 0.0) {
        return Err(Error::DegenerateLine);
    }
    let (ra, rb): (Vec3, Vec3) = (h.column(0) / mu, h.column(1) / mu);
    let m = Matrix3::from_columns(&[ra, rb, ra.cross(&rb)]);
    let msvd = m.svd(true, true);
    let q = msvd.u.ok_or(Error::DegenerateLine)? * msvd.v_t.ok_or(Error::DegenerateLine)?;
    if q.determinant() < 0.0 {
        return Err(Error::DegenerateLine);
    }
    let basis = Matrix3::from_columns(&[*e1, *e2, e1.cross(e2)]);
    let r = q * basis.transpose();
    let origin_cam: Vec3 = h.column(2) / (s * mu);
    Pose::new(r, origin_cam - r * origin)
}

fn reprojection_inliers(p2d: &[Vec2], p3d: &[Vec3], k: &CameraIntrinsics, pose: &Pose, threshold: f64) -> Vec<bool> {
    p2d.iter()
        .zip(p3d)
        .map(|(x, w)| {
            let pc = pose.transform(w);
            pc.z > MIN_DEPTH && k.project_camera(&pc).is_ok_and(|px| (px - x).norm() < threshold)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PnpRansacResult {
    pub inliers: Vec<bool>,
    pub pose: Pose,
    pub inlier_ratio: f64,
}

/// RANSAC over DLT minimal samples, then a point-only refit on the consensus
/// set. Inlier flags are re-derived from the refitted pose.
pub fn pnp_ransac_filter(
    p2d: &[Vec2],
    p3d: &[Vec3],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PnpRansacResult> {
    cfg.validate()?;
    let n = p2d.len();
    if n != p3d.len() {
        return Err(Error::LengthMismatch {
            left: n,
            right: p3d.len(),
        });
    }
    if n < cfg.min_sample {
        return Err(Error::TooFewCorrespondences {
            got: n,
            need: cfg.min_sample,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Pose)> = None;
    let mut sample2 = Vec::with_capacity(cfg.min_sample);
    let mut sample3 = Vec::with_capacity(cfg.min_sample);
    for _ in 0..cfg.iterations {
        let idx = rand::seq::index::sample(&mut rng, n, cfg.min_sample);
        sample2.clear();
        sample3.clear();
        for i in idx.iter() {
            sample2.push(p2d[i]);
            sample3.push(p3d[i]);
        }
        let Ok(pose) = solve_pnp_dlt(&sample2, &sample3, k) else {
            continue;
        };
        let count = reprojection_inliers(p2d, p3d, k, &pose, cfg.inlier_threshold)
            .iter()
            .filter(|v| **v)
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, pose));
            if count == n {
                break;
            }
        }
    }
    let Some((count, pose)) = best else {
        return Err(Error::NoConsensus { ratio: 0.0 });
    };
    let ratio = count as f64 / n as f64;
    if ratio < MIN_CONSENSUS_RATIO {
        return Err(Error::NoConsensus { ratio });
    }

    let flags = reprojection_inliers(p2d, p3d, k, &pose, cfg.inlier_threshold);
    let corrs: Vec<PointCorrespondence> = flags
        .iter()
        .zip(p2d.iter().zip(p3d))
        .filter(|(f, _)| **f)
        .map(|(_, (x, w))| PointCorrespondence { p2d: *x, p3d: *w })
        .collect();
    let pose = refine_pose_points(&pose, &corrs, k, &OptimizerConfig::default())
        .map(|r| r.pose)
        .unwrap_or(pose);
    let inliers = reprojection_inliers(p2d, p3d, k, &pose, cfg.inlier_threshold);
    let inlier_ratio = inliers.iter().filter(|v| **v).count() as f64 / n as f64;
    Ok(PnpRansacResult {
        inliers,
        pose,
        inlier_ratio,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapLine {
    pub id: u32,
    pub segment: Segment3D,
}

impl MapLine {
    pub fn source(&self) -> Option<SegmentSource> {
        self.segment.source
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LineMap3D {
    pub lines: Vec<MapLine>,
}

impl LineMap3D {
    /// Map line lifted from segment `segment` of image `image`, if any.
    pub fn find_by_source(&self, image: u32, segment: u32) -> Option<&MapLine> {
        let key = SegmentSource { image, segment };
        self.lines
            .binary_search_by(|l| l.segment.source.cmp(&Some(key)))
            .ok()
            .map(|i| &self.lines[i])
    }

    pub fn get(&self, id: u32) -> Option<&MapLine> {
        self.lines
            .binary_search_by_key(&id, |l| l.id)
            .ok()
            .map(|i| &self.lines[i])
    }

    pub fn validate(&self) -> Result<()> {
        let sorted = self
            .lines
            .windows(2)
            .all(|w| w[0].id < w[1].id && w[0].segment.source < w[1].segment.source);
        if !sorted {
            return Err(Error::InvalidInput(
                "line map must be sorted by id and provenance with unique ids".into(),
            ));
        }
        Ok(())
    }
}

/// One posed database image.
#[derive(Clone, Copy, Debug)]
pub struct DatabaseView<'a> {
    pub id: u32,
    pub segments: &'a [Segment2D],
    pub xyz: &'a XyzMap,
    pub pose: &'a Pose,
    pub k: &'a CameraIntrinsics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMapReport {
    pub image: u32,
    pub segments: usize,
    pub lifted: usize,
    pub kept: usize,
    /// Set when the whole image was skipped.
    pub skipped: Option<String>,
    /// Deviation of the RANSAC pose from the known database pose.
    pub pose_deviation: Option<PoseError>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapBuild {
    pub map: LineMap3D,
    pub reports: Vec<ImageMapReport>,
}

fn map_image(view: &DatabaseView, cfg: &RansacConfig) -> (Vec<Segment3D>, ImageMapReport) {
    let mut report = ImageMapReport {
        image: view.id,
        segments: view.segments.len(),
        lifted: 0,
        kept: 0,
        skipped: None,
        pose_deviation: None,
    };
    let lifted: Vec<(u32, LiftedSegment)> = view
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.check_length().is_ok())
        .filter_map(|(i, s)| lift_segment(s, view.xyz).ok().map(|l| (i as u32, l)))
        .collect();
    report.lifted = lifted.len();
    let p2d: Vec<Vec2> = lifted.iter().flat_map(|(_, l)| l.support).collect();
    let p3d: Vec<Vec3> = lifted
        .iter()
        .flat_map(|(_, l)| [l.segment.p_left, l.segment.p_right])
        .collect();
    let ransac = match pnp_ransac_filter(&p2d, &p3d, view.k, cfg) {
        Ok(r) => r,
        Err(e) => {
            report.skipped = Some(e.to_string());
            return (Vec::new(), report);
        }
    };
    report.pose_deviation = Some(pose_error(&ransac.pose, view.pose));
    let kept: Vec<Segment3D> = lifted
        .iter()
        .enumerate()
        .filter(|(i, _)| ransac.inliers[2 * i] && ransac.inliers[2 * i + 1])
        .map(|(_, (sid, l))| Segment3D {
            source: Some(SegmentSource {
                image: view.id,
                segment: *sid,
            }),
            ..l.segment
        })
        .collect();
    report.kept = kept.len();
    (kept, report)
}

/// Builds the line map. Images are processed independently; the result is
/// ordered by (image id, segment id) and ids are assigned in that order.
pub fn build_line_map(views: &[DatabaseView], cfg: &RansacConfig) -> Result<MapBuild> {
    cfg.validate()?;
    let mut per_image: Vec<(Vec<Segment3D>, ImageMapReport)> = views.par_iter().map(|v| map_image(v, cfg)).collect();
    per_image.sort_by_key(|(_, r)| r.image);
    if per_image.windows(2).any(|w| w[0].1.image == w[1].1.image) {
        return Err(Error::InvalidInput("duplicate database image id".into()));
    }
    let mut lines = Vec::new();
    let mut reports = Vec::new();
    for (segments, report) in per_image {
        for segment in segments {
            lines.push(MapLine {
                id: lines.len() as u32,
                segment,
            });
        }
        reports.push(report);
    }
    Ok(MapBuild {
        map: LineMap3D { lines },
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_point;
    use nalgebra::Rotation3;
    use rand::Rng;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0).unwrap()
    }

    /// Coordinates of a fronto-parallel plane at depth `z` seen from the
    /// identity pose.
    fn plane_map(k: &CameraIntrinsics, w: usize, h: usize, z: f64) -> XyzMap {
        let mut m = XyzMap::invalid(w, h);
        for y in 0..h {
            for x in 0..w {
                let ray = k.unproject(&Vec2::new(x as f64, y as f64));
                m.set(x, y, Some(ray * z));
            }
        }
        m
    }

    #[test]
    fn lift_on_fronto_parallel_plane() {
        let k = k100();
        let xyz = plane_map(&k, 128, 128, 2.0);
        let seg = Segment2D::new(Vec2::new(64.0, 64.0), Vec2::new(114.0, 64.0), 1.0);
        let s = lift_segment_to_3d(&seg, &xyz).unwrap();
        assert!((s.p_left - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-6);
        assert!((s.p_right - Vec3::new(1.0, 0.0, 2.0)).norm() < 1e-6);
    }

    #[test]
    fn lift_without_depth_fails() {
        let xyz = XyzMap::invalid(128, 128);
        let seg = Segment2D::new(Vec2::new(10.0, 10.0), Vec2::new(50.0, 20.0), 1.0);
        assert!(matches!(
            lift_segment_to_3d(&seg, &xyz),
            Err(Error::InsufficientDepth { .. })
        ));
    }

    #[test]
    fn lift_tolerates_missing_pixels() {
        let k = k100();
        let mut xyz = plane_map(&k, 128, 128, 2.0);
        let seg = Segment2D::new(Vec2::new(20.0, 40.0), Vec2::new(120.0, 40.0), 1.0);
        let samples = segment_samples(&seg);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // knock out 30% of the interior samples, keep both ends
        let interior = samples.len() - 2;
        let idx = rand::seq::index::sample(&mut rng, interior, interior * 3 / 10);
        for i in idx.iter() {
            let p = samples[i + 1];
            xyz.set(p.x.round() as usize, p.y.round() as usize, None);
        }
        let s = lift_segment_to_3d(&seg, &xyz).unwrap();
        let expect_l = k.unproject(&Vec2::new(20.0, 40.0)) * 2.0;
        let expect_r = k.unproject(&Vec2::new(120.0, 40.0)) * 2.0;
        assert!((s.p_left - expect_l).norm() < 1e-6);
        assert!((s.p_right - expect_r).norm() < 1e-6);
    }

    #[test]
    fn lift_endpoints_lie_on_fitted_axis() {
        let k = k100();
        let mut xyz = plane_map(&k, 128, 128, 2.0);
        // bumpy depth so the samples are not collinear
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for y in 0..128 {
            for x in 0..128 {
                let p = xyz.get(x, y).unwrap() * rng.random_range(0.99..1.01);
                xyz.set(x, y, Some(p));
            }
        }
        let seg = Segment2D::new(Vec2::new(10.0, 15.0), Vec2::new(100.0, 70.0), 1.0);
        let lifted = lift_segment(&seg, &xyz).unwrap();
        let s = lifted.segment;
        let dir = (s.p_right - s.p_left).normalize();
        let samples: Vec<Vec3> = segment_samples(&seg).iter().filter_map(|p| xyz.sample(p)).collect();
        let c = samples.iter().sum::<Vec3>() / samples.len() as f64;
        // the centroid lies on the fitted axis through both endpoints
        let off = (c - s.p_left) - dir * dir.dot(&(c - s.p_left));
        assert!(off.norm() < 1e-9);
    }

    fn random_scene(seed: u64, n: usize) -> (CameraIntrinsics, Pose, Vec<Vec2>, Vec<Vec3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0).unwrap();
        let gt = Pose::from_center(
            Rotation3::from_euler_angles(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ),
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
        );
        let mut p2 = vec![];
        let mut p3 = vec![];
        while p2.len() < n {
            let c = Vec3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(2.0..6.0),
            );
            let w = gt.rotation().inverse() * (c - gt.translation());
            p2.push(project_point(&k, &gt, &w).unwrap());
            p3.push(w);
        }
        (k, gt, p2, p3)
    }

    #[test]
    fn dlt_is_exact_on_noiseless_data() {
        let (k, gt, p2, p3) = random_scene(1, 6);
        let pose = solve_pnp_dlt(&p2, &p3, &k).unwrap();
        let e = pose_error(&pose, &gt);
        assert!(e.translation < 1e-7 && e.rotation_deg < 1e-6, "{e:?}");
    }

    #[test]
    fn dlt_handles_coplanar_points() {
        let k = k100();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pose = Pose::look_at(
            Vec3::new(0.3, -0.2, -3.0),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
        )
        .unwrap();
        let normal = Vec3::new(0.2, 0.1, 1.0).normalize();
        let u = normal.cross(&Vec3::x()).normalize();
        let v = normal.cross(&u);
        let p3d: Vec<Vec3> = (0..12)
            .map(|_| u * rng.random_range(-1.0..1.0) + v * rng.random_range(-1.0..1.0) + normal * 0.4)
            .collect();
        let p2d: Vec<Vec2> = p3d.iter().map(|p| project_point(&k, &pose, p).unwrap()).collect();
        let est = solve_pnp_dlt(&p2d, &p3d, &k).unwrap();
        let e = pose_error(&est, &pose);
        assert!(e.translation < 1e-9 && e.rotation_deg < 1e-7, "{e:?}");
    }

    #[test]
    fn ransac_noiseless_all_inliers() {
        let (k, gt, p2, p3) = random_scene(2, 40);
        let r = pnp_ransac_filter(&p2, &p3, &k, &RansacConfig::default()).unwrap();
        assert!(r.inliers.iter().all(|v| *v));
        let e = pose_error(&r.pose, &gt);
        assert!(e.translation < 1e-4 && e.rotation_deg < 1e-3, "{e:?}");
    }

    #[test]
    fn ransac_flags_displaced_endpoints() {
        let (k, _, mut p2, p3) = random_scene(3, 40);
        let bad = [3usize, 11, 17, 25, 38];
        for (j, &i) in bad.iter().enumerate() {
            let ang = j as f64 * 1.3;
            p2[i] += Vec2::new(ang.cos(), ang.sin()) * 50.0;
        }
        let r = pnp_ransac_filter(&p2, &p3, &k, &RansacConfig::default()).unwrap();
        let outliers: Vec<usize> = (0..40).filter(|i| !r.inliers[*i]).collect();
        assert_eq!(outliers, bad);
    }

    #[test]
    fn ransac_too_few() {
        let (k, _, p2, p3) = random_scene(4, 4);
        assert!(matches!(
            pnp_ransac_filter(&p2, &p3, &k, &RansacConfig::default()),
            Err(Error::TooFewCorrespondences { .. })
        ));
    }

    #[test]
    fn ransac_is_deterministic() {
        let (k, _, mut p2, p3) = random_scene(5, 30);
        p2[0] += Vec2::new(40.0, 0.0);
        let cfg = RansacConfig {
            seed: 77,
            ..Default::default()
        };
        let a = pnp_ransac_filter(&p2, &p3, &k, &cfg).unwrap();
        let b = pnp_ransac_filter(&p2, &p3, &k, &cfg).unwrap();
        assert_eq!(a.inliers, b.inliers);
        assert_eq!(a.pose, b.pose);
    }
}
