//! Synthetic indoor scenes: a box-shaped room with a few boxes on the floor,
//! posed database and query cameras, and analytically rendered per-pixel
//! world coordinates.

use nalgebra::Rotation3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    project_point, project_segment, CameraIntrinsics, LineCorrespondence, PointCorrespondence, Pose, Segment2D,
    Segment3D, Vec2, Vec3,
};
use crate::mapping::{segment_samples, DatabaseView, XyzMap};

/// Camera placement attempts per camera before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    pub seed: u64,
    /// Database cameras.
    pub n_cameras: usize,
    /// Query cameras, in addition to the database cameras.
    pub n_queries: usize,
    pub n_lines: usize,
    pub n_points: usize,
    /// Side length of the square floor in meters; the ceiling is at 0.6 of it.
    pub room_extent: f64,
    pub n_boxes: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub focal: f64,
    /// Standard deviation of the Gaussian noise on every observed 2D
    /// coordinate, in pixels.
    pub pixel_noise: f64,
    /// Bound on the query initial-pose center displacement, meters.
    pub init_translation: f64,
    /// Bound on the query initial-pose rotation, degrees.
    pub init_rotation_deg: f64,
    /// Fraction of database segments whose coordinate-map pixels are shifted.
    pub depth_outlier_fraction: f64,
    /// Minimum shift of corrupted coordinates, meters; shifts are drawn from
    /// `[offset, 1.5 offset]` orthogonal to the viewing ray.
    pub depth_outlier_offset: f64,
    /// Fraction of query point correspondences replaced by random pixels.
    pub point_outlier_fraction: f64,
    pub min_visible_lines: usize,
    pub min_visible_points: usize,
    /// Database images retrieved per query, ranked by co-visible lines.
    pub retrieval_size: usize,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_cameras: 20,
            n_queries: 10,
            n_lines: 200,
            n_points: 500,
            room_extent: 5.0,
            n_boxes: 2,
            image_width: 640,
            image_height: 480,
            focal: 500.0,
            pixel_noise: 0.0,
            init_translation: 0.5,
            init_rotation_deg: 5.0,
            depth_outlier_fraction: 0.0,
            depth_outlier_offset: 0.5,
            point_outlier_fraction: 0.0,
            min_visible_lines: 10,
            min_visible_points: 30,
            retrieval_size: 5,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("scene config: {what}")));
        if !(self.room_extent > 0.0 && self.room_extent.is_finite()) {
            return bad("room_extent must be positive");
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return bad("focal must be positive");
        }
        if self.image_width < 16 || self.image_height < 16 {
            return bad("image must be at least 16x16");
        }
        if self.n_cameras == 0 || self.n_lines == 0 {
            return bad("need at least one database camera and one line");
        }
        for (name, v) in [
            ("pixel_noise", self.pixel_noise),
            ("init_translation", self.init_translation),
            ("init_rotation_deg", self.init_rotation_deg),
            ("depth_outlier_offset", self.depth_outlier_offset),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be non-negative"));
            }
        }
        for (name, v) in [
            ("depth_outlier_fraction", self.depth_outlier_fraction),
            ("point_outlier_fraction", self.point_outlier_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.image_width as f64 / 2.0,
            cy: self.image_height as f64 / 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatabaseImage {
    pub id: u32,
    pub pose: Pose,
    pub segments: Vec<Segment2D>,
    /// Index into [`Scene::lines3d`] of the line each segment observes.
    pub line_ids: Vec<u32>,
    pub depth_corrupted: Vec<bool>,
    /// Stored next to the scene file in binary form.
    #[serde(skip)]
    pub xyz: XyzMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryImage {
    pub id: u32,
    pub gt_pose: Pose,
    pub init_pose: Pose,
    pub segments: Vec<Segment2D>,
    pub line_ids: Vec<u32>,
    /// Point correspondences handed to refinement, including outliers.
    pub points: Vec<PointCorrespondence>,
    pub point_outliers: Vec<bool>,
    /// Database image ids, best first.
    pub retrieval: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub intrinsics: CameraIntrinsics,
    pub width: u32,
    pub height: u32,
    pub lines3d: Vec<Segment3D>,
    pub points3d: Vec<Vec3>,
    pub database: Vec<DatabaseImage>,
    pub queries: Vec<QueryImage>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let mut ids: Vec<u32> = self
            .database
            .iter()
            .map(|d| d.id)
            .chain(self.queries.iter().map(|q| q.id))
            .collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("camera ids must be unique".into()));
        }
        let n_lines = self.lines3d.len() as u32;
        for d in &self.database {
            if d.line_ids.len() != d.segments.len() || d.depth_corrupted.len() != d.segments.len() {
                return Err(Error::InvalidInput(format!(
                    "database image {}: per-segment lists differ in length",
                    d.id
                )));
            }
            if d.line_ids.iter().any(|&l| l >= n_lines) {
                return Err(Error::InvalidInput(format!("database image {}: unknown line id", d.id)));
            }
            if (d.xyz.width, d.xyz.height) != (self.width as usize, self.height as usize)
                || d.xyz.data.len() != 3 * d.xyz.width * d.xyz.height
            {
                return Err(Error::InvalidInput(format!(
                    "database image {}: coordinate map size mismatch",
                    d.id
                )));
            }
        }
        for q in &self.queries {
            if q.line_ids.len() != q.segments.len() || q.point_outliers.len() != q.points.len() {
                return Err(Error::InvalidInput(format!(
                    "query {}: per-item lists differ in length",
                    q.id
                )));
            }
            if q.line_ids.iter().any(|&l| l >= n_lines) {
                return Err(Error::InvalidInput(format!("query {}: unknown line id", q.id)));
            }
            if let Some(r) = q.retrieval.iter().find(|r| !self.database.iter().any(|d| d.id == **r)) {
                return Err(Error::InvalidInput(format!(
                    "query {}: retrieved image {r} does not exist",
                    q.id
                )));
            }
        }
        Ok(())
    }

    pub fn database_views(&self) -> Vec<DatabaseView<'_>> {
        self.database
            .iter()
            .map(|d| DatabaseView {
                id: d.id,
                segments: &d.segments,
                xyz: &d.xyz,
                pose: &d.pose,
                k: &self.intrinsics,
            })
            .collect()
    }

    /// The query's observed segments paired with the 3D lines they observe.
    pub fn true_line_correspondences(&self, query: &QueryImage) -> Vec<LineCorrespondence> {
        query
            .segments
            .iter()
            .zip(&query.line_ids)
            .map(|(s, &l)| LineCorrespondence {
                seg2d: *s,
                seg3d: self.lines3d[l as usize],
            })
            .collect()
    }

    /// Point correspondences of a query with the outliers removed.
    pub fn inlier_points(&self, query: &QueryImage) -> Vec<PointCorrespondence> {
        query
            .points
            .iter()
            .zip(&query.point_outliers)
            .filter(|(_, o)| !**o)
            .map(|(p, _)| *p)
            .collect()
    }
}

/// Rotates `pose` about its own center by a uniformly random axis and an
/// angle uniform in `[0, max_rotation_deg]`, and moves the center along a
/// uniformly random direction by a distance uniform in `[0, max_translation]`.
pub fn perturb_pose(pose: &Pose, max_translation: f64, max_rotation_deg: f64, seed: u64) -> Result<Pose> {
    if !(max_translation >= 0.0 && max_rotation_deg >= 0.0) {
        return Err(Error::InvalidInput("perturbation bounds must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis: [f64; 3] = UnitSphere.sample(&mut rng);
    let angle = rng.random_range(0.0..=max_rotation_deg).to_radians();
    let dir: [f64; 3] = UnitSphere.sample(&mut rng);
    let shift = rng.random_range(0.0..=max_translation);
    let dr = Rotation3::new(Vec3::from(axis) * angle);
    let rotation = dr * pose.rotation();
    // t' = -R'(c + shift dir), written to leave t bit-identical at zero bounds
    let translation = dr * pose.translation() - rotation * (Vec3::from(dir) * shift);
    Ok(Pose::from_parts(rotation, translation))
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

/// Planar rectangle `origin + a u + b v` with `a, b` in `[0, 1]`.
#[derive(Clone, Copy, Debug)]
struct Face {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
}

impl Face {
    fn area(&self) -> f64 {
        self.u.cross(&self.v).norm()
    }
}

struct Room {
    bounds: Aabb,
    boxes: Vec<Aabb>,
}

fn box_faces(b: &Aabb, with_bottom: bool) -> Vec<Face> {
    let d = b.max - b.min;
    let (ex, ey, ez) = (
        Vec3::new(d.x, 0.0, 0.0),
        Vec3::new(0.0, d.y, 0.0),
        Vec3::new(0.0, 0.0, d.z),
    );
    let mut faces = vec![
        Face {
            origin: b.min + ez,
            u: ex,
            v: ey,
        },
        Face {
            origin: b.min,
            u: ey,
            v: ez,
        },
        Face {
            origin: b.min + ex,
            u: ey,
            v: ez,
        },
        Face {
            origin: b.min,
            u: ex,
            v: ez,
        },
        Face {
            origin: b.min + ey,
            u: ex,
            v: ez,
        },
    ];
    if with_bottom {
        faces.push(Face {
            origin: b.min,
            u: ex,
            v: ey,
        });
    }
    faces
}

impl Room {
    fn scale(&self) -> f64 {
        (self.bounds.max.x - self.bounds.min.x) / 5.0
    }

    fn faces(&self) -> Vec<Face> {
        let mut faces = box_faces(&self.bounds, true);
        for b in &self.boxes {
            faces.extend(box_faces(b, false));
        }
        faces
    }

    fn edges(&self) -> Vec<(Vec3, Vec3)> {
        let (lo, hi) = (self.bounds.min, self.bounds.max);
        let corner = |i: usize| {
            Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        };
        let mut edges = Vec::new();
        for i in 0..8 {
            for bit in [1, 2, 4] {
                if i & bit == 0 {
                    edges.push((corner(i), corner(i | bit)));
                }
            }
        }
        edges
    }

    /// Distance along `dir` from `origin` (inside the room) to the first
    /// surface hit.
    fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let mut best = f64::INFINITY;
        for i in 0..3 {
            if dir[i] > 0.0 {
                best = best.min((self.bounds.max[i] - origin[i]) / dir[i]);
            } else if dir[i] < 0.0 {
                best = best.min((self.bounds.min[i] - origin[i]) / dir[i]);
            }
        }
        for b in &self.boxes {
            let (mut near, mut far) = (f64::NEG_INFINITY, f64::INFINITY);
            for i in 0..3 {
                if dir[i] == 0.0 {
                    if origin[i] < b.min[i] || origin[i] > b.max[i] {
                        far = f64::NEG_INFINITY;
                    }
                    continue;
                }
                let t0 = (b.min[i] - origin[i]) / dir[i];
                let t1 = (b.max[i] - origin[i]) / dir[i];
                near = near.max(t0.min(t1));
                far = far.min(t0.max(t1));
            }
            if near <= far && near > 0.0 {
                best = best.min(near);
            }
        }
        best.is_finite().then_some(best)
    }
}

fn generate_room(cfg: &SceneGenConfig, rng: &mut ChaCha8Rng) -> Room {
    let h = cfg.room_extent / 2.0;
    let bounds = Aabb {
        min: Vec3::new(-h, -h, 0.0),
        max: Vec3::new(h, h, 0.6 * cfg.room_extent),
    };
    let s = cfg.room_extent / 5.0;
    let boxes = (0..cfg.n_boxes)
        .map(|_| {
            let size = Vec3::new(
                rng.random_range(0.4..0.9) * s,
                rng.random_range(0.4..0.9) * s,
                rng.random_range(0.3..0.8) * s,
            );
            let cx = rng.random_range(-1.0..1.0) * (h - size.x / 2.0 - 0.1 * s);
            let cy = rng.random_range(-1.0..1.0) * (h - size.y / 2.0 - 0.1 * s);
            let min = Vec3::new(cx - size.x / 2.0, cy - size.y / 2.0, 0.0);
            Aabb { min, max: min + size }
        })
        .collect();
    Room { bounds, boxes }
}

/// Pieces of the room's edges, with gaps between consecutive pieces.
fn structure_pieces(room: &Room, rng: &mut ChaCha8Rng) -> Vec<Segment3D> {
    let s = room.scale();
    let mut pieces = Vec::new();
    for (a, b) in room.edges() {
        let len = (b - a).norm();
        let dir = (b - a) / len;
        let mut pos = rng.random_range(0.0..0.3) * s;
        while pos + 0.5 * s < len {
            let piece = (rng.random_range(0.5..1.2) * s).min(len - pos);
            pieces.push(Segment3D::new(a + dir * pos, a + dir * (pos + piece)));
            pos += piece + rng.random_range(0.1..0.4) * s;
        }
    }
    pieces
}

fn face_segment(face: &Face, s: f64, rng: &mut ChaCha8Rng) -> Option<Segment3D> {
    let (lu, lv) = (face.u.norm(), face.v.norm());
    let (eu, ev) = (face.u / lu, face.v / lv);
    let m = 0.05 * s;
    if lu < 2.0 * m + 0.3 * s || lv < 2.0 * m {
        return None;
    }
    for _ in 0..100 {
        let a = Vec2::new(rng.random_range(m..lu - m), rng.random_range(m..lv - m));
        let phi = rng.random_range(0.0..std::f64::consts::PI);
        let len = rng.random_range(0.3..1.2) * s;
        let b = a + Vec2::new(phi.cos(), phi.sin()) * len;
        if b.x >= m && b.x <= lu - m && b.y >= m && b.y <= lv - m {
            let world = |p: Vec2| face.origin + eu * p.x + ev * p.y;
            return Some(Segment3D::new(world(a), world(b)));
        }
    }
    None
}

fn generate_lines(cfg: &SceneGenConfig, room: &Room, rng: &mut ChaCha8Rng) -> Vec<Segment3D> {
    let pieces = structure_pieces(room, rng);
    let n_structure = ((cfg.n_lines as f64 * 0.25).round() as usize).min(pieces.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, pieces.len(), n_structure).into_vec();
    picked.sort_unstable();
    let mut lines: Vec<Segment3D> = picked.iter().map(|&i| pieces[i]).collect();
    let faces = room.faces();
    let weights = WeightedIndex::new(faces.iter().map(Face::area)).expect("room faces have positive area");
    while lines.len() < cfg.n_lines {
        if let Some(l) = face_segment(&faces[weights.sample(rng)], room.scale(), rng) {
            lines.push(l);
        }
    }
    lines
}

fn generate_points(cfg: &SceneGenConfig, room: &Room, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let faces = room.faces();
    let weights = WeightedIndex::new(faces.iter().map(Face::area)).expect("room faces have positive area");
    (0..cfg.n_points)
        .map(|_| {
            let f = &faces[weights.sample(rng)];
            f.origin + f.u * rng.random_range(0.02..0.98) + f.v * rng.random_range(0.02..0.98)
        })
        .collect()
}

struct View<'a> {
    room: &'a Room,
    k: &'a CameraIntrinsics,
    pose: &'a Pose,
    width: f64,
    height: f64,
}

impl View<'_> {
    fn ray(&self, p: &Vec2) -> Vec3 {
        self.pose.rotation().inverse() * self.k.unproject(p)
    }

    fn inside(&self, p: &Vec2, margin: f64) -> bool {
        p.x >= margin && p.y >= margin && p.x <= self.width - 1.0 - margin && p.y <= self.height - 1.0 - margin
    }

    /// Noiseless projection of `line` when it is fully in view and the
    /// surface seen at every lifting sample lies on it.
    fn visible_line(&self, line: &Segment3D) -> Option<Segment2D> {
        for p in [line.p_left, line.p_right] {
            if self.pose.transform(&p).z < 0.1 {
                return None;
            }
        }
        let proj = project_segment(self.k, self.pose, line).ok()?;
        if !self.inside(proj.p_left(), 1.0) || !self.inside(proj.p_right(), 1.0) || proj.length() < 12.0 {
            return None;
        }
        let center = self.pose.center();
        let axis = line.p_right - line.p_left;
        let tol_base = 0.01 * self.room.scale() * 5.0;
        for s in segment_samples(&proj) {
            let q = Vec2::new(s.x.round(), s.y.round());
            let dir = self.ray(&q);
            let t = self.room.cast(&center, &dir)?;
            let hit = center + dir * t;
            let u = ((hit - line.p_left).dot(&axis) / axis.norm_squared()).clamp(0.0, 1.0);
            let closest = line.p_left + axis * u;
            let range = (hit - center).norm();
            if (hit - closest).norm() > tol_base + 2.0 * range / self.k.fx {
                return None;
            }
        }
        Some(proj)
    }

    fn visible_point(&self, p: &Vec3) -> Option<Vec2> {
        if self.pose.transform(p).z < 0.1 {
            return None;
        }
        let px = project_point(self.k, self.pose, p).ok()?;
        if !self.inside(&px, 0.0) {
            return None;
        }
        let center = self.pose.center();
        let dist = (p - center).norm();
        let t = self.room.cast(&center, &((p - center) / dist))?;
        (t >= dist - 1e-6).then_some(px)
    }
}

struct Visibility {
    lines: Vec<(u32, Segment2D)>,
    points: Vec<(u32, Vec2)>,
}

fn visibility(view: &View, lines: &[Segment3D], points: &[Vec3]) -> Visibility {
    Visibility {
        lines: lines
            .iter()
            .enumerate()
            .filter_map(|(i, l)| view.visible_line(l).map(|s| (i as u32, s)))
            .collect(),
        points: points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| view.visible_point(p).map(|x| (i as u32, x)))
            .collect(),
    }
}

fn random_camera(room: &Room, rng: &mut ChaCha8Rng) -> Pose {
    let (lo, hi) = (room.bounds.min, room.bounds.max);
    let e = hi.x - lo.x;
    let ht = hi.z;
    let eye = Vec3::new(
        rng.random_range(-0.35..0.35) * e,
        rng.random_range(-0.35..0.35) * e,
        rng.random_range(0.4..0.6) * ht,
    );
    let along = rng.random_range(-0.4..0.4) * e;
    let z = rng.random_range(0.2..0.8) * ht;
    let target = match rng.random_range(0..4) {
        0 => Vec3::new(lo.x, along, z),
        1 => Vec3::new(hi.x, along, z),
        2 => Vec3::new(along, lo.y, z),
        _ => Vec3::new(along, hi.y, z),
    };
    Pose::look_at(eye, target, Vec3::z()).expect("camera looks at a wall point away from its center")
}

/// Places a camera satisfying the visibility minimums and `accept`.
fn place_camera<F>(
    cfg: &SceneGenConfig,
    room: &Room,
    k: &CameraIntrinsics,
    lines: &[Segment3D],
    points: &[Vec3],
    rng: &mut ChaCha8Rng,
    accept: F,
) -> Result<(Pose, Visibility)>
where
    F: Fn(&Visibility) -> bool,
{
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let pose = random_camera(room, rng);
        let view = View {
            room,
            k,
            pose: &pose,
            width: cfg.image_width as f64,
            height: cfg.image_height as f64,
        };
        let vis = visibility(&view, lines, points);
        if vis.lines.len() >= cfg.min_visible_lines.max(1) && vis.points.len() >= cfg.min_visible_points && accept(&vis)
        {
            return Ok((pose, vis));
        }
    }
    Err(Error::InfeasibleConfig(format!(
        "no camera placement with {} visible lines and {} visible points in {MAX_PLACEMENT_ATTEMPTS} attempts",
        cfg.min_visible_lines, cfg.min_visible_points
    )))
}

fn noisy(p: &Vec2, noise: &Option<Normal<f64>>, rng: &mut ChaCha8Rng) -> Vec2 {
    match noise {
        Some(n) => p + Vec2::new(n.sample(rng), n.sample(rng)),
        None => *p,
    }
}

fn observe(
    lines: &[(u32, Segment2D)],
    noise: &Option<Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> (Vec<Segment2D>, Vec<u32>) {
    lines
        .iter()
        .map(|(id, s)| {
            let a = noisy(s.p_left(), noise, rng);
            let b = noisy(s.p_right(), noise, rng);
            (Segment2D::new(a, b, 1.0), *id)
        })
        .unzip()
}

/// World coordinates of the surface seen through every pixel center.
fn render_xyz(room: &Room, k: &CameraIntrinsics, pose: &Pose, width: usize, height: usize) -> XyzMap {
    let mut map = XyzMap::invalid(width, height);
    let center = pose.center();
    let inv = pose.rotation().inverse();
    map.data.par_chunks_mut(3 * width).enumerate().for_each(|(y, row)| {
        for x in 0..width {
            let dir = inv * k.unproject(&Vec2::new(x as f64, y as f64));
            if let Some(t) = room.cast(&center, &dir) {
                let p = center + dir * t;
                row[3 * x..3 * x + 3].copy_from_slice(&[p.x as f32, p.y as f32, p.z as f32]);
            }
        }
    });
    map
}

fn distance_to_segment(p: &Vec2, s: &Segment2D) -> f64 {
    let (a, b) = (s.p_left(), s.p_right());
    let ab = b - a;
    let u = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * u)).norm()
}

/// Shifts the coordinates around `seg` by `offset`.
fn corrupt_along(map: &mut XyzMap, seg: &Segment2D, offset: &Vec3) {
    let r = 1.5;
    let lo = seg
        .p_left()
        .inf(seg.p_right())
        .map(|v| (v - r).floor().max(0.0) as usize);
    let hi = seg
        .p_left()
        .sup(seg.p_right())
        .map(|v| (v + r).ceil().max(0.0) as usize);
    for y in lo.y..=hi.y.min(map.height - 1) {
        for x in lo.x..=hi.x.min(map.width - 1) {
            if distance_to_segment(&Vec2::new(x as f64, y as f64), seg) <= r {
                if let Some(p) = map.get(x, y) {
                    map.set(x, y, Some(p + offset));
                }
            }
        }
    }
}

/// Independent random streams, so that e.g. changing the noise level keeps
/// the geometry fixed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generates a scene deterministically from `cfg.seed`.
pub fn generate_scene(cfg: &SceneGenConfig) -> Result<Scene> {
    cfg.validate()?;
    let k = cfg.intrinsics();
    let mut geo = stream(cfg.seed, 0);
    let mut cams = stream(cfg.seed, 1);
    let mut obs = stream(cfg.seed, 2);
    let mut corrupt = stream(cfg.seed, 3);
    let mut init = stream(cfg.seed, 4);
    let noise = (cfg.pixel_noise > 0.0).then(|| Normal::new(0.0, cfg.pixel_noise).expect("finite noise"));

    let room = generate_room(cfg, &mut geo);
    let lines = generate_lines(cfg, &room, &mut geo);
    let points = generate_points(cfg, &room, &mut geo);
    let (w, h) = (cfg.image_width as usize, cfg.image_height as usize);

    let mut database = Vec::with_capacity(cfg.n_cameras);
    let mut db_visible: Vec<Vec<u32>> = Vec::new();
    for id in 0..cfg.n_cameras as u32 {
        let (pose, vis) = place_camera(cfg, &room, &k, &lines, &points, &mut cams, |_| true)?;
        let (segments, line_ids) = observe(&vis.lines, &noise, &mut obs);
        let mut xyz = render_xyz(&room, &k, &pose, w, h);
        let n_bad = (cfg.depth_outlier_fraction * segments.len() as f64).round() as usize;
        let mut depth_corrupted = vec![false; segments.len()];
        for i in rand::seq::index::sample(&mut corrupt, segments.len(), n_bad) {
            depth_corrupted[i] = true;
        }
        let center = pose.center();
        for (i, seg) in segments.iter().enumerate().filter(|(i, _)| depth_corrupted[*i]) {
            let ray = (lines[line_ids[i] as usize].midpoint() - center).normalize();
            let u: [f64; 3] = UnitSphere.sample(&mut corrupt);
            let ortho = (Vec3::from(u) - ray * ray.dot(&Vec3::from(u)))
                .try_normalize(1e-9)
                .unwrap_or_else(|| ray.cross(&Vec3::x()).normalize());
            let magnitude = cfg.depth_outlier_offset * corrupt.random_range(1.0..=1.5);
            corrupt_along(&mut xyz, seg, &(ortho * magnitude));
        }
        db_visible.push(line_ids.clone());
        database.push(DatabaseImage {
            id,
            pose,
            segments,
            line_ids,
            depth_corrupted,
            xyz,
        });
    }

    let shared = |visible: &[u32], db: &[u32]| visible.iter().filter(|l| db.binary_search(l).is_ok()).count();
    let mut queries = Vec::with_capacity(cfg.n_queries);
    for i in 0..cfg.n_queries as u32 {
        let (gt_pose, vis) = place_camera(cfg, &room, &k, &lines, &points, &mut cams, |v| {
            let ids: Vec<u32> = v.lines.iter().map(|(l, _)| *l).collect();
            db_visible.iter().any(|db| shared(&ids, db) > 0)
        })?;
        let (segments, line_ids) = observe(&vis.lines, &noise, &mut obs);
        let n_out = (cfg.point_outlier_fraction * vis.points.len() as f64).round() as usize;
        let mut point_outliers = vec![false; vis.points.len()];
        for j in rand::seq::index::sample(&mut obs, vis.points.len(), n_out) {
            point_outliers[j] = true;
        }
        let points_2d: Vec<PointCorrespondence> = vis
            .points
            .iter()
            .zip(&point_outliers)
            .map(|((pid, px), outlier)| {
                let p2d = if *outlier {
                    Vec2::new(
                        obs.random_range(0.0..w as f64 - 1.0),
                        obs.random_range(0.0..h as f64 - 1.0),
                    )
                } else {
                    noisy(px, &noise, &mut obs)
                };
                PointCorrespondence {
                    p2d,
                    p3d: points[*pid as usize],
                }
            })
            .collect();
        let mut ranked: Vec<(usize, u32)> = database
            .iter()
            .zip(&db_visible)
            .map(|(d, vis_db)| (shared(&line_ids, vis_db), d.id))
            .filter(|(n, _)| *n > 0)
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let init_pose = perturb_pose(&gt_pose, cfg.init_translation, cfg.init_rotation_deg, init.random())?;
        queries.push(QueryImage {
            id: cfg.n_cameras as u32 + i,
            gt_pose,
            init_pose,
            segments,
            line_ids,
            points: points_2d,
            point_outliers,
            retrieval: ranked.iter().take(cfg.retrieval_size).map(|(_, id)| *id).collect(),
        });
    }

    Ok(Scene {
        intrinsics: k,
        width: cfg.image_width,
        height: cfg.image_height,
        lines3d: lines,
        points3d: points,
        database,
        queries,
    })
}
