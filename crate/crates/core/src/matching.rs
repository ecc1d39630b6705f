//! Epipolar line matching of query segments against posed database images
//! and association to the 3D line map.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    fundamental_matrix, intersect_lines, line_through_points, CameraIntrinsics, HomogeneousLine2D, LineCorrespondence,
    Pose, Segment2D, Segment3D, Vec2, Vec3,
};
use crate::mapping::{DatabaseView, LineMap3D};
use crate::refine::{line_terms, AngleScale, LineTerms};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Minimum interval IoU between the transferred query segment and a
    /// database segment.
    pub overlap_threshold: f64,
    pub max_candidates_per_query_line: usize,
    /// Matches need `d + s sin(theta)` strictly below this, in pixels.
    pub residual_threshold: f64,
    pub angle_scale: AngleScale,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            overlap_threshold: 0.5,
            max_candidates_per_query_line: 10,
            residual_threshold: 10.0,
            angle_scale: AngleScale::ProjectedLength,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "overlap_threshold must lie in (0, 1], got {}",
                self.overlap_threshold
            )));
        }
        if self.max_candidates_per_query_line == 0 {
            return Err(Error::InvalidInput(
                "max_candidates_per_query_line must be positive".into(),
            ));
        }
        if !(self.residual_threshold >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "residual_threshold must be non-negative, got {}",
                self.residual_threshold
            )));
        }
        if let AngleScale::Constant(s) = self.angle_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!("angle scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// A query/database segment pair that passed the epipolar overlap test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpipolarPair {
    pub query: u32,
    pub database: u32,
    pub overlap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpipolarCandidates {
    pub pairs: Vec<EpipolarPair>,
    /// Pairs tested, excluding segments below the minimum length.
    pub tested: usize,
    /// Pairs skipped because a transferred or database line was degenerate
    /// or parallel to the epipolar lines.
    pub degenerate: usize,
    /// Segments (query or database) below the minimum length.
    pub too_short: usize,
}

/// Interval IoU of two intervals given by unordered endpoints.
pub fn overlap_ratio(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    let (a0, a1) = (a.0.min(a.1), a.0.max(a.1));
    let (b0, b1) = (b.0.min(b.1), b.0.max(b.1));
    for len in [a1 - a0, b1 - b0] {
        if !(len > 0.0) {
            return Err(Error::DegenerateSegment { length: len });
        }
    }
    let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
    let union = a1.max(b1) - a0.min(b0);
    Ok((inter / union).clamp(0.0, 1.0))
}

fn homogeneous(p: &Vec2) -> Vec3 {
    Vec3::new(p.x, p.y, 1.0)
}

fn dehomogenize(p: &Vec3) -> Vec2 {
    Vec2::new(p.x / p.z, p.y / p.z)
}

/// Overlap of the epipolar transfer of `query` with `db`, measured along the
/// database line.
fn transfer_overlap(query: &Segment2D, db: &Segment2D, db_line: &HomogeneousLine2D, f: &Matrix3<f64>) -> Result<f64> {
    let l_left = HomogeneousLine2D::from_coefficients(&(f * homogeneous(query.p_left())))?;
    let l_right = HomogeneousLine2D::from_coefficients(&(f * homogeneous(query.p_right())))?;
    let p_l = dehomogenize(&intersect_lines(db_line, &l_left)?);
    let p_r = dehomogenize(&intersect_lines(db_line, &l_right)?);
    let u = db_line.direction();
    let origin = db.p_left();
    let along = |p: &Vec2| (p - origin).dot(&u);
    overlap_ratio((along(&p_l), along(&p_r)), (0.0, along(db.p_right())))
}

/// Candidate pairs whose epipolar transfer overlaps a database segment by at
/// least the configured ratio, best overlaps first per query line.
pub fn epipolar_candidates(
    query: &[Segment2D],
    db: &[Segment2D],
    f: &Matrix3<f64>,
    cfg: &MatchConfig,
) -> Result<EpipolarCandidates> {
    cfg.validate()?;
    if !f.iter().all(|v| v.is_finite()) || (f.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(
            "fundamental matrix must be finite with unit norm".into(),
        ));
    }
    let mut out = EpipolarCandidates::default();
    let db_lines: Vec<Option<HomogeneousLine2D>> = db
        .iter()
        .map(|s| {
            if s.check_length().is_err() {
                return None;
            }
            line_through_points(&homogeneous(s.p_left()), &homogeneous(s.p_right())).ok()
        })
        .collect();
    out.too_short = db_lines.iter().filter(|l| l.is_none()).count();
    for (qi, q) in query.iter().enumerate() {
        if q.check_length().is_err() {
            out.too_short += 1;
            continue;
        }
        let mut kept = Vec::new();
        for (di, (d, line)) in db.iter().zip(&db_lines).enumerate() {
            let Some(line) = line else { continue };
            out.tested += 1;
            match transfer_overlap(q, d, line, f) {
                Ok(overlap) if overlap >= cfg.overlap_threshold => kept.push(EpipolarPair {
                    query: qi as u32,
                    database: di as u32,
                    overlap,
                }),
                Ok(_) => {}
                Err(_) => out.degenerate += 1,
            }
        }
        kept.sort_by(|a, b| b.overlap.total_cmp(&a.overlap));
        kept.truncate(cfg.max_candidates_per_query_line);
        out.pairs.extend(kept);
    }
    Ok(out)
}

/// Midpoint distance, scaled angle term, and their sum for an observed
/// segment against a 3D segment seen from `pose`.
pub fn line_reproj_residual(
    seg2d: &Segment2D,
    seg3d: &Segment3D,
    k: &CameraIntrinsics,
    pose: &Pose,
    scale: AngleScale,
) -> Result<LineTerms> {
    line_terms(k, pose, seg2d, seg3d, scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateMatch {
    pub query_segment: u32,
    pub database_image: u32,
    pub database_segment: u32,
    pub map_segment: u32,
    pub overlap: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchStats {
    pub retrieved_images: usize,
    /// Retrieved images whose center coincides with the query's.
    pub degenerate_baselines: usize,
    pub pairs_tested: usize,
    pub degenerate_pairs: usize,
    pub epipolar_candidates: usize,
    /// Candidates whose database segment did not make it into the map.
    pub unmapped: usize,
    /// Candidates whose map segment does not project under the initial pose.
    pub unprojectable: usize,
    pub above_threshold: usize,
    /// Query lines that lost their best candidate to another query line.
    pub reassigned: usize,
    pub matched: usize,
    /// Counts of matched residuals in unit-pixel bins from zero.
    pub residual_histogram: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Matches ordered by query segment.
    pub matches: Vec<CandidateMatch>,
    /// Correspondences parallel to `matches`.
    pub correspondences: Vec<LineCorrespondence>,
    pub stats: MatchStats,
}

/// Picks, for every query line in `proposers`, its best candidate whose map
/// segment is not yet taken; each map segment goes to the lowest residual.
fn assign(
    proposers: &[usize],
    candidates: &[Vec<CandidateMatch>],
    taken: &mut BTreeSet<u32>,
) -> (Vec<CandidateMatch>, Vec<usize>) {
    let mut claims: BTreeMap<u32, Vec<(usize, CandidateMatch)>> = BTreeMap::new();
    for &q in proposers {
        if let Some(c) = candidates[q].iter().find(|c| !taken.contains(&c.map_segment)) {
            claims.entry(c.map_segment).or_default().push((q, *c));
        }
    }
    let mut won = Vec::new();
    let mut lost = Vec::new();
    for (map_segment, mut claim) in claims {
        claim.sort_by(|a, b| a.1.residual.total_cmp(&b.1.residual).then(a.0.cmp(&b.0)));
        taken.insert(map_segment);
        won.push(claim[0].1);
        lost.extend(claim[1..].iter().map(|(q, _)| *q));
    }
    lost.sort_unstable();
    (won, lost)
}

/// One-to-one 2D-3D line matches for a query image under its initial pose.
///
/// `retrieval` lists database image ids to match against; each must be
/// present in `database`.
pub fn match_query_to_map(
    query: &[Segment2D],
    retrieval: &[u32],
    database: &[DatabaseView],
    map: &LineMap3D,
    init: &Pose,
    k: &CameraIntrinsics,
    cfg: &MatchConfig,
) -> Result<MatchResult> {
    cfg.validate()?;
    if retrieval.is_empty() {
        return Err(Error::EmptyRetrieval);
    }
    let mut stats = MatchStats {
        retrieved_images: retrieval.len(),
        ..Default::default()
    };
    // per query line, candidates keyed by map segment
    let mut per_query: Vec<BTreeMap<u32, CandidateMatch>> = vec![BTreeMap::new(); query.len()];
    for &image in retrieval {
        let view = database
            .iter()
            .find(|v| v.id == image)
            .ok_or_else(|| Error::InvalidInput(format!("retrieved image {image} is not in the database")))?;
        let f = match fundamental_matrix(k, init, view.k, view.pose) {
            Ok(f) => f,
            Err(Error::DegenerateBaseline { .. }) => {
                stats.degenerate_baselines += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let cands = epipolar_candidates(query, view.segments, &f, cfg)?;
        stats.pairs_tested += cands.tested;
        stats.degenerate_pairs += cands.degenerate;
        stats.epipolar_candidates += cands.pairs.len();
        for pair in cands.pairs {
            let Some(line) = map.find_by_source(image, pair.database) else {
                stats.unmapped += 1;
                continue;
            };
            let seg2d = &query[pair.query as usize];
            let Ok(terms) = line_reproj_residual(seg2d, &line.segment, k, init, cfg.angle_scale) else {
                stats.unprojectable += 1;
                continue;
            };
            let residual = terms.total();
            if !(residual < cfg.residual_threshold) {
                stats.above_threshold += 1;
                continue;
            }
            per_query[pair.query as usize].insert(
                line.id,
                CandidateMatch {
                    query_segment: pair.query,
                    database_image: image,
                    database_segment: pair.database,
                    map_segment: line.id,
                    overlap: pair.overlap,
                    residual,
                },
            );
        }
    }

    let candidates: Vec<Vec<CandidateMatch>> = per_query
        .into_iter()
        .map(|m| {
            let mut v: Vec<CandidateMatch> = m.into_values().collect();
            v.sort_by(|a, b| {
                a.residual
                    .total_cmp(&b.residual)
                    .then(a.map_segment.cmp(&b.map_segment))
            });
            v
        })
        .collect();
    let proposers: Vec<usize> = (0..query.len()).filter(|&q| !candidates[q].is_empty()).collect();
    let mut taken = BTreeSet::new();
    let (mut matches, losers) = assign(&proposers, &candidates, &mut taken);
    stats.reassigned = losers.len();
    let (second, _) = assign(&losers, &candidates, &mut taken);
    matches.extend(second);
    matches.sort_by_key(|m| m.query_segment);

    let bins = cfg.residual_threshold.ceil().max(1.0) as usize;
    stats.residual_histogram = vec![0; bins];
    for m in &matches {
        stats.residual_histogram[(m.residual.floor() as usize).min(bins - 1)] += 1;
    }
    stats.matched = matches.len();
    let correspondences = matches
        .iter()
        .map(|m| LineCorrespondence {
            seg2d: query[m.query_segment as usize],
            seg3d: map.get(m.map_segment).expect("matched map line exists").segment,
        })
        .collect();
    Ok(MatchResult {
        matches,
        correspondences,
        stats,
    })
}
