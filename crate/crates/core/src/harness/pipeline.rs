//! End-to-end run over a scene: line map, matching, line-only and joint
//! refinement, and localization scores.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_error, LineCorrespondence, Pose, PoseError};
use crate::harness::eval::{evaluate_localization, LocalizationScore, THRESHOLDS};
use crate::harness::scene::{QueryImage, Scene, SceneGenConfig};
use crate::mapping::{build_line_map, ImageMapReport, LineMap3D, MapBuild, RansacConfig};
use crate::matching::{match_query_to_map, MatchConfig, MatchResult, MatchStats};
use crate::refine::{refine_pose_joint, refine_pose_line_only, OptimizerConfig, RefinementResult};

/// Settings for every stage; also the layout of the CLI config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub scene: SceneGenConfig,
    pub mapping: RansacConfig,
    pub matching: MatchConfig,
    pub optimizer: OptimizerConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.mapping.validate()?;
        self.matching.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub pose: Pose,
    pub error: PoseError,
    /// Why the initial pose was kept, when it was.
    pub fallback: Option<String>,
    pub refinement: Option<RefinementResult>,
}

impl VariantOutcome {
    fn new(query: &QueryImage, outcome: Result<RefinementResult>) -> Self {
        match outcome {
            Ok(r) => Self {
                pose: r.pose,
                error: pose_error(&r.pose, &query.gt_pose),
                fallback: None,
                refinement: Some(r),
            },
            Err(e) => Self::fallback(query, e.to_string()),
        }
    }

    fn fallback(query: &QueryImage, reason: String) -> Self {
        Self {
            pose: query.init_pose,
            error: pose_error(&query.init_pose, &query.gt_pose),
            fallback: Some(reason),
            refinement: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub query: u32,
    pub matching: Option<MatchStats>,
    pub matching_error: Option<String>,
    pub line_matches: usize,
    /// Matches whose map line was lifted from an observation of the same
    /// scene line.
    pub correct_line_matches: usize,
    pub points: usize,
    pub initial_error: PoseError,
    pub line_only: VariantOutcome,
    pub joint: VariantOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub initial: LocalizationScore,
    pub line_only: LocalizationScore,
    pub joint: LocalizationScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub lines: usize,
    pub images: Vec<ImageMapReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub map: MapSummary,
    pub queries: Vec<QueryReport>,
    pub scores: ScoreTable,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub map: MapBuild,
    pub report: PipelineReport,
}

/// Matches one query against the map under its initial pose.
pub fn match_query(scene: &Scene, map: &LineMap3D, query: &QueryImage, cfg: &MatchConfig) -> Result<MatchResult> {
    match_query_to_map(
        &query.segments,
        &query.retrieval,
        &scene.database_views(),
        map,
        &query.init_pose,
        &scene.intrinsics,
        cfg,
    )
}

fn count_correct(scene: &Scene, map: &LineMap3D, query: &QueryImage, result: &MatchResult) -> usize {
    result
        .matches
        .iter()
        .filter(|m| {
            let truth = query.line_ids[m.query_segment as usize];
            map.get(m.map_segment).and_then(|l| l.source()).and_then(|src| {
                let db = scene.database.iter().find(|d| d.id == src.image)?;
                db.line_ids.get(src.segment as usize).copied()
            }) == Some(truth)
        })
        .count()
}

fn process_query(scene: &Scene, map: &LineMap3D, query: &QueryImage, cfg: &PipelineConfig) -> QueryReport {
    let k = &scene.intrinsics;
    let matched = match_query(scene, map, query, &cfg.matching);
    let (lines, matching, matching_error, correct): (Vec<LineCorrespondence>, _, _, _) = match &matched {
        Ok(r) => (
            r.correspondences.clone(),
            Some(r.stats.clone()),
            None,
            count_correct(scene, map, query, r),
        ),
        Err(e) => (Vec::new(), None, Some(e.to_string()), 0),
    };
    let line_only = match &matching_error {
        Some(e) => VariantOutcome::fallback(query, format!("matching failed: {e}")),
        None => VariantOutcome::new(
            query,
            refine_pose_line_only(&query.init_pose, &lines, k, &cfg.optimizer),
        ),
    };
    let joint = VariantOutcome::new(
        query,
        refine_pose_joint(&query.init_pose, &lines, &query.points, k, &cfg.optimizer, None),
    );
    QueryReport {
        query: query.id,
        matching,
        matching_error,
        line_matches: lines.len(),
        correct_line_matches: correct,
        points: query.points.len(),
        initial_error: pose_error(&query.init_pose, &query.gt_pose),
        line_only,
        joint,
    }
}

/// Builds the line map from the database images, then matches and refines
/// every query.
///
/// A query whose matching or refinement fails keeps its initial pose for the
/// affected variant and records why. The joint variant still uses the
/// query's point correspondences when line matching fails.
pub fn run_pipeline(scene: &Scene, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    if scene.queries.is_empty() {
        return Err(Error::LengthMismatch { left: 0, right: 0 });
    }
    cfg.mapping.validate()?;
    cfg.matching.validate()?;
    cfg.optimizer.validate()?;
    scene.validate()?;
    let build = build_line_map(&scene.database_views(), &cfg.mapping)?;
    let queries: Vec<QueryReport> = scene
        .queries
        .par_iter()
        .map(|q| process_query(scene, &build.map, q, cfg))
        .collect();
    let gt: Vec<Pose> = scene.queries.iter().map(|q| q.gt_pose).collect();
    let init: Vec<Pose> = scene.queries.iter().map(|q| q.init_pose).collect();
    let line_only: Vec<Pose> = queries.iter().map(|q| q.line_only.pose).collect();
    let joint: Vec<Pose> = queries.iter().map(|q| q.joint.pose).collect();
    let scores = ScoreTable {
        initial: evaluate_localization(&init, &gt)?,
        line_only: evaluate_localization(&line_only, &gt)?,
        joint: evaluate_localization(&joint, &gt)?,
    };
    let report = PipelineReport {
        map: MapSummary {
            lines: build.map.lines.len(),
            images: build.reports.clone(),
        },
        queries,
        scores,
    };
    Ok(PipelineOutput { map: build, report })
}

/// Score table with one row per variant and one column per threshold.
pub fn format_table(scores: &ScoreTable) -> String {
    let mut out = format!("{:<32}", "Method");
    for (t, r) in THRESHOLDS {
        out += &format!("{:>14}", format!("({t}m, {r}°)"));
    }
    out.push('\n');
    for (name, s) in [
        ("Initial pose", &scores.initial),
        ("Line-only optimization", &scores.line_only),
        ("Point-line joint optimization", &scores.joint),
    ] {
        let _ = write!(out, "{name:<32}");
        for v in s.within {
            let _ = write!(out, "{v:>14.1}");
        }
        out.push('\n');
    }
    out
}
