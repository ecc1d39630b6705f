use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use pointline::error::{Error, Result};
use pointline::geometry::{pose_error, LineCorrespondence, Pose, PoseError};
use pointline::harness::io::{load_scene, read_json, save_scene, write_json};
use pointline::harness::pipeline::MapSummary;
use pointline::harness::{
    evaluate_localization, format_table, generate_scene, match_query, run_pipeline, PipelineConfig, QueryImage, Scene,
};
use pointline::mapping::{build_line_map, LineMap3D};
use pointline::matching::MatchResult;
use pointline::refine::{refine_pose_joint, refine_pose_line_only, refine_pose_points, RefinementResult};

/// Point-line camera pose refinement on synthetic scenes.
#[derive(Parser, Debug)]
#[command(name = "pointline", version)]
struct Cli {
    /// Seed for scene generation and RANSAC; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with `scene`, `mapping`, `matching` and `optimizer` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the machine-readable report of the command here.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
    },
    /// Build the 3D line map from the database images of a scene.
    Map {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        ransac: RansacArgs,
    },
    /// Match every query's segments against a line map.
    Match {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        matching: MatchArgs,
    },
    /// Refine every query pose.
    Refine {
        #[arg(long)]
        scene: PathBuf,
        /// Output of `match`; required for the line and joint modes.
        #[arg(long)]
        matches: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Joint)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        optimizer: OptimizerArgs,
    },
    /// Score estimated poses against the scene's ground truth.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        poses: PathBuf,
    },
    /// Run map, match, refine and eval; prints the score table.
    Pipeline {
        /// Scene directory; a scene is generated from the config when absent.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[command(flatten)]
        scene_args: SceneArgs,
        #[command(flatten)]
        ransac: RansacArgs,
        #[command(flatten)]
        matching: MatchArgs,
        #[command(flatten)]
        optimizer: OptimizerArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Line,
    Joint,
    Point,
}

#[derive(Args, Debug, Default)]
struct SceneArgs {
    #[arg(long)]
    n_cameras: Option<usize>,
    #[arg(long)]
    n_queries: Option<usize>,
    #[arg(long)]
    n_lines: Option<usize>,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    room_extent: Option<f64>,
    #[arg(long)]
    pixel_noise: Option<f64>,
    #[arg(long)]
    init_translation: Option<f64>,
    #[arg(long)]
    init_rotation_deg: Option<f64>,
    #[arg(long)]
    depth_outlier_fraction: Option<f64>,
    #[arg(long)]
    depth_outlier_offset: Option<f64>,
    #[arg(long)]
    point_outlier_fraction: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct RansacArgs {
    #[arg(long)]
    ransac_iterations: Option<usize>,
    #[arg(long)]
    inlier_threshold: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct MatchArgs {
    #[arg(long)]
    overlap_threshold: Option<f64>,
    #[arg(long)]
    max_candidates: Option<usize>,
    #[arg(long)]
    residual_threshold: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct OptimizerArgs {
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    huber_delta: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl SceneArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        let s = &mut cfg.scene;
        set(&mut s.n_cameras, self.n_cameras);
        set(&mut s.n_queries, self.n_queries);
        set(&mut s.n_lines, self.n_lines);
        set(&mut s.n_points, self.n_points);
        set(&mut s.room_extent, self.room_extent);
        set(&mut s.pixel_noise, self.pixel_noise);
        set(&mut s.init_translation, self.init_translation);
        set(&mut s.init_rotation_deg, self.init_rotation_deg);
        set(&mut s.depth_outlier_fraction, self.depth_outlier_fraction);
        set(&mut s.depth_outlier_offset, self.depth_outlier_offset);
        set(&mut s.point_outlier_fraction, self.point_outlier_fraction);
    }
}

impl RansacArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        set(&mut cfg.mapping.iterations, self.ransac_iterations);
        set(&mut cfg.mapping.inlier_threshold, self.inlier_threshold);
    }
}

impl MatchArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        set(&mut cfg.matching.overlap_threshold, self.overlap_threshold);
        set(&mut cfg.matching.max_candidates_per_query_line, self.max_candidates);
        set(&mut cfg.matching.residual_threshold, self.residual_threshold);
    }
}

impl OptimizerArgs {
    fn apply(self, cfg: &mut PipelineConfig) {
        set(&mut cfg.optimizer.max_iterations, self.max_iterations);
        set(&mut cfg.optimizer.huber_delta, self.huber_delta);
    }
}

/// Matching outcome of one query as stored by `match`.
#[derive(Debug, Serialize, Deserialize)]
struct QueryMatches {
    query: u32,
    result: Option<MatchResult>,
    error: Option<String>,
}

/// Refined pose of one query as stored by `refine` and read by `eval`.
#[derive(Debug, Serialize, Deserialize)]
struct QueryPose {
    query: u32,
    pose: Pose,
    /// Why the initial pose was kept, when it was.
    #[serde(default)]
    fallback: Option<String>,
}

#[derive(Serialize)]
struct MatchReport {
    query: u32,
    matched: usize,
    error: Option<String>,
}

#[derive(Serialize)]
struct RefineReport {
    query: u32,
    error: PoseError,
    fallback: Option<String>,
    refinement: Option<RefinementResult>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.scene.seed = seed;
        cfg.mapping.seed = seed;
    }
    Ok(cfg)
}

fn write_report<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => Ok(()),
    }
}

fn query(scene: &Scene, id: u32) -> Result<&QueryImage> {
    scene
        .queries
        .iter()
        .find(|q| q.id == id)
        .ok_or_else(|| Error::InvalidInput(format!("query {id} is not in the scene")))
}

fn refine_one(
    scene: &Scene,
    q: &QueryImage,
    lines: Option<&[LineCorrespondence]>,
    mode: Mode,
    cfg: &PipelineConfig,
) -> Result<RefinementResult> {
    let k = &scene.intrinsics;
    let lines = lines.unwrap_or(&[]);
    match mode {
        Mode::Line => refine_pose_line_only(&q.init_pose, lines, k, &cfg.optimizer),
        Mode::Joint => refine_pose_joint(&q.init_pose, lines, &q.points, k, &cfg.optimizer, None),
        Mode::Point => refine_pose_points(&q.init_pose, &q.points, k, &cfg.optimizer),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let report = cli.report.as_deref();
    match cli.command {
        Command::Synth { out, scene } => {
            scene.apply(&mut cfg);
            let generated = generate_scene(&cfg.scene)?;
            save_scene(&out, &generated)?;
            println!(
                "wrote {} database and {} query images to {}",
                generated.database.len(),
                generated.queries.len(),
                out.display()
            );
            write_report(report, &cfg.scene)
        }
        Command::Map { scene, out, ransac } => {
            ransac.apply(&mut cfg);
            let scene = load_scene(&scene)?;
            let build = build_line_map(&scene.database_views(), &cfg.mapping)?;
            write_json(&out, &build.map)?;
            println!(
                "{} map lines from {} images",
                build.map.lines.len(),
                build.reports.len()
            );
            write_report(
                report,
                &MapSummary {
                    lines: build.map.lines.len(),
                    images: build.reports,
                },
            )
        }
        Command::Match {
            scene,
            map,
            out,
            matching,
        } => {
            matching.apply(&mut cfg);
            cfg.matching.validate()?;
            let scene = load_scene(&scene)?;
            let map: LineMap3D = read_json(&map)?;
            map.validate()?;
            let results: Vec<QueryMatches> = scene
                .queries
                .iter()
                .map(|q| match match_query(&scene, &map, q, &cfg.matching) {
                    Ok(r) => QueryMatches {
                        query: q.id,
                        result: Some(r),
                        error: None,
                    },
                    Err(e) => QueryMatches {
                        query: q.id,
                        result: None,
                        error: Some(e.to_string()),
                    },
                })
                .collect();
            write_json(&out, &results)?;
            let summary: Vec<MatchReport> = results
                .iter()
                .map(|r| MatchReport {
                    query: r.query,
                    matched: r.result.as_ref().map_or(0, |m| m.matches.len()),
                    error: r.error.clone(),
                })
                .collect();
            for s in &summary {
                match &s.error {
                    Some(e) => println!("query {}: matching failed: {e}", s.query),
                    None => println!("query {}: {} line matches", s.query, s.matched),
                }
            }
            write_report(report, &summary)
        }
        Command::Refine {
            scene,
            matches,
            mode,
            out,
            optimizer,
        } => {
            optimizer.apply(&mut cfg);
            cfg.optimizer.validate()?;
            let scene = load_scene(&scene)?;
            let matches: Vec<QueryMatches> = match (&matches, mode) {
                (Some(path), _) => read_json(path)?,
                (None, Mode::Point) => Vec::new(),
                (None, _) => {
                    return Err(Error::InvalidInput(
                        format!("--mode {mode:?} needs --matches").to_lowercase(),
                    ))
                }
            };
            for m in &matches {
                query(&scene, m.query)?;
            }
            let mut poses = Vec::new();
            let mut details = Vec::new();
            for q in &scene.queries {
                let found = matches.iter().find(|m| m.query == q.id);
                let lines = found
                    .and_then(|m| m.result.as_ref())
                    .map(|r| r.correspondences.as_slice());
                let outcome = match (mode, found.and_then(|m| m.error.as_ref())) {
                    (Mode::Line, Some(e)) => Err(format!("matching failed: {e}")),
                    _ => refine_one(&scene, q, lines, mode, &cfg).map_err(|e| e.to_string()),
                };
                let (pose, fallback, refinement) = match outcome {
                    Ok(r) => (r.pose, None, Some(r)),
                    Err(e) => (q.init_pose, Some(e), None),
                };
                poses.push(QueryPose {
                    query: q.id,
                    pose,
                    fallback: fallback.clone(),
                });
                details.push(RefineReport {
                    query: q.id,
                    error: pose_error(&pose, &q.gt_pose),
                    fallback,
                    refinement,
                });
            }
            write_json(&out, &poses)?;
            let kept = poses.iter().filter(|p| p.fallback.is_some()).count();
            println!("refined {} queries, {kept} kept their initial pose", poses.len());
            write_report(report, &details)
        }
        Command::Eval { scene, poses } => {
            let scene = load_scene(&scene)?;
            let poses: Vec<QueryPose> = read_json(&poses)?;
            let mut est = Vec::new();
            let mut gt = Vec::new();
            for p in &poses {
                est.push(p.pose);
                gt.push(query(&scene, p.query)?.gt_pose);
            }
            let score = evaluate_localization(&est, &gt)?;
            println!(
                "(0.25m, 10°) {:.1}  (0.5m, 10°) {:.1}  (1m, 10°) {:.1}",
                score.within[0], score.within[1], score.within[2]
            );
            write_report(report, &score)
        }
        Command::Pipeline {
            scene,
            scene_args,
            ransac,
            matching,
            optimizer,
        } => {
            scene_args.apply(&mut cfg);
            ransac.apply(&mut cfg);
            matching.apply(&mut cfg);
            optimizer.apply(&mut cfg);
            let scene = match scene {
                Some(dir) => load_scene(&dir)?,
                None => generate_scene(&cfg.scene)?,
            };
            let out = run_pipeline(&scene, &cfg)?;
            print!("{}", format_table(&out.report.scores));
            write_report(report, &out.report)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(4),
    }
}
