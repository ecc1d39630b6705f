use pointline::geometry::project_point;
use pointline::harness::{generate_scene, match_query, run_pipeline, PipelineConfig, SceneGenConfig};
use pointline::mapping::{build_line_map, RansacConfig};
use pointline::matching::MatchConfig;

fn reference(seed: u64) -> SceneGenConfig {
    SceneGenConfig {
        seed,
        ..Default::default()
    }
}

#[test]
fn retained_map_lines_reproject_into_their_source_image() {
    for seed in [1, 2] {
        let scene = generate_scene(&SceneGenConfig {
            depth_outlier_fraction: 0.1,
            pixel_noise: 0.5,
            ..reference(seed)
        })
        .unwrap();
        let cfg = RansacConfig::default();
        let build = build_line_map(&scene.database_views(), &cfg).unwrap();
        assert!(!build.map.lines.is_empty());
        for line in &build.map.lines {
            let src = line.source().unwrap();
            let db = scene.database.iter().find(|d| d.id == src.image).unwrap();
            let observed = db.segments[src.segment as usize];
            for (end, obs) in [
                (line.segment.p_left, observed.p_left()),
                (line.segment.p_right, observed.p_right()),
            ] {
                let px = project_point(&scene.intrinsics, &db.pose, &end).unwrap();
                assert!(
                    (px - obs).norm() < cfg.inlier_threshold,
                    "image {} segment {}",
                    src.image,
                    src.segment
                );
            }
        }
    }
}

#[test]
fn matching_is_mostly_correct_under_moderate_perturbation() {
    let scene = generate_scene(&SceneGenConfig {
        init_translation: 0.3,
        init_rotation_deg: 3.0,
        ..reference(0)
    })
    .unwrap();
    let map = build_line_map(&scene.database_views(), &RansacConfig::default())
        .unwrap()
        .map;
    let (mut returned, mut correct) = (0, 0);
    for q in &scene.queries {
        let result = match_query(&scene, &map, q, &MatchConfig::default()).unwrap();
        for m in &result.matches {
            assert!(m.overlap >= 0.5 && m.residual < 10.0);
            let src = map.get(m.map_segment).unwrap().source().unwrap();
            let db = scene.database.iter().find(|d| d.id == src.image).unwrap();
            returned += 1;
            correct += (db.line_ids[src.segment as usize] == q.line_ids[m.query_segment as usize]) as usize;
        }
    }
    assert!(returned > 0);
    assert!(correct as f64 >= 0.8 * returned as f64, "{correct}/{returned}");
}

#[test]
fn noiseless_reference_scene_localizes_every_query() {
    let cfg = PipelineConfig {
        scene: reference(4),
        ..Default::default()
    };
    let scene = generate_scene(&cfg.scene).unwrap();
    let out = run_pipeline(&scene, &cfg).unwrap();
    assert_eq!(out.report.scores.joint.within, [100.0; 3]);
    for q in &out.report.queries {
        assert!(q.line_only.fallback.is_some() || q.line_only.refinement.is_some());
        let w = [
            &out.report.scores.initial,
            &out.report.scores.line_only,
            &out.report.scores.joint,
        ];
        assert!(w
            .iter()
            .all(|s| s.within[0] <= s.within[1] && s.within[1] <= s.within[2]));
    }
}
