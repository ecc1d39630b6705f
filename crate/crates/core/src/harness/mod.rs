//! Synthetic scenes, file formats, localization scoring and the end-to-end
//! pipeline.

pub mod eval;
pub mod io;
pub mod pipeline;
pub mod scene;

pub use eval::{evaluate_localization, LocalizationScore};
pub use pipeline::{format_table, match_query, run_pipeline, PipelineConfig, PipelineOutput, PipelineReport};
pub use scene::{generate_scene, perturb_pose, DatabaseImage, QueryImage, Scene, SceneGenConfig};
