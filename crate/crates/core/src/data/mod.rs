//! File formats and the synthetic scene generator.
//!
//! Files store boxes as `x y w h`; in memory every box is
//! [`BoxXYXY`](crate::geometry::BoxXYXY). Conversion happens only here. All writers
//! emit `\n`-terminated lines with `.` as the decimal separator.

pub mod scores;
pub mod synth;
pub mod wider;

pub use scores::{load_scores, save_scores};
pub use synth::{synth_scene, synth_scores, SceneSpec, ScoreModel, SyntheticScene};
pub use wider::{
    detection_file_name, detections_to_string, parse_detections, parse_detections_str, parse_gt,
    write_detections, write_gt, GroundTruthFace, GroundTruthSet, ImageAnnotation,
};
