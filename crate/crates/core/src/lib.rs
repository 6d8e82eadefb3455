//! Non-neural machinery for selective two-step face detectors.
//!
//! The crate covers everything around the network: pyramid anchor tiling,
//! two-threshold matching, box coding and losses, the selective two-step
//! classification/regression inference chain, training augmentation
//! geometry, stem shape tracing, WIDER-style evaluation, and the file
//! formats that tie them together. A seeded synthetic scene generator stands
//! in for network scores so the whole chain can be exercised end to end.
//!
//! # Features
//!
//! - `parallel` *(default)*: per-anchor and per-image loops run on rayon.
//!   Without it every [`Execution`] mode runs sequentially. Results are
//!   identical either way.

pub mod anchors;
pub mod augment;
pub mod backbone;
pub mod coding;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod matching;
pub mod refine;
pub mod seed;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{clip_box, iou, BoxXYXY};
