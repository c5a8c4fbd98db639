//! Multi-stage tiling, upscaling, detection stitching, deduplication, and
//! precision-recall evaluation for object detection on very large overhead
//! images.
//!
//! The pipeline cuts a scene into overlapped tiles, upscales them (built-in
//! exact nearest-neighbor, or any external engine through a directory
//! exchange protocol), cuts detector-sized tiles from the upscaled images,
//! runs a detector (external process or the built-in seeded mock), stitches
//! detections back to scene coordinates through the recorded placement
//! chains, suppresses duplicates with a confidence-sorted IOA rule, and
//! sweeps confidence thresholds to produce PR curves and average precision.

pub mod detect_io;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod labels;
pub mod pipeline;
pub mod process;
pub mod raster;
pub mod rng;
pub mod stitch;
pub mod synth;
pub mod tiling;

pub use error::{Error, Result};
