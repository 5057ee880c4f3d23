//! Zero-shot segmentation of whole-slide images from frozen encoder outputs.
//!
//! The engine consumes patch embeddings and per-prompt text embeddings
//! (produced by an external encoder or by the deterministic mock encoder),
//! reduces the prompts to class prototypes, scores every tile against every
//! prototype with cosine similarity, reconstructs overlap-averaged class
//! maps at stride-cell resolution and takes the per-cell argmax.
//!
//! Module map:
//! - [`tiling`]: tissue detection and the overlapping tile lattice.
//! - [`prompts`]: prompt expansion and prompt-ensemble prototypes.
//! - [`embio`]: binary embedding files and the mock encoder.
//! - [`simcore`]: cosine scores, grid accumulation, argmax masks.
//! - [`metrics`]: Dice, precision, recall and dataset aggregation.
//! - [`render`]: mask expansion and contour overlays.
//! - [`phantom`]: synthetic fixtures with analytically known answers.

pub mod embio;
pub mod error;
pub mod export;
pub mod metrics;
pub mod phantom;
pub mod prompts;
pub mod raster;
pub mod render;
pub mod simcore;
pub mod stream;
pub mod tiling;

pub use error::{Result, ZeusError};
