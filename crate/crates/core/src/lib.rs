//! Visual attribution for autoregressive multimodal models, computed from
//! serialized hidden-state traces.
//!
//! The pipeline for one generated token:
//!
//! 1. [`lens::token_attribution`] projects every visual state onto the
//!    token's unembedding row, per stored scale.
//! 2. [`msea::msea_attribution`] resamples the per-scale maps to image
//!    pixels and fuses them.
//! 3. [`arc::Explainer`] weighs the preceding tokens by ranking agreement,
//!    subtracts their pooled attribution and filters the result.
//! 4. [`metrics`] scores maps against ground-truth masks.
//!
//! [`toy`] builds small synthetic traces with known answers.

pub mod arc;
pub mod attribution;
pub mod config;
pub mod error;
pub mod geometry;
pub mod lens;
pub mod mask;
pub mod metrics;
pub mod msea;
pub mod render;
pub mod toy;
pub mod trace;

#[cfg(test)]
pub(crate) mod testutil;

pub use arc::{arc_explain, ArcConfig, Explainer, Explanation};
pub use attribution::{load_map, save_map, AttributionMap, Stage};
pub use config::EngineConfig;
pub use error::{Error, Result};
pub use geometry::{MapGeometry, PixelRect, ResizePolicy, ScalePlan};
pub use lens::Ranking;
pub use mask::{load_masks, save_masks, BinaryMask, MaskSet};
pub use metrics::{BinarizePolicy, EvalReport};
pub use msea::{FusionMode, Interpolation, ScaleConfig};
pub use trace::{directory_digest, load_trace, save_trace, TraceBundle};
