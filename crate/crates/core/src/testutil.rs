//! Hand-built bundles for unit tests.

use ndarray::Array2;

use crate::geometry::{PixelRect, ResizePolicy, ScalePlan};
use crate::trace::{Manifest, SemanticFlag, TokenEntry, TokenRole, TraceBundle};

/// One raw-resize scale at factor 1.0 whose grid cells are single pixels,
/// with a single generated token whose state is zero.
pub(crate) fn bundle_from_states(
    unembedding: Array2<f32>,
    visual: Array2<f32>,
    rows: usize,
    cols: usize,
) -> TraceBundle {
    let (vocab, d) = unembedding.dim();
    let plan = ScalePlan {
        scale_factor: 1.0,
        policy: ResizePolicy::RawResize,
        grid_rows: rows,
        grid_cols: cols,
        canvas_width: cols as u32,
        canvas_height: rows as u32,
        valid_region: PixelRect::full(cols as u32, rows as u32),
    };
    let bundle = TraceBundle {
        manifest: Manifest {
            model_name: "test".into(),
            vocab_size: vocab,
            hidden_dim: d,
            layer: 1,
            image_width: cols as u32,
            image_height: rows as u32,
            scales: vec![plan],
            tokens: vec![TokenEntry {
                id: 0,
                text: "t0".into(),
                role: TokenRole::Generated,
                semantic: SemanticFlag::Other,
                mask_id: None,
            }],
        },
        unembedding,
        visual_states: vec![visual],
        text_states: Array2::zeros((1, d)),
    };
    bundle.validate().expect("valid test bundle");
    bundle
}
