//! Multi-scale explanation aggregation.
//!
//! The same image is presented at several scale factors; each scale yields a
//! raw logit-lens map on its own token grid. Maps are cropped to the part of
//! the grid covering real image content, resampled to the original image
//! resolution and fused elementwise.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMap, Stage};
use crate::error::{Error, Result};
use crate::geometry::{MapGeometry, PixelRect, ResizePolicy, ScalePlan};
use crate::lens::token_attribution;
use crate::trace::TraceBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleConfig {
    pub scale_factors: Vec<f64>,
    pub fusion: FusionMode,
    pub interpolation: Interpolation,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            scale_factors: vec![0.5, 0.75, 1.0],
            fusion: FusionMode::Mean,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl ScaleConfig {
    pub fn single(factor: f64) -> Self {
        Self {
            scale_factors: vec![factor],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_factors.is_empty() {
            return Err(Error::invalid("scale_factors", "must not be empty"));
        }
        for &a in &self.scale_factors {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::invalid(
                    "scale_factors",
                    format!("factor {a} must be finite and > 0"),
                ));
            }
        }
        if self.scale_factors.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "scale_factors",
                "factors must be distinct and sorted ascending",
            ));
        }
        Ok(())
    }
}

/// Tokens per axis = `ceil(pixels / patch_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRule {
    pub patch_size: u32,
}

impl PatchRule {
    pub fn tokens(&self, pixels: u32) -> usize {
        pixels.div_ceil(self.patch_size) as usize
    }
}

fn scaled(pixels: u32, factor: f64) -> u32 {
    (f64::from(pixels) * factor).round() as u32
}

/// One plan per configured factor. `fixed` is the `(width, height)` canvas
/// required by pad-to-fixed models; the resized image is pasted top-left.
pub fn plan_scales(
    image_width: u32,
    image_height: u32,
    config: &ScaleConfig,
    policy: ResizePolicy,
    fixed: Option<(u32, u32)>,
    patching: PatchRule,
) -> Result<Vec<ScalePlan>> {
    config.validate()?;
    if patching.patch_size == 0 {
        return Err(Error::invalid("patch_size", "must be > 0"));
    }
    let mut plans = Vec::with_capacity(config.scale_factors.len());
    for &alpha in &config.scale_factors {
        let w = scaled(image_width, alpha);
        let h = scaled(image_height, alpha);
        if w == 0 || h == 0 {
            return Err(Error::invalid(
                "grid",
                format!("factor {alpha} yields a zero-sized {w}x{h} image"),
            ));
        }
        let (canvas_w, canvas_h) = match policy {
            ResizePolicy::RawResize => (w, h),
            ResizePolicy::PadToFixed => {
                let (cw, ch) = fixed.ok_or_else(|| {
                    Error::invalid("fixed_hw", "pad-to-fixed requires a canvas size")
                })?;
                if w > cw || h > ch {
                    return Err(Error::DoesNotFit {
                        scale: alpha,
                        width: w,
                        height: h,
                        canvas_w: cw,
                        canvas_h: ch,
                    });
                }
                (cw, ch)
            }
        };
        let plan = ScalePlan {
            scale_factor: alpha,
            policy,
            grid_rows: patching.tokens(canvas_h),
            grid_cols: patching.tokens(canvas_w),
            canvas_width: canvas_w,
            canvas_height: canvas_h,
            valid_region: PixelRect::new(0, 0, w, h),
        };
        plan.validate("plan")?;
        plans.push(plan);
    }
    Ok(plans)
}

/// Sampling positions along one axis: for every output pixel, the two
/// neighbouring source cells and the weight of the second one.
#[allow(clippy::too_many_arguments)]
fn axis_samples(
    out_len: u32,
    valid_start: u32,
    valid_len: u32,
    canvas_len: u32,
    cells: usize,
    cell_lo: usize,
    cell_hi: usize,
    interpolation: Interpolation,
) -> Vec<(usize, usize, f64)> {
    let scale = cells as f64 / f64::from(canvas_len);
    let last = cell_hi - 1;
    (0..out_len)
        .map(|p| {
            let canvas = f64::from(valid_start)
                + (f64::from(p) + 0.5) * f64::from(valid_len) / f64::from(out_len);
            match interpolation {
                Interpolation::Nearest => {
                    let c = ((canvas * scale).floor() as isize)
                        .clamp(cell_lo as isize, last as isize) as usize;
                    (c, c, 0.0)
                }
                Interpolation::Bilinear => {
                    let g = (canvas * scale - 0.5).clamp(cell_lo as f64, last as f64);
                    let c0 = g.floor() as usize;
                    let c1 = (c0 + 1).min(last);
                    (c0, c1, g - c0 as f64)
                }
            }
        })
        .collect()
}

/// Crops `map` to the cells that cover real image content and resamples it
/// to `target_w x target_h` pixels of the original image.
pub fn rescale_map(
    map: &AttributionMap,
    target_w: u32,
    target_h: u32,
    interpolation: Interpolation,
) -> Result<AttributionMap> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::invalid("target size", "must be > 0"));
    }
    let g = map.geometry();
    let (rows, cols) = map.dim();
    let target_geometry = MapGeometry::pixel(target_w, target_h);

    if g.is_full_canvas() && (cols, rows) == (target_w as usize, target_h as usize) {
        return AttributionMap::new(map.values().clone(), target_geometry, map.stage());
    }

    let cells = g.valid_cells(rows, cols);
    if g.valid_region.is_empty() || cells.rows() == 0 || cells.cols() == 0 {
        return Err(Error::invalid("valid_region", "empty valid region"));
    }
    let v = g.valid_region;
    let xs = axis_samples(
        target_w,
        v.x,
        v.width,
        g.canvas_width,
        cols,
        cells.col0,
        cells.col1,
        interpolation,
    );
    let ys = axis_samples(
        target_h,
        v.y,
        v.height,
        g.canvas_height,
        rows,
        cells.row0,
        cells.row1,
        interpolation,
    );
    let src = map.values();
    let out = Array2::from_shape_fn((target_h as usize, target_w as usize), |(y, x)| {
        let (r0, r1, ty) = ys[y];
        let (c0, c1, tx) = xs[x];
        let top = src[[r0, c0]] + (src[[r0, c1]] - src[[r0, c0]]) * tx;
        let bottom = src[[r1, c0]] + (src[[r1, c1]] - src[[r1, c0]]) * tx;
        top + (bottom - top) * ty
    });
    AttributionMap::new(out, target_geometry, map.stage())
}

/// Elementwise mean (accumulated in list order) or max of same-sized maps.
pub fn fuse_maps(maps: &[AttributionMap], mode: FusionMode) -> Result<AttributionMap> {
    let first = maps.first().ok_or(Error::Empty("no maps to fuse"))?;
    for (i, m) in maps.iter().enumerate().skip(1) {
        if !m.same_dims(first) {
            return Err(Error::dims(
                format!("maps[{i}]"),
                format!("{:?}", first.dim()),
                format!("{:?}", m.dim()),
            ));
        }
    }
    let mut acc = first.values().clone();
    for m in &maps[1..] {
        match mode {
            FusionMode::Mean => acc.zip_mut_with(m.values(), |a, &b| *a += b),
            FusionMode::Max => acc.zip_mut_with(m.values(), |a, &b| *a = a.max(b)),
        }
    }
    if mode == FusionMode::Mean && maps.len() > 1 {
        let n = maps.len() as f64;
        acc.mapv_inplace(|v| v / n);
    }
    AttributionMap::new(acc, *first.geometry(), Stage::Fused)
}

/// Per-scale rescaled maps for vocabulary index `k`, in configured order.
pub fn scale_maps(bundle: &TraceBundle, k: usize, config: &ScaleConfig) -> Result<Vec<AttributionMap>> {
    config.validate()?;
    let (w, h) = bundle.image_dims();
    config
        .scale_factors
        .iter()
        .map(|&alpha| {
            let s = bundle.scale_index(alpha).ok_or_else(|| {
                Error::invalid(
                    "scale_factors",
                    format!("bundle has no visual states at factor {alpha}"),
                )
            })?;
            let raw = token_attribution(bundle, s, k)?;
            rescale_map(&raw, w, h, config.interpolation)
        })
        .collect()
}

/// Fused pixel-space explanation for vocabulary index `k`.
pub fn msea_attribution(bundle: &TraceBundle, k: usize, config: &ScaleConfig) -> Result<AttributionMap> {
    let maps = scale_maps(bundle, k, config)?;
    fuse_maps(&maps, config.fusion)
}
