//! Pixel and token-grid geometry shared by traces and attribution maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle, `x`/`y` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn right(&self) -> u64 {
        u64::from(self.x) + u64::from(self.width)
    }

    pub fn bottom(&self) -> u64 {
        u64::from(self.y) + u64::from(self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn contains_rect(&self, other: &PixelRect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }
}

/// How a rescaled image is presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResizePolicy {
    /// The model accepts the resized image as-is; the canvas is the resized image.
    RawResize,
    /// The resized image is pasted top-left onto a blank fixed-size canvas.
    PadToFixed,
}

/// Half-open range of token-grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRange {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl CellRange {
    pub fn rows(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn cols(&self) -> usize {
        self.col1 - self.col0
    }
}

/// One rescaled input: factor, presentation policy, token grid and the
/// part of the canvas covered by real image content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePlan {
    pub scale_factor: f64,
    pub policy: ResizePolicy,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub valid_region: PixelRect,
}

impl ScalePlan {
    pub fn num_tokens(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn canvas(&self) -> PixelRect {
        PixelRect::full(self.canvas_width, self.canvas_height)
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.scale_factor.is_finite() && self.scale_factor > 0.0) {
            return Err(Error::invalid(
                format!("{field}.scale_factor"),
                format!("must be finite and > 0, got {}", self.scale_factor),
            ));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::invalid(
                format!("{field}.grid"),
                format!("zero-sized grid {}x{}", self.grid_rows, self.grid_cols),
            ));
        }
        if self.canvas_width == 0 || self.canvas_height == 0 {
            return Err(Error::invalid(
                format!("{field}.canvas"),
                "zero-sized canvas",
            ));
        }
        if self.valid_region.is_empty() {
            return Err(Error::invalid(
                format!("{field}.valid_region"),
                "empty valid region",
            ));
        }
        if !self.canvas().contains_rect(&self.valid_region) {
            return Err(Error::invalid(
                format!("{field}.valid_region"),
                format!(
                    "{:?} exceeds the {}x{} canvas",
                    self.valid_region, self.canvas_width, self.canvas_height
                ),
            ));
        }
        if self.policy == ResizePolicy::RawResize && self.valid_region != self.canvas() {
            return Err(Error::invalid(
                format!("{field}.valid_region"),
                "raw-resize plans must cover the full canvas",
            ));
        }
        Ok(())
    }

    pub fn geometry(&self, image_width: u32, image_height: u32) -> MapGeometry {
        MapGeometry {
            image_width,
            image_height,
            canvas_width: self.canvas_width,
            canvas_height: self.canvas_height,
            valid_region: self.valid_region,
        }
    }
}

/// Placement of a grid-valued map relative to the original image.
///
/// Grid cells tile the canvas uniformly; the part of the canvas inside
/// `valid_region` corresponds to the whole original image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapGeometry {
    pub image_width: u32,
    pub image_height: u32,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub valid_region: PixelRect,
}

impl MapGeometry {
    /// Geometry of a map living directly in original-image pixel space.
    pub fn pixel(width: u32, height: u32) -> Self {
        Self {
            image_width: width,
            image_height: height,
            canvas_width: width,
            canvas_height: height,
            valid_region: PixelRect::full(width, height),
        }
    }

    pub fn is_full_canvas(&self) -> bool {
        self.valid_region == PixelRect::full(self.canvas_width, self.canvas_height)
    }

    /// Cells of a `rows x cols` grid that intersect the valid region.
    pub fn valid_cells(&self, rows: usize, cols: usize) -> CellRange {
        let v = &self.valid_region;
        let span = |start: u64, end: u64, n: usize, extent: u32| {
            let n = n as u64;
            let extent = u64::from(extent);
            let lo = start * n / extent;
            let hi = (end * n).div_ceil(extent).min(n);
            (lo as usize, hi as usize)
        };
        let (col0, col1) = span(u64::from(v.x), v.right(), cols, self.canvas_width);
        let (row0, row1) = span(u64::from(v.y), v.bottom(), rows, self.canvas_height);
        CellRange {
            row0,
            row1,
            col0,
            col1,
        }
    }

    /// Rectangle in original-image pixels covered by cell `(row, col)` of a
    /// `rows x cols` grid, clipped to the valid region. `None` if the cell
    /// lies entirely in padding.
    pub fn cell_rect_in_image(
        &self,
        rows: usize,
        cols: usize,
        row: usize,
        col: usize,
    ) -> Option<[f64; 4]> {
        let cw = f64::from(self.canvas_width) / cols as f64;
        let ch = f64::from(self.canvas_height) / rows as f64;
        let v = &self.valid_region;
        let x0 = (col as f64 * cw).max(f64::from(v.x));
        let x1 = ((col + 1) as f64 * cw).min(v.right() as f64);
        let y0 = (row as f64 * ch).max(f64::from(v.y));
        let y1 = ((row + 1) as f64 * ch).min(v.bottom() as f64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        let sx = f64::from(self.image_width) / f64::from(v.width);
        let sy = f64::from(self.image_height) / f64::from(v.height);
        Some([
            (x0 - f64::from(v.x)) * sx,
            (y0 - f64::from(v.y)) * sy,
            (x1 - f64::from(v.x)) * sx,
            (y1 - f64::from(v.y)) * sy,
        ])
    }
}
