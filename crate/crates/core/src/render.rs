//! Heatmap overlays.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::msea::{rescale_map, Interpolation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Colormap {
    #[default]
    Jet,
    Gray,
}

impl Colormap {
    /// Colour for `t` in `[0, 1]`.
    pub fn color(self, t: f64) -> [f64; 3] {
        let t = t.clamp(0.0, 1.0);
        match self {
            Colormap::Gray => [t * 255.0; 3],
            Colormap::Jet => {
                let ch = |c: f64| (1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0;
                [ch(3.0), ch(2.0), ch(1.0)]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub colormap: Colormap,
    /// Heatmap opacity in `[0, 1]`.
    pub alpha: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            colormap: Colormap::Jet,
            alpha: 0.5,
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.alpha) {
            Ok(())
        } else {
            Err(Error::invalid("render.alpha", format!("{} is outside [0, 1]", self.alpha)))
        }
    }
}

/// Min-max normalized heatmap blended over `image`. The map is resampled
/// to the image size if needed; a constant map renders as the colour of 0.
pub fn render_overlay(map: &AttributionMap, image: &RgbImage, options: &RenderOptions) -> Result<RgbImage> {
    options.validate()?;
    let (w, h) = image.dimensions();
    let resized;
    let map = if map.dim() == (h as usize, w as usize) {
        map
    } else {
        resized = rescale_map(map, w, h, Interpolation::Bilinear)?;
        &resized
    };
    let (lo, hi) = (map.min(), map.max());
    let range = hi - lo;
    let a = options.alpha;
    let mut out = image.clone();
    for (x, y, px) in out.enumerate_pixels_mut() {
        let v = map.get(y as usize, x as usize);
        let t = if range > 0.0 { (v - lo) / range } else { 0.0 };
        let c = options.colormap.color(t);
        let blend = |base: u8, over: f64| ((1.0 - a) * f64::from(base) + a * over).round() as u8;
        *px = Rgb([blend(px.0[0], c[0]), blend(px.0[1], c[1]), blend(px.0[2], c[2])]);
    }
    Ok(out)
}

/// Heatmap alone, without a background image.
pub fn render_heatmap(map: &AttributionMap, options: &RenderOptions) -> Result<RgbImage> {
    let (rows, cols) = map.dim();
    let black = RgbImage::new(cols as u32, rows as u32);
    render_overlay(map, &black, &RenderOptions { alpha: 1.0, ..*options })
}
