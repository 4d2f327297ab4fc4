//! Attribution maps and their on-disk blob form.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MapGeometry;
use crate::trace::{decode_f32, encode_f32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Per-scale logit-lens scores on the token grid.
    Raw,
    /// Rescaled to image pixels and fused across scales.
    Fused,
    /// After interference suppression and filtering; elementwise >= 0.
    Refined,
}

/// A grid of relevance scores placed over the original image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    values: Array2<f64>,
    geometry: MapGeometry,
    stage: Stage,
}

impl AttributionMap {
    pub fn new(values: Array2<f64>, geometry: MapGeometry, stage: Stage) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("attribution map has no cells"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "attribution map".into(),
                index,
            });
        }
        if stage == Stage::Refined {
            if let Some(index) = values.iter().position(|&v| v < 0.0) {
                return Err(Error::invalid(
                    "refined map",
                    format!("negative value at flat index {index}"),
                ));
            }
        }
        Ok(Self {
            values,
            geometry,
            stage,
        })
    }

    /// A map already in original-image pixel space (`rows = height`).
    pub fn pixel(values: Array2<f64>, stage: Stage) -> Result<Self> {
        let (rows, cols) = values.dim();
        let geometry = MapGeometry::pixel(cols as u32, rows as u32);
        Self::new(values, geometry, stage)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn geometry(&self) -> &MapGeometry {
        &self.geometry
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// `(rows, cols)`
    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `(row, col)` of the largest value; first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let cols = self.values.ncols();
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in self.values.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        (best / cols, best % cols)
    }

    pub fn dot(&self, other: &AttributionMap) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn same_dims(&self, other: &AttributionMap) -> bool {
        self.values.dim() == other.values.dim()
    }

    /// Values rounded to float32, row-major, as stored in map blobs.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// Sidecar describing a map blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapHeader {
    pub rows: usize,
    pub cols: usize,
    pub stage: Stage,
    pub geometry: MapGeometry,
}

pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

/// Writes `values` as a raw float32 blob plus a `.json` header next to it.
pub fn save_map(map: &AttributionMap, blob: impl AsRef<Path>) -> Result<()> {
    let blob = blob.as_ref();
    let bytes = encode_f32(map.to_f32().iter());
    fs::write(blob, bytes).map_err(|e| Error::io(blob, e))?;
    let (rows, cols) = map.dim();
    let header = MapHeader {
        rows,
        cols,
        stage: map.stage(),
        geometry: *map.geometry(),
    };
    let path = sidecar_path(blob);
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a map blob. Without a sidecar, `fallback_dims` (`cols, rows`) is
/// required and the map is treated as a pixel-space fused map.
pub fn load_map(blob: impl AsRef<Path>, fallback_dims: Option<(u32, u32)>) -> Result<AttributionMap> {
    let blob = blob.as_ref();
    if !blob.is_file() {
        return Err(Error::MissingFile {
            field: "map".into(),
            path: blob.to_path_buf(),
        });
    }
    let bytes = fs::read(blob).map_err(|e| Error::io(blob, e))?;
    let sidecar = sidecar_path(blob);
    let header = if sidecar.is_file() {
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        serde_json::from_str::<MapHeader>(&text).map_err(|source| Error::Json {
            path: sidecar.clone(),
            source,
        })?
    } else {
        let (w, h) = fallback_dims.ok_or_else(|| {
            Error::invalid("map", "no sidecar header and no dimensions given")
        })?;
        MapHeader {
            rows: h as usize,
            cols: w as usize,
            stage: Stage::Fused,
            geometry: MapGeometry::pixel(w, h),
        }
    };
    let expected = header.rows * header.cols * 4;
    if bytes.len() != expected {
        return Err(Error::dims(
            "map",
            format!("{expected} bytes"),
            format!("{} bytes", bytes.len()),
        ));
    }
    let values: Vec<f64> = decode_f32(&bytes).into_iter().map(f64::from).collect();
    let values = Array2::from_shape_vec((header.rows, header.cols), values).expect("checked");
    AttributionMap::new(values, header.geometry, header.stage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn refined_maps_reject_negatives() {
        let r = AttributionMap::pixel(array![[0.0, -1.0]], Stage::Refined);
        assert!(r.is_err());
        assert!(AttributionMap::pixel(array![[0.0, -1.0]], Stage::Fused).is_ok());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(AttributionMap::pixel(array![[f64::NAN]], Stage::Raw).is_err());
    }

    #[test]
    fn blob_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = AttributionMap::pixel(array![[0.25, 1.5], [3.0, 0.0]], Stage::Refined).unwrap();
        let path = dir.path().join("m.f32");
        save_map(&m, &path).unwrap();
        assert_eq!(load_map(&path, None).unwrap(), m);
    }
}
