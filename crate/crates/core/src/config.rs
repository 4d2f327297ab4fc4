//! Engine configuration file: one JSON document, every field optional.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arc::ArcConfig;
use crate::error::{Error, Result};
use crate::metrics::{BinarizePolicy, ObjIouMode};
use crate::msea::ScaleConfig;
use crate::render::RenderOptions;
use crate::trace::TraceBundle;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masks: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub scales: ScaleConfig,
    pub arc: ArcConfig,
    pub binarize: BinarizePolicy,
    pub obj_iou_mode: ObjIouMode,
    /// Apply interference suppression; when off the fused map is used.
    pub use_arc: bool,
    /// Fuse across scales; when off only the stored scale nearest 1.0 is used.
    pub use_msea: bool,
    pub render: RenderOptions,
    pub paths: IoPaths,
    /// Worker threads; `None` means one per logical core.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            scales: ScaleConfig::default(),
            arc: ArcConfig::default(),
            binarize: BinarizePolicy::default(),
            obj_iou_mode: ObjIouMode::PerToken,
            use_arc: true,
            use_msea: true,
            render: RenderOptions::default(),
            paths: IoPaths::default(),
            jobs: None,
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingFile {
                field: "config".into(),
                path: path.to_path_buf(),
            });
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = Self::from_json(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scales.validate()?;
        self.arc.validate()?;
        self.binarize.validate()?;
        self.render.validate()?;
        if self.jobs == Some(0) {
            return Err(Error::invalid("jobs", "must be >= 1"));
        }
        Ok(())
    }

    /// Scale configuration to use for `bundle`, honouring `use_msea`.
    pub fn scales_for(&self, bundle: &TraceBundle) -> ScaleConfig {
        if self.use_msea {
            self.scales.clone()
        } else {
            let s = bundle.nearest_scale_index(1.0);
            ScaleConfig {
                scale_factors: vec![bundle.manifest.scales[s].scale_factor],
                ..self.scales.clone()
            }
        }
    }
}
