//! Trace bundles: the on-disk record of one model run.
//!
//! A bundle is a directory holding `manifest.json` plus one headerless blob
//! per tensor (`<name>.f32`, little-endian float32, row-major). See
//! `docs/trace-format.md` for the schema and a worked example.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::ScalePlan;
use crate::mask::MaskSet;

pub const FORMAT_VERSION: &str = "1.0";
pub const SUPPORTED_MAJOR: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenRole {
    Prompt,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticFlag {
    ObjectWord,
    FunctionWord,
    Other,
}

/// One text position of the run.
///
/// `text_states[j]` is the final hidden state whose projection predicted
/// this token, i.e. the state at the input position immediately before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub id: u32,
    pub text: String,
    pub role: TokenRole,
    pub semantic: SemanticFlag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_name: String,
    pub vocab_size: usize,
    pub hidden_dim: usize,
    /// Layer whose states are stored (the last layer unless stated otherwise).
    pub layer: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub scales: Vec<ScalePlan>,
    pub tokens: Vec<TokenEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    format_version: String,
    #[serde(flatten)]
    manifest: Manifest,
    tensors: Vec<TensorEntry>,
}

/// A fully validated, immutable trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    pub manifest: Manifest,
    /// `|V| x d`
    pub unembedding: Array2<f32>,
    /// One `N_s x d` matrix per entry of `manifest.scales`.
    pub visual_states: Vec<Array2<f32>>,
    /// `T x d`, one row per token table entry.
    pub text_states: Array2<f32>,
}

fn visual_name(s: usize) -> String {
    format!("visual_states.{s}")
}

fn blob_file(name: &str) -> String {
    format!("{}.f32", name.replace('.', "_"))
}

impl TraceBundle {
    pub fn vocab_size(&self) -> usize {
        self.manifest.vocab_size
    }

    pub fn hidden_dim(&self) -> usize {
        self.manifest.hidden_dim
    }

    pub fn image_dims(&self) -> (u32, u32) {
        (self.manifest.image_width, self.manifest.image_height)
    }

    pub fn tokens(&self) -> &[TokenEntry] {
        &self.manifest.tokens
    }

    pub fn generated_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.manifest
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == TokenRole::Generated)
            .map(|(j, _)| j)
    }

    /// Index of the stored scale whose factor equals `factor` (to 1e-9).
    pub fn scale_index(&self, factor: f64) -> Option<usize> {
        self.manifest
            .scales
            .iter()
            .position(|p| (p.scale_factor - factor).abs() <= 1e-9)
    }

    /// Index of the stored scale closest to `factor`; lower index on ties.
    pub fn nearest_scale_index(&self, factor: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.manifest.scales.iter().enumerate() {
            let d = (p.scale_factor - factor).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Checks every bundle invariant.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.vocab_size == 0 {
            return Err(Error::invalid("vocab_size", "must be > 0"));
        }
        if m.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim", "must be > 0"));
        }
        if m.image_width == 0 || m.image_height == 0 {
            return Err(Error::invalid("image_width/image_height", "must be > 0"));
        }
        if m.scales.is_empty() {
            return Err(Error::invalid("scales", "at least one scale plan required"));
        }
        for (s, plan) in m.scales.iter().enumerate() {
            plan.validate(&format!("scales[{s}]"))?;
        }
        for (j, tok) in m.tokens.iter().enumerate() {
            if tok.id as usize >= m.vocab_size {
                return Err(Error::invalid(
                    format!("tokens[{j}].id"),
                    format!("{} >= vocab_size {}", tok.id, m.vocab_size),
                ));
            }
        }

        check_shape("unembedding", &self.unembedding, m.vocab_size, m.hidden_dim)?;
        check_shape("text_states", &self.text_states, m.tokens.len(), m.hidden_dim)?;
        if self.visual_states.len() != m.scales.len() {
            return Err(Error::dims(
                "visual_states",
                format!("{} scales", m.scales.len()),
                format!("{} matrices", self.visual_states.len()),
            ));
        }
        for (s, (plan, states)) in m.scales.iter().zip(&self.visual_states).enumerate() {
            check_shape(&visual_name(s), states, plan.num_tokens(), m.hidden_dim)?;
        }

        check_finite("unembedding", &self.unembedding)?;
        check_finite("text_states", &self.text_states)?;
        for (s, states) in self.visual_states.iter().enumerate() {
            check_finite(&visual_name(s), states)?;
        }
        Ok(())
    }

    /// Checks that every mask id referenced by the token table exists.
    pub fn validate_masks(&self, masks: &MaskSet) -> Result<()> {
        for (j, tok) in self.manifest.tokens.iter().enumerate() {
            if let Some(id) = tok.mask_id {
                if !masks.contains(id) {
                    return Err(Error::MissingMask {
                        position: j,
                        token: tok.text.clone(),
                        mask_id: Some(id),
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_shape(field: &str, m: &Array2<f32>, rows: usize, cols: usize) -> Result<()> {
    if m.dim() != (rows, cols) {
        return Err(Error::dims(
            field,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn check_finite(field: &str, m: &Array2<f32>) -> Result<()> {
    if let Some(index) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            field: field.to_string(),
            index,
        });
    }
    Ok(())
}

fn check_version(found: &str) -> Result<()> {
    let major = found.split('.').next().and_then(|m| m.parse::<u32>().ok());
    match major {
        Some(SUPPORTED_MAJOR) => Ok(()),
        _ => Err(Error::UnsupportedVersion {
            found: found.to_string(),
            supported: SUPPORTED_MAJOR,
        }),
    }
}

fn read_json_value(path: &Path, field: &str) -> Result<serde_json::Value> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            field: field.to_string(),
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn read_blob(dir: &Path, entry: &TensorEntry) -> Result<Array2<f32>> {
    let path = dir.join(&entry.file);
    if !path.is_file() {
        return Err(Error::MissingFile {
            field: entry.name.clone(),
            path,
        });
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = entry.rows * entry.cols * 4;
    if bytes.len() != expected {
        return Err(Error::dims(
            entry.name.clone(),
            format!("{expected} bytes ({}x{}x4)", entry.rows, entry.cols),
            format!("{} bytes", bytes.len()),
        ));
    }
    let data = decode_f32(&bytes);
    Ok(Array2::from_shape_vec((entry.rows, entry.cols), data).expect("length checked above"))
}

pub(crate) fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub(crate) fn encode_f32<'a>(values: impl IntoIterator<Item = &'a f32>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Loads and fully validates a bundle directory.
pub fn load_trace(dir: impl AsRef<Path>) -> Result<TraceBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let value = read_json_value(&manifest_path, "manifest")?;

    let version = value
        .get("format_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::invalid("format_version", "missing or not a string"))?;
    check_version(version)?;

    let file: ManifestFile = serde_json::from_value(value).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    let manifest = file.manifest;

    let find = |name: &str| -> Result<&TensorEntry> {
        file.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::MissingFile {
                field: format!("tensors.{name}"),
                path: dir.join(blob_file(name)),
            })
    };
    // Shape declarations are checked against the manifest before any blob is read.
    let expect = |entry: &TensorEntry, rows: usize, cols: usize| -> Result<()> {
        if (entry.rows, entry.cols) != (rows, cols) {
            return Err(Error::dims(
                entry.name.clone(),
                format!("{rows}x{cols}"),
                format!("{}x{}", entry.rows, entry.cols),
            ));
        }
        Ok(())
    };

    // Scale plans are validated first so that zero grids are reported as such.
    for (s, plan) in manifest.scales.iter().enumerate() {
        plan.validate(&format!("scales[{s}]"))?;
    }

    let unembedding_entry = find("unembedding")?;
    expect(unembedding_entry, manifest.vocab_size, manifest.hidden_dim)?;
    let text_entry = find("text_states")?;
    expect(text_entry, manifest.tokens.len(), manifest.hidden_dim)?;

    let unembedding = read_blob(dir, unembedding_entry)?;
    let text_states = read_blob(dir, text_entry)?;
    let mut visual_states = Vec::with_capacity(manifest.scales.len());
    for (s, plan) in manifest.scales.iter().enumerate() {
        let entry = find(&visual_name(s))?;
        expect(entry, plan.num_tokens(), manifest.hidden_dim)?;
        visual_states.push(read_blob(dir, entry)?);
    }

    let bundle = TraceBundle {
        manifest,
        unembedding,
        visual_states,
        text_states,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes a bundle directory. The bundle is validated before anything is written.
pub fn save_trace(bundle: &TraceBundle, dir: impl AsRef<Path>) -> Result<()> {
    bundle.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut tensors = Vec::new();
    let mut write = |name: String, m: &Array2<f32>| -> Result<()> {
        let file = blob_file(&name);
        let path = dir.join(&file);
        let bytes = encode_f32(m.iter());
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        tensors.push(TensorEntry {
            name,
            file,
            rows: m.nrows(),
            cols: m.ncols(),
        });
        Ok(())
    };
    write("unembedding".into(), &bundle.unembedding)?;
    write("text_states".into(), &bundle.text_states)?;
    for (s, states) in bundle.visual_states.iter().enumerate() {
        write(visual_name(s), states)?;
    }

    let file = ManifestFile {
        format_version: FORMAT_VERSION.to_string(),
        manifest: bundle.manifest.clone(),
        tensors,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&file).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// SHA-256 over every file below `dir`, in sorted relative-path order.
///
/// Each file contributes its relative path, a NUL byte, its length as a
/// little-endian u64 and its contents.
pub fn directory_digest(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    let mut hasher = Sha256::new();
    for path in files {
        let rel = path.strip_prefix(dir).expect("walkdir yields children");
        let rel = rel.to_string_lossy().replace('\\', "/");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(rel.as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}
