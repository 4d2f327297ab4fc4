//! Grounding metrics: Obj-IoU on object words, Func-IoU on function words
//! and their harmonic mean.
//!
//! Scores are kept in `[0, 1]` internally and reported as percentages.

use serde::{Deserialize, Serialize};

use crate::arc::Explainer;
use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::mask::{BinaryMask, MaskSet};
use crate::trace::{SemanticFlag, TokenEntry, TraceBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinarizeMode {
    /// Keep pixels at or above `lambda * max` after shifting the minimum to 0.
    #[default]
    FractionOfMax,
    /// Keep pixels at or above `lambda` on the min-max normalized map.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinarizePolicy {
    pub mode: BinarizeMode,
    pub lambda: f64,
}

impl Default for BinarizePolicy {
    fn default() -> Self {
        Self {
            mode: BinarizeMode::FractionOfMax,
            lambda: 0.5,
        }
    }
}

impl BinarizePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.lambda > 0.0 && self.lambda < 1.0 {
            Ok(())
        } else {
            Err(Error::invalid("binarize.lambda", format!("{} is outside (0, 1)", self.lambda)))
        }
    }
}

/// How Obj-IoU is aggregated over object tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjIouMode {
    /// Mean of per-token IoU.
    #[default]
    PerToken,
    /// Total intersection over total union across all object tokens.
    Global,
}

/// Threshold a pixel-space map. An all-zero map yields an empty mask; any
/// other constant map keeps every pixel.
pub fn binarize(map: &AttributionMap, policy: &BinarizePolicy) -> BinaryMask {
    let (rows, cols) = map.dim();
    let (w, h) = (cols as u32, rows as u32);
    let (lo, hi) = (map.min(), map.max());
    if lo == 0.0 && hi == 0.0 {
        return BinaryMask::empty(w, h);
    }
    let range = hi - lo;
    if range == 0.0 {
        return BinaryMask::from_fn(w, h, |_, _| true);
    }
    let values = map.values();
    let bits = values
        .iter()
        .map(|&v| match policy.mode {
            BinarizeMode::FractionOfMax => v - lo >= policy.lambda * range,
            BinarizeMode::Fixed => (v - lo) / range >= policy.lambda,
        })
        .collect();
    BinaryMask::from_bits(w, h, bits).expect("one bit per cell")
}

fn same_dims(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dims(
            "mask",
            format!("{}x{}", b.width(), b.height()),
            format!("{}x{}", a.width(), a.height()),
        ));
    }
    Ok(())
}

/// `(|pred ∩ gt|, |pred ∪ gt|)`
pub fn overlap_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize)> {
    same_dims(pred, gt)?;
    let mut inter = 0;
    let mut union = 0;
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok((inter, union))
}

fn ratio_or_one(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union; two empty masks agree perfectly.
pub fn obj_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, union) = overlap_counts(pred, gt)?;
    Ok(ratio_or_one(inter, union))
}

/// Fraction of the image left inactive by one function token's map.
pub fn func_score(map: &AttributionMap, policy: &BinarizePolicy) -> f64 {
    let mask = binarize(map, policy);
    1.0 - mask.count() as f64 / mask.area() as f64
}

/// Mean inactive fraction over function-token maps. The flag is set when
/// the list is empty and the score defaults to 1.
pub fn func_iou(maps: &[AttributionMap], policy: &BinarizePolicy) -> (f64, bool) {
    if maps.is_empty() {
        return (1.0, true);
    }
    let total: f64 = maps.iter().map(|m| func_score(m, policy)).sum();
    (total / maps.len() as f64, false)
}

/// Harmonic mean, zero when both inputs are zero.
pub fn f1_iou(obj: f64, func: f64) -> f64 {
    if obj + func == 0.0 {
        0.0
    } else {
        2.0 * obj * func / (obj + func)
    }
}

const FALLBACK_FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "to", "and", "or", "with", "is", "are", "that", "this",
];

/// Punctuation or a common stop word; used only for traces without flags.
pub fn is_function_text(text: &str) -> bool {
    let t = text.trim().to_lowercase();
    if t.is_empty() {
        return true;
    }
    t.chars().all(|c| c.is_ascii_punctuation()) || FALLBACK_FUNCTION_WORDS.contains(&t.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Object,
    Function,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    /// Bundle label (directory name or caller-supplied).
    pub trace: String,
    pub position: usize,
    pub token: String,
    pub kind: TokenKind,
    /// In `[0, 1]`: IoU for object tokens, inactive fraction for function tokens.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersection: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub union: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub obj_iou: f64,
    pub func_iou: f64,
    pub f1_iou: f64,
    pub object_tokens: usize,
    pub function_tokens: usize,
    pub obj_iou_mode: ObjIouMode,
    pub records: Vec<TokenRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
}

impl EvalReport {
    /// Aggregates records from any number of bundles, in the given order.
    pub fn from_records(records: Vec<TokenRecord>, mode: ObjIouMode) -> Self {
        let mut warnings = Vec::new();
        let objects: Vec<&TokenRecord> = records.iter().filter(|r| r.kind == TokenKind::Object).collect();
        let functions: Vec<&TokenRecord> = records.iter().filter(|r| r.kind == TokenKind::Function).collect();
        let obj = if objects.is_empty() {
            warnings.push("no object tokens evaluated; Obj-IoU defaults to 100".to_string());
            1.0
        } else {
            match mode {
                ObjIouMode::PerToken => objects.iter().map(|r| r.score).sum::<f64>() / objects.len() as f64,
                ObjIouMode::Global => {
                    let inter: usize = objects.iter().filter_map(|r| r.intersection).sum();
                    let union: usize = objects.iter().filter_map(|r| r.union).sum();
                    ratio_or_one(inter, union)
                }
            }
        };
        let func = if functions.is_empty() {
            warnings.push("no function tokens evaluated; Func-IoU defaults to 100".to_string());
            1.0
        } else {
            functions.iter().map(|r| r.score).sum::<f64>() / functions.len() as f64
        };
        let (obj, func) = (100.0 * obj, 100.0 * func);
        Self {
            obj_iou: obj,
            func_iou: func,
            f1_iou: f1_iou(obj, func),
            object_tokens: objects.len(),
            function_tokens: functions.len(),
            obj_iou_mode: mode,
            records,
            warnings,
            generated_at_unix: None,
        }
    }

    /// Two-decimal console table.
    pub fn table(&self) -> String {
        format!(
            "{:>10} {:>10} {:>10}\n{:>10.2} {:>10.2} {:>10.2}\n",
            "Obj-IoU", "Func-IoU", "F1-IoU", self.obj_iou, self.func_iou, self.f1_iou
        )
    }
}

/// Which tokens count as function words: the trace's flags, or the text
/// heuristic when the trace carries no flags at all.
pub fn classify(tokens: &[TokenEntry]) -> Vec<Option<TokenKind>> {
    let flagged = tokens.iter().any(|t| t.semantic != SemanticFlag::Other);
    tokens
        .iter()
        .map(|t| match t.semantic {
            SemanticFlag::ObjectWord => Some(TokenKind::Object),
            SemanticFlag::FunctionWord => Some(TokenKind::Function),
            SemanticFlag::Other if !flagged && is_function_text(&t.text) => Some(TokenKind::Function),
            SemanticFlag::Other => None,
        })
        .collect()
}

/// Scores every generated object and function token of one bundle.
/// `refine` selects the suppressed map over the fused one.
pub fn evaluate_tokens(
    explainer: &Explainer<'_>,
    masks: &MaskSet,
    policy: &BinarizePolicy,
    refine: bool,
    label: &str,
) -> Result<Vec<TokenRecord>> {
    policy.validate()?;
    let bundle: &TraceBundle = explainer.bundle();
    let tokens = bundle.tokens();
    let positions: Vec<usize> = bundle.generated_positions().collect();
    if positions.is_empty() {
        return Err(Error::Empty("bundle has no generated tokens"));
    }
    let kinds = classify(tokens);
    let mut records = Vec::new();
    for j in positions {
        let Some(kind) = kinds[j] else { continue };
        let tok = &tokens[j];
        let mask = match kind {
            TokenKind::Object => {
                let id = tok.mask_id.ok_or_else(|| Error::MissingMask {
                    position: j,
                    token: tok.text.clone(),
                    mask_id: None,
                })?;
                Some((
                    id,
                    masks.get(id).ok_or_else(|| Error::MissingMask {
                        position: j,
                        token: tok.text.clone(),
                        mask_id: Some(id),
                    })?,
                ))
            }
            TokenKind::Function => None,
        };
        let map = if refine {
            explainer.explain(j)?.refined
        } else {
            explainer.fused(j)?.clone()
        };
        let record = match mask {
            Some((id, gt)) => {
                let pred = binarize(&map, policy);
                let (inter, union) = overlap_counts(&pred, gt)?;
                TokenRecord {
                    trace: label.to_string(),
                    position: j,
                    token: tok.text.clone(),
                    kind,
                    score: ratio_or_one(inter, union),
                    mask_id: Some(id),
                    intersection: Some(inter),
                    union: Some(union),
                }
            }
            None => TokenRecord {
                trace: label.to_string(),
                position: j,
                token: tok.text.clone(),
                kind,
                score: func_score(&map, policy),
                mask_id: None,
                intersection: None,
                union: None,
            },
        };
        records.push(record);
    }
    Ok(records)
}
