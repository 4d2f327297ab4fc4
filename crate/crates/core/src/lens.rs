//! Logit-lens projection of hidden states onto the vocabulary.
//!
//! Scores are raw logits. Softmax is monotone, so rankings computed here are
//! identical to rankings of the next-token distribution.

use ndarray::{Array2, ArrayView2};

use crate::attribution::{AttributionMap, Stage};
use crate::error::{Error, Result};
use crate::trace::TraceBundle;

/// Ordered top-k vocabulary indices, best first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ranking(Vec<u32>);

impl Ranking {
    /// Validates distinctness and the vocabulary bound.
    pub fn new(indices: Vec<u32>, vocab_size: usize) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(indices.len());
        for &i in &indices {
            if i as usize >= vocab_size {
                return Err(Error::IndexOutOfRange {
                    what: "vocabulary",
                    index: i as usize,
                    len: vocab_size,
                });
            }
            if !seen.insert(i) {
                return Err(Error::invalid("ranking", format!("duplicate index {i}")));
            }
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn top(&self) -> Option<u32> {
        self.0.first().copied()
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// `unembedding · state`, accumulated in f64.
pub fn project_logits(state: &[f32], unembedding: ArrayView2<'_, f32>) -> Result<Vec<f64>> {
    if state.len() != unembedding.ncols() {
        return Err(Error::dims(
            "state",
            unembedding.ncols(),
            state.len(),
        ));
    }
    Ok(unembedding
        .rows()
        .into_iter()
        .map(|row| match row.as_slice() {
            Some(r) => dot(r, state),
            None => row.iter().zip(state).map(|(&w, &s)| f64::from(w) * f64::from(s)).sum(),
        })
        .collect())
}

/// Indices of the `k` largest logits, descending, ties to the lower index.
pub fn topk_ranking(logits: &[f64], k: usize) -> Result<Ranking> {
    if k > logits.len() {
        return Err(Error::invalid(
            "k",
            format!("{k} exceeds vocabulary size {}", logits.len()),
        ));
    }
    let mut idx: Vec<u32> = (0..logits.len() as u32).collect();
    let cmp = |a: &u32, b: &u32| {
        logits[*b as usize]
            .total_cmp(&logits[*a as usize])
            .then(a.cmp(b))
    };
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx.truncate(k);
    Ok(Ranking(idx))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Raw logit-lens map for vocabulary index `k` at one stored scale: cell `i`
/// holds `[W_U z_i]_k`, laid out row-major on the scale's token grid.
pub fn token_attribution(bundle: &TraceBundle, scale_index: usize, k: usize) -> Result<AttributionMap> {
    let plans = &bundle.manifest.scales;
    let plan = plans.get(scale_index).ok_or(Error::IndexOutOfRange {
        what: "scale",
        index: scale_index,
        len: plans.len(),
    })?;
    if k >= bundle.vocab_size() {
        return Err(Error::IndexOutOfRange {
            what: "vocabulary",
            index: k,
            len: bundle.vocab_size(),
        });
    }
    let row = bundle.unembedding.row(k);
    let row = row.as_slice().expect("standard layout");
    let states = &bundle.visual_states[scale_index];
    let values: Vec<f64> = states
        .rows()
        .into_iter()
        .map(|z| dot(row, z.as_slice().expect("standard layout")))
        .collect();
    let values = Array2::from_shape_vec((plan.grid_rows, plan.grid_cols), values)
        .expect("validated N_s = rows x cols");
    let (w, h) = bundle.image_dims();
    AttributionMap::new(values, plan.geometry(w, h), Stage::Raw)
}

/// Top-k ranking of the logits predicted at text position `j`.
pub fn position_ranking(bundle: &TraceBundle, j: usize, k: usize) -> Result<Ranking> {
    let n = bundle.text_states.nrows();
    if j >= n {
        return Err(Error::IndexOutOfRange {
            what: "text position",
            index: j,
            len: n,
        });
    }
    let state = bundle.text_states.row(j);
    let logits = project_logits(state.as_slice().expect("standard layout"), bundle.unembedding.view())?;
    topk_ranking(&logits, k)
}
