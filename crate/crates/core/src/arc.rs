//! Ranking-correlation interference suppression.
//!
//! Every preceding token is scored by how closely its top-k next-token
//! ranking agrees with the target's. Attributions of poorly correlated
//! tokens are pooled into an interference estimate, which is scaled by a
//! least-squares factor, subtracted from the target map and clipped; a rank
//! based Gaussian filter removes the remaining speckle.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMap, Stage};
use crate::error::{Error, Result};
use crate::lens::{position_ranking, token_attribution, Ranking};
use crate::msea::{msea_attribution, rescale_map, ScaleConfig};
use crate::trace::{TokenRole, TraceBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextScope {
    GeneratedOnly,
    #[default]
    PromptAndGenerated,
}

/// How context-token maps are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMaps {
    /// Fused across all configured scales, like the target map.
    #[default]
    Msea,
    /// Only the stored scale nearest 1.0, resampled to image pixels.
    Raw,
}

/// Post-processing applied after subtraction and clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    /// Gaussian weights over the sorted values of each window.
    #[default]
    SortedWindow,
    /// Global normalized-rank transform followed by a spatial Gaussian blur.
    RankTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArcConfig {
    pub k: usize,
    pub rbo_p: f64,
    pub filter_radius: usize,
    pub filter_sigma: f64,
    pub filter: FilterKind,
    pub include_base_attribution: bool,
    pub context_scope: ContextScope,
    pub context_maps: ContextMaps,
    /// Vocabulary ids considered for the base map in addition to the
    /// generated ids.
    pub base_candidates: Vec<u32>,
}

impl Default for ArcConfig {
    fn default() -> Self {
        Self {
            k: 50,
            rbo_p: 0.9,
            filter_radius: 1,
            filter_sigma: 1.0,
            filter: FilterKind::SortedWindow,
            include_base_attribution: true,
            context_scope: ContextScope::PromptAndGenerated,
            context_maps: ContextMaps::Msea,
            base_candidates: Vec::new(),
        }
    }
}

impl ArcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k", "must be >= 1"));
        }
        check_p(self.rbo_p)?;
        if !(self.filter_sigma.is_finite() && self.filter_sigma > 0.0) {
            return Err(Error::invalid("filter_sigma", "must be finite and > 0"));
        }
        Ok(())
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("rbo_p", format!("{p} is outside (0, 1)")))
    }
}

/// Truncated rank-biased overlap normalized so that identical rankings
/// score exactly 1.
pub fn rbo(a: &Ranking, b: &Ranking, p: f64) -> Result<f64> {
    check_p(p)?;
    if a.len() != b.len() {
        return Err(Error::dims("ranking", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Empty("rankings of depth 0"));
    }
    let (a, b) = (a.as_slice(), b.as_slice());
    let mut seen_a = HashSet::with_capacity(a.len());
    let mut seen_b = HashSet::with_capacity(b.len());
    let mut overlap = 0usize;
    let mut weight = 1.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for d in 0..a.len() {
        let (x, y) = (a[d], b[d]);
        if x == y {
            overlap += 1;
        } else {
            if seen_b.contains(&x) {
                overlap += 1;
            }
            if seen_a.contains(&y) {
                overlap += 1;
            }
        }
        seen_a.insert(x);
        seen_b.insert(y);
        num += weight * (overlap as f64 / (d + 1) as f64);
        den += weight;
        weight *= p;
    }
    // den equals (1 - p^k) / (1 - p); summing it alongside keeps self-overlap at exactly 1.
    Ok((num / den).clamp(0.0, 1.0))
}

/// Per-context-token relevance `r_j` and irrelevance weight `w_j = 1 - r_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub relevance: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RelevanceVector {
    pub fn len(&self) -> usize {
        self.relevance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevance.is_empty()
    }

    pub fn empty() -> Self {
        Self {
            relevance: Vec::new(),
            weights: Vec::new(),
        }
    }
}

pub fn relevance_weights(context: &[Ranking], target: &Ranking, p: f64) -> Result<RelevanceVector> {
    if context.is_empty() {
        return Err(Error::Empty("context rankings"));
    }
    let relevance = context
        .iter()
        .map(|r| rbo(r, target, p))
        .collect::<Result<Vec<_>>>()?;
    let weights = relevance.iter().map(|r| 1.0 - r).collect();
    Ok(RelevanceVector { relevance, weights })
}

/// Raw map of the candidate with the smallest total activation at one
/// scale, with its vocabulary id. Ties go to the lower id.
pub fn base_attribution(
    bundle: &TraceBundle,
    scale_index: usize,
    candidates: &[u32],
) -> Result<(u32, AttributionMap)> {
    let mut ids = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut best: Option<(u32, f64, AttributionMap)> = None;
    for id in ids {
        let map = token_attribution(bundle, scale_index, id as usize)?;
        let total = map.sum();
        if best.as_ref().is_none_or(|(_, t, _)| total < *t) {
            best = Some((id, total, map));
        }
    }
    best.map(|(id, _, map)| (id, map))
        .ok_or(Error::Empty("base attribution candidate set"))
}

/// Weighted mean of the context maps, with `base` joining at weight 1.
pub fn aggregate_irrelevant(
    context: &[AttributionMap],
    weights: &RelevanceVector,
    base: Option<&AttributionMap>,
) -> Result<AttributionMap> {
    if context.len() != weights.len() {
        return Err(Error::dims("context maps", weights.len(), context.len()));
    }
    let first = context
        .first()
        .or(base)
        .ok_or(Error::Empty("no maps to aggregate"))?;
    let pool = context
        .iter()
        .zip(weights.weights.iter().copied())
        .chain(base.map(|b| (b, 1.0)));
    let mut acc = Array2::<f64>::zeros(first.dim());
    let mut total = 0.0;
    for (map, w) in pool {
        if !map.same_dims(first) {
            return Err(Error::dims(
                "context map",
                format!("{:?}", first.dim()),
                format!("{:?}", map.dim()),
            ));
        }
        if w != 0.0 {
            acc.scaled_add(w, map.values());
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    acc.mapv_inplace(|v| v / total);
    AttributionMap::new(acc, *first.geometry(), Stage::Fused)
}

/// Least-squares `argmin_b ||a - b * a_hat||`, clamped to `>= 0`; zero when
/// `a_hat` is identically zero.
pub fn solve_beta(a: &AttributionMap, a_hat: &AttributionMap) -> Result<f64> {
    if !a.same_dims(a_hat) {
        return Err(Error::dims(
            "interference map",
            format!("{:?}", a.dim()),
            format!("{:?}", a_hat.dim()),
        ));
    }
    let den = a_hat.dot(a_hat);
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((a.dot(a_hat) / den).max(0.0))
}

/// Normalized ascending ranks in `[0, 1]`, average rank for ties.
fn normalized_ranks(values: &Array2<f64>) -> Array2<f64> {
    let flat: Vec<f64> = values.iter().copied().collect();
    let n = flat.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && flat[order[j]] == flat[order[i]] {
            j += 1;
        }
        let avg = (i + j - 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = avg;
        }
        i = j;
    }
    let denom = n.saturating_sub(1) as f64;
    let ranks = ranks
        .into_iter()
        .map(|r| if denom == 0.0 { 0.5 } else { r / denom })
        .collect();
    Array2::from_shape_vec(values.dim(), ranks).expect("same length")
}

fn gaussian(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Blur with a truncated Gaussian kernel renormalized over in-bounds cells.
fn gaussian_blur(values: &Array2<f64>, radius: usize, sigma: f64) -> Array2<f64> {
    if radius == 0 {
        return values.clone();
    }
    let (rows, cols) = values.dim();
    let r = radius as isize;
    Array2::from_shape_fn((rows, cols), |(y, x)| {
        let mut acc = 0.0;
        let mut norm = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < 0 || xx < 0 || yy >= rows as isize || xx >= cols as isize {
                    continue;
                }
                let w = gaussian((dy * dy + dx * dx) as f64, sigma);
                acc += w * values[[yy as usize, xx as usize]];
                norm += w;
            }
        }
        acc / norm
    })
}

/// Normalized-rank transform of the whole map, then a truncated Gaussian
/// blur. Output lies in `[0, 1]`; a constant map becomes all 0.5.
pub fn rank_gaussian_filter(map: &AttributionMap, radius: usize, sigma: f64) -> AttributionMap {
    let ranks = normalized_ranks(map.values());
    let out = gaussian_blur(&ranks, radius, sigma);
    AttributionMap::new(out, *map.geometry(), map.stage()).expect("ranks are finite")
}

/// Each cell becomes a weighted mean of its sorted `(2r+1)^2` neighbourhood,
/// weights Gaussian in rank distance from the window median (`sigma` in
/// rank positions). Keeps the value range and leaves zero regions at zero.
pub fn sorted_window_filter(map: &AttributionMap, radius: usize, sigma: f64) -> AttributionMap {
    if radius == 0 {
        return map.clone();
    }
    let values = map.values();
    let (rows, cols) = values.dim();
    let r = radius as isize;
    let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
    let mut out = Array2::zeros((rows, cols));
    for y in 0..rows {
        for x in 0..cols {
            window.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0 && xx >= 0 && yy < rows as isize && xx < cols as isize {
                        window.push(values[[yy as usize, xx as usize]]);
                    }
                }
            }
            window.sort_by(f64::total_cmp);
            let centre = (window.len() - 1) as f64 / 2.0;
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (q, &v) in window.iter().enumerate() {
                let d = q as f64 - centre;
                let w = gaussian(d * d, sigma);
                acc += w * v;
                norm += w;
            }
            out[[y, x]] = acc / norm;
        }
    }
    AttributionMap::new(out, *map.geometry(), map.stage()).expect("convex combinations are finite")
}

pub fn apply_filter(map: &AttributionMap, config: &ArcConfig) -> AttributionMap {
    match config.filter {
        FilterKind::SortedWindow => sorted_window_filter(map, config.filter_radius, config.filter_sigma),
        FilterKind::RankTransform => rank_gaussian_filter(map, config.filter_radius, config.filter_sigma),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub map: AttributionMap,
    pub beta: f64,
}

/// `filter(max(a - beta * a_hat, 0))` with the least-squares `beta`.
pub fn refine(a: &AttributionMap, a_hat: &AttributionMap, config: &ArcConfig) -> Result<Refinement> {
    let beta = solve_beta(a, a_hat)?;
    Ok(Refinement {
        map: suppress(a, Some(a_hat), beta, config),
        beta,
    })
}

fn suppress(a: &AttributionMap, a_hat: Option<&AttributionMap>, beta: f64, config: &ArcConfig) -> AttributionMap {
    let mut residual = a.values().clone();
    if let Some(h) = a_hat {
        if beta != 0.0 {
            residual.zip_mut_with(h.values(), |v, &x| *v -= beta * x);
        }
    }
    residual.mapv_inplace(|v| v.max(0.0));
    let clipped = AttributionMap::new(residual, *a.geometry(), Stage::Refined).expect("finite, clipped at zero");
    apply_filter(&clipped, config)
}

/// Everything produced while explaining one target token.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub position: usize,
    /// Target map before suppression.
    pub fused: AttributionMap,
    pub refined: AttributionMap,
    pub beta: f64,
    pub context_positions: Vec<usize>,
    pub relevance: RelevanceVector,
    pub base_id: Option<u32>,
}

/// Shared per-bundle state: one map per distinct vocabulary id and one
/// ranking per token position, computed once.
#[derive(Debug)]
pub struct Explainer<'a> {
    bundle: &'a TraceBundle,
    arc: ArcConfig,
    scales: ScaleConfig,
    target_maps: BTreeMap<u32, AttributionMap>,
    context_maps: BTreeMap<u32, AttributionMap>,
    rankings: Vec<Ranking>,
    base: Option<(u32, AttributionMap)>,
}

impl<'a> Explainer<'a> {
    pub fn new(bundle: &'a TraceBundle, arc: &ArcConfig, scales: &ScaleConfig) -> Result<Self> {
        arc.validate()?;
        scales.validate()?;
        let k = arc.k.min(bundle.vocab_size());
        let tokens = bundle.tokens();
        let rankings = (0..tokens.len())
            .map(|j| position_ranking(bundle, j, k))
            .collect::<Result<Vec<_>>>()?;

        let mut target_maps = BTreeMap::new();
        for tok in tokens {
            if let std::collections::btree_map::Entry::Vacant(e) = target_maps.entry(tok.id) {
                e.insert(msea_attribution(bundle, tok.id as usize, scales)?);
            }
        }
        let (w, h) = bundle.image_dims();
        let reference = bundle.nearest_scale_index(1.0);
        let context_maps = match arc.context_maps {
            ContextMaps::Msea => BTreeMap::new(),
            ContextMaps::Raw => {
                let mut maps = BTreeMap::new();
                for tok in tokens {
                    if let std::collections::btree_map::Entry::Vacant(slot) = maps.entry(tok.id) {
                        let raw = token_attribution(bundle, reference, tok.id as usize)?;
                        slot.insert(rescale_map(&raw, w, h, scales.interpolation)?);
                    }
                }
                maps
            }
        };

        let base = if arc.include_base_attribution {
            let mut candidates: Vec<u32> = bundle.generated_positions().map(|j| tokens[j].id).collect();
            candidates.extend_from_slice(&arc.base_candidates);
            if candidates.is_empty() {
                None
            } else {
                let (id, raw) = base_attribution(bundle, reference, &candidates)?;
                Some((id, rescale_map(&raw, w, h, scales.interpolation)?))
            }
        } else {
            None
        };

        Ok(Self {
            bundle,
            arc: arc.clone(),
            scales: scales.clone(),
            target_maps,
            context_maps,
            rankings,
            base,
        })
    }

    pub fn bundle(&self) -> &TraceBundle {
        self.bundle
    }

    pub fn scale_config(&self) -> &ScaleConfig {
        &self.scales
    }

    pub fn ranking(&self, position: usize) -> Option<&Ranking> {
        self.rankings.get(position)
    }

    /// Target map (before suppression) for the token at `position`.
    pub fn fused(&self, position: usize) -> Result<&AttributionMap> {
        let tok = self.token(position)?;
        Ok(&self.target_maps[&tok.id])
    }

    fn token(&self, position: usize) -> Result<&crate::trace::TokenEntry> {
        let tokens = self.bundle.tokens();
        tokens.get(position).ok_or(Error::IndexOutOfRange {
            what: "token position",
            index: position,
            len: tokens.len(),
        })
    }

    fn context_map(&self, id: u32) -> &AttributionMap {
        self.context_maps.get(&id).unwrap_or(&self.target_maps[&id])
    }

    pub fn explain(&self, position: usize) -> Result<Explanation> {
        let tok = self.token(position)?;
        if tok.role != TokenRole::Generated {
            return Err(Error::PromptTarget { position });
        }
        let tokens = self.bundle.tokens();
        let context_positions: Vec<usize> = (0..position)
            .filter(|&j| match self.arc.context_scope {
                ContextScope::PromptAndGenerated => true,
                ContextScope::GeneratedOnly => tokens[j].role == TokenRole::Generated,
            })
            .collect();
        let fused = self.target_maps[&tok.id].clone();

        let relevance = if context_positions.is_empty() {
            RelevanceVector::empty()
        } else {
            let ctx: Vec<Ranking> = context_positions.iter().map(|&j| self.rankings[j].clone()).collect();
            relevance_weights(&ctx, &self.rankings[position], self.arc.rbo_p)?
        };
        let maps: Vec<AttributionMap> = context_positions
            .iter()
            .map(|&j| self.context_map(tokens[j].id).clone())
            .collect();
        let base = self.base.as_ref().map(|(_, m)| m);
        let a_hat = match aggregate_irrelevant(&maps, &relevance, base) {
            Ok(m) => Some(m),
            Err(Error::DegenerateWeights) | Err(Error::Empty(_)) => None,
            Err(e) => return Err(e),
        };
        let beta = match &a_hat {
            Some(h) => solve_beta(&fused, h)?,
            None => 0.0,
        };
        let refined = suppress(&fused, a_hat.as_ref(), beta, &self.arc);
        Ok(Explanation {
            position,
            fused,
            refined,
            beta,
            context_positions,
            relevance,
            base_id: self.base.as_ref().map(|(id, _)| *id),
        })
    }
}

/// One-shot explanation of the generated token at `position`.
pub fn arc_explain(
    bundle: &TraceBundle,
    position: usize,
    arc: &ArcConfig,
    scales: &ScaleConfig,
) -> Result<Explanation> {
    Explainer::new(bundle, arc, scales)?.explain(position)
}
