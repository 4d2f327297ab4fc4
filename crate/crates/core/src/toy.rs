//! A miniature multimodal transformer with planted attribution structure.
//!
//! Images are procedurally drawn coloured rectangles on a jittered grey
//! background. The patch embedding detects palette colours along dedicated
//! residual directions, and the unembedding row of each object word points
//! along its colour's direction, so logit-lens maps of planted words peak on
//! their rectangles. Function-word rows carry a weak copy of every colour
//! direction, which is the interference the suppression step has to remove.
//!
//! Residual layout (first 32 dimensions; extra dimensions are noise only):
//! `0..6` palette colours, `6` objectness, `7` functionness, `8..16` one
//! direction per function word, `16..28` position encoding, `28..32` bias.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{ResizePolicy, ScalePlan};
use crate::lens::{project_logits, topk_ranking};
use crate::mask::{BinaryMask, MaskSet};
use crate::msea::{plan_scales, PatchRule, ScaleConfig};
use crate::trace::{save_trace, Manifest, SemanticFlag, TokenEntry, TokenRole, TraceBundle};
use crate::mask::save_masks;

pub const BOS: u32 = 0;
pub const FUNCTION_WORDS: [&str; 8] = [".", ",", "a", "the", "and", "of", "in", "with"];
pub const OBJECT_WORDS: [&str; 6] = ["cat", "dog", "ball", "car", "tree", "cup"];
pub const PROMPT_WORDS: [&str; 5] = ["describe", "this", "image", "please", "briefly"];
const FUNC_START: u32 = 1;
const OBJ_START: u32 = FUNC_START + FUNCTION_WORDS.len() as u32;
const PROMPT_START: u32 = OBJ_START + OBJECT_WORDS.len() as u32;
const NAMED: u32 = PROMPT_START + PROMPT_WORDS.len() as u32;

const PERIOD: u32 = FUNC_START;
const ARTICLE: u32 = FUNC_START + 2;
/// Joiners between consecutive object words: ",", "and", "with", "of", "in".
const CONNECTORS: [u32; 5] = [FUNC_START + 1, FUNC_START + 4, FUNC_START + 7, FUNC_START + 5, FUNC_START + 6];

pub const MIN_HIDDEN: usize = 32;
const OBJECTNESS: usize = 6;
const FUNCTIONNESS: usize = 7;
const FUNC_DIMS: usize = 8;
const POS_DIMS: usize = 16;
const BIAS_DIMS: usize = 28;

/// Object colours, indexed like `OBJECT_WORDS`.
const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.20, 0.85],
    [0.15, 0.80, 0.20],
    [0.85, 0.85, 0.15],
    [0.15, 0.80, 0.85],
    [0.80, 0.15, 0.80],
];

/// Strength of the colour detectors in the patch embedding.
const COLOR_GAIN: f64 = 3.0;
/// Colour distance at which a detector stops responding.
const COLOR_RADIUS: f64 = 0.35;
/// Weight of every colour direction in function-word rows.
const GHOST: f64 = 0.3;
const ROW_BIAS: f64 = 0.3;
const ROW_NOISE: f64 = 0.05;
/// Logit margin planted by the successor embeddings.
const NEXT_LOGIT: f64 = 8.0;

/// A rectangle of grid cells (at scale 1.0) showing one object word.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub vocab_id: u32,
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
    /// Scale factors at which the object is drawn; `None` means all.
    pub visible_at: Option<Vec<f64>>,
}

impl Plant {
    pub fn visible(&self, factor: f64) -> bool {
        match &self.visible_at {
            None => true,
            Some(v) => v.iter().any(|&a| (a - factor).abs() <= 1e-9),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelSpec {
    pub seed: u64,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub layers: usize,
    pub patch_size: u32,
    pub plants: Vec<Plant>,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            hidden_dim: 32,
            vocab_size: 64,
            grid_rows: 8,
            grid_cols: 8,
            layers: 2,
            patch_size: 16,
            plants: vec![
                Plant {
                    vocab_id: OBJ_START,
                    row0: 0,
                    row1: 4,
                    col0: 0,
                    col1: 4,
                    visible_at: None,
                },
                Plant {
                    vocab_id: OBJ_START + 1,
                    row0: 4,
                    row1: 8,
                    col0: 4,
                    col1: 8,
                    visible_at: Some(vec![0.5]),
                },
            ],
        }
    }
}

impl ToyModelSpec {
    pub fn image_dims(&self) -> (u32, u32) {
        (
            self.grid_cols as u32 * self.patch_size,
            self.grid_rows as u32 * self.patch_size,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim < MIN_HIDDEN {
            return Err(Error::invalid("hidden_dim", format!("must be >= {MIN_HIDDEN}")));
        }
        if self.vocab_size < NAMED as usize {
            return Err(Error::invalid("vocab_size", format!("must be >= {NAMED}")));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 || self.patch_size == 0 {
            return Err(Error::invalid("grid", "rows, cols and patch size must be > 0"));
        }
        if self.plants.len() > CONNECTORS.len() + 1 {
            return Err(Error::invalid("plants", format!("at most {} plants", CONNECTORS.len() + 1)));
        }
        for (i, p) in self.plants.iter().enumerate() {
            let field = format!("plants[{i}]");
            if p.vocab_id as usize >= self.vocab_size {
                return Err(Error::invalid(field, format!("vocab id {} >= {}", p.vocab_id, self.vocab_size)));
            }
            if !(OBJ_START..PROMPT_START).contains(&p.vocab_id) {
                return Err(Error::invalid(field, format!("vocab id {} is not an object word", p.vocab_id)));
            }
            if p.row0 >= p.row1 || p.col0 >= p.col1 || p.row1 > self.grid_rows || p.col1 > self.grid_cols {
                return Err(Error::invalid(field, "region must be non-empty and inside the grid"));
            }
            if self.plants[..i].iter().any(|q| q.vocab_id == p.vocab_id) {
                return Err(Error::invalid(field, "duplicate vocab id"));
            }
        }
        Ok(())
    }
}

/// Vocabulary string for `id`.
pub fn word(id: u32) -> String {
    match id {
        BOS => "<bos>".to_string(),
        i if i < OBJ_START => FUNCTION_WORDS[(i - FUNC_START) as usize].to_string(),
        i if i < PROMPT_START => OBJECT_WORDS[(i - OBJ_START) as usize].to_string(),
        i if i < NAMED => PROMPT_WORDS[(i - PROMPT_START) as usize].to_string(),
        i => format!("tok{i}"),
    }
}

/// Vocabulary id of a named word.
pub fn word_id(text: &str) -> Option<u32> {
    (0..NAMED).find(|&i| word(i) == text)
}

fn semantic(id: u32) -> SemanticFlag {
    if (FUNC_START..OBJ_START).contains(&id) {
        SemanticFlag::FunctionWord
    } else if (OBJ_START..PROMPT_START).contains(&id) {
        SemanticFlag::ObjectWord
    } else {
        SemanticFlag::Other
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    w1: Array2<f64>,
    w2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    spec: ToyModelSpec,
    unembedding: Array2<f32>,
    embedding: Array2<f64>,
    patch_proj: Array2<f64>,
    layers: Vec<Layer>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal))
}

fn successor(id: u32, plants: &[Plant]) -> u32 {
    let det_target = plants.first().map_or(PERIOD, |p| p.vocab_id);
    match id {
        BOS => ARTICLE,
        ARTICLE => det_target,
        i if (PROMPT_START..NAMED).contains(&i) => match PROMPT_WORDS[(i - PROMPT_START) as usize] {
            "describe" => PROMPT_START + 1,
            "this" => PROMPT_START + 2,
            "please" => PROMPT_START,
            _ => ARTICLE,
        },
        i => {
            if let Some(k) = plants.iter().position(|p| p.vocab_id == i) {
                if k + 1 < plants.len() {
                    return CONNECTORS[k];
                }
                return PERIOD;
            }
            if let Some(k) = CONNECTORS.iter().position(|&c| c == i) {
                if let Some(p) = plants.get(k + 1) {
                    return p.vocab_id;
                }
            }
            PERIOD
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    m.rows()
        .into_iter()
        .map(|r| dot(r.as_slice().expect("standard layout"), v))
        .collect()
}

/// Bias direction shared by every visual state.
fn bias_direction(d: usize) -> Vec<f64> {
    let mut b = vec![0.0; d];
    for v in &mut b[BIAS_DIMS..BIAS_DIMS + 4] {
        *v = 0.5;
    }
    b
}

pub fn build_toy_model(spec: &ToyModelSpec) -> Result<ToyModel> {
    spec.validate()?;
    let d = spec.hidden_dim;
    let v = spec.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bias = bias_direction(d);

    let mut unembedding = gaussian_matrix(&mut rng, v, d, ROW_NOISE);
    for id in 0..v as u32 {
        let mut row = unembedding.row_mut(id as usize);
        for (x, b) in row.iter_mut().zip(&bias) {
            *x += ROW_BIAS * b;
        }
        if (FUNC_START..OBJ_START).contains(&id) {
            row[FUNC_DIMS + (id - FUNC_START) as usize] += 1.0;
            row[FUNCTIONNESS] += 0.5;
            for p in 0..PALETTE.len() {
                row[p] += GHOST;
            }
        } else if (OBJ_START..PROMPT_START).contains(&id) {
            row[(id - OBJ_START) as usize] += 1.0;
            row[OBJECTNESS] += 0.5;
        } else if id != BOS {
            // Unrelated words: random directions the image never excites.
            for (i, x) in row.iter_mut().enumerate() {
                if (FUNC_DIMS..POS_DIMS).contains(&i) || i >= MIN_HIDDEN {
                    *x += rng.sample::<f64, _>(StandardNormal) / 2.0;
                }
            }
        }
    }

    // Each token embeds as a push towards its grammatical successor.
    let mut embedding = Array2::zeros((v, d));
    for id in 0..v as u32 {
        let next = unembedding.row(successor(id, &spec.plants) as usize);
        let n2: f64 = next.iter().map(|x| x * x).sum();
        for (e, &x) in embedding.row_mut(id as usize).iter_mut().zip(next.iter()) {
            *e = NEXT_LOGIT * x / n2;
        }
    }

    let patch_proj = gaussian_matrix(&mut rng, d, 3, 0.1);
    let hidden = 2 * d;
    let layers = (0..spec.layers)
        .map(|_| Layer {
            wq: gaussian_matrix(&mut rng, d, d, 1.0 / (d as f64).sqrt()),
            wk: gaussian_matrix(&mut rng, d, d, 1.0 / (d as f64).sqrt()),
            wv: gaussian_matrix(&mut rng, d, d, 0.3 / (d as f64).sqrt()),
            wo: gaussian_matrix(&mut rng, d, d, 0.3 / (d as f64).sqrt()),
            w1: gaussian_matrix(&mut rng, hidden, d, 1.0 / (d as f64).sqrt()),
            w2: gaussian_matrix(&mut rng, d, hidden, 0.05 / (hidden as f64).sqrt()),
        })
        .collect();

    Ok(ToyModel {
        spec: spec.clone(),
        unembedding: unembedding.mapv(|x| x as f32),
        embedding,
        patch_proj,
        layers,
    })
}

/// Per-image appearance drawn from the image id.
#[derive(Debug, Clone, PartialEq)]
struct Scene {
    background: [f64; 3],
    phase: [f64; 2],
    flip_x: bool,
    flip_y: bool,
}

impl Scene {
    fn new(seed: u64, image_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ image_id.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
        let background = [
            0.5 + rng.random_range(-0.08..0.08),
            0.5 + rng.random_range(-0.08..0.08),
            0.5 + rng.random_range(-0.08..0.08),
        ];
        let phase = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
        Self {
            background,
            phase,
            flip_x: image_id & 1 == 1,
            flip_y: image_id & 2 == 2,
        }
    }
}

impl ToyModel {
    pub fn spec(&self) -> &ToyModelSpec {
        &self.spec
    }

    pub fn unembedding(&self) -> &Array2<f32> {
        &self.unembedding
    }

    /// Plant rectangle in original-image pixels for `scene`: `(x0, y0, x1, y1)`.
    fn plant_rect(&self, plant: &Plant, scene: &Scene) -> (u32, u32, u32, u32) {
        let ps = self.spec.patch_size;
        let (w, h) = self.spec.image_dims();
        let (mut x0, mut x1) = (plant.col0 as u32 * ps, plant.col1 as u32 * ps);
        let (mut y0, mut y1) = (plant.row0 as u32 * ps, plant.row1 as u32 * ps);
        if scene.flip_x {
            (x0, x1) = (w - x1, w - x0);
        }
        if scene.flip_y {
            (y0, y1) = (h - y1, h - y0);
        }
        (x0, y0, x1, y1)
    }

    /// Colour at original-image coordinates `(u, v)` when drawn at `factor`.
    fn color_at(&self, scene: &Scene, factor: f64, u: f64, v: f64) -> [f64; 3] {
        for plant in &self.spec.plants {
            if !plant.visible(factor) {
                continue;
            }
            let (x0, y0, x1, y1) = self.plant_rect(plant, scene);
            if u >= f64::from(x0) && u < f64::from(x1) && v >= f64::from(y0) && v < f64::from(y1) {
                return PALETTE[(plant.vocab_id - OBJ_START) as usize];
            }
        }
        let t = 0.03 * ((u / 9.0 + scene.phase[0]).sin() + (v / 7.0 + scene.phase[1]).cos());
        scene.background.map(|c| c + t)
    }

    /// Renders the image at `factor` of the original size.
    fn render(&self, scene: &Scene, factor: f64, width: u32, height: u32) -> Vec<[f64; 3]> {
        let mut px = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                let u = (f64::from(x) + 0.5) / factor;
                let v = (f64::from(y) + 0.5) / factor;
                px.push(self.color_at(scene, factor, u, v));
            }
        }
        px
    }

    fn position_code(&self, row: usize, col: usize, rows: usize, cols: usize, out: &mut [f64]) {
        let y = (row as f64 + 0.5) / rows as f64;
        let x = (col as f64 + 0.5) / cols as f64;
        for f in 0..3 {
            let w = PI * (f + 1) as f64;
            out[POS_DIMS + 4 * f] += 0.5 * (w * y).sin();
            out[POS_DIMS + 4 * f + 1] += 0.5 * (w * y).cos();
            out[POS_DIMS + 4 * f + 2] += 0.5 * (w * x).sin();
            out[POS_DIMS + 4 * f + 3] += 0.5 * (w * x).cos();
        }
    }

    /// Patch embeddings of the image rendered under `plan`.
    fn embed_image(&self, scene: &Scene, plan: &ScalePlan) -> Vec<Vec<f64>> {
        let d = self.spec.hidden_dim;
        let (w, h) = (plan.valid_region.width, plan.valid_region.height);
        let pixels = self.render(scene, plan.scale_factor, w, h);
        let ps = self.spec.patch_size;
        let bias = bias_direction(d);
        let mut out = Vec::with_capacity(plan.num_tokens());
        for r in 0..plan.grid_rows {
            for c in 0..plan.grid_cols {
                let mut mean = [0.0; 3];
                let mut n = 0.0;
                for y in (r as u32 * ps)..((r as u32 + 1) * ps).min(h) {
                    for x in (c as u32 * ps)..((c as u32 + 1) * ps).min(w) {
                        let p = pixels[(y * w + x) as usize];
                        for ch in 0..3 {
                            mean[ch] += p[ch];
                        }
                        n += 1.0;
                    }
                }
                let mean = mean.map(|m| m / n);
                let mut z = bias.clone();
                for (k, palette) in PALETTE.iter().enumerate() {
                    let dist = (0..3).map(|ch| (mean[ch] - palette[ch]).powi(2)).sum::<f64>().sqrt();
                    z[k] += COLOR_GAIN * (1.0 - dist / COLOR_RADIUS).max(0.0);
                }
                for (i, zi) in z.iter_mut().enumerate() {
                    *zi += (0..3).map(|ch| self.patch_proj[[i, ch]] * (mean[ch] - 0.5)).sum::<f64>();
                }
                self.position_code(r, c, plan.grid_rows, plan.grid_cols, &mut z);
                out.push(z);
            }
        }
        out
    }

    /// Causal forward pass over the residual stream, in place.
    fn forward(&self, stream: &mut [Vec<f64>]) {
        let d = self.spec.hidden_dim;
        let scale = 1.0 / (d as f64).sqrt();
        for layer in &self.layers {
            let q: Vec<Vec<f64>> = stream.iter().map(|h| matvec(&layer.wq, h)).collect();
            let k: Vec<Vec<f64>> = stream.iter().map(|h| matvec(&layer.wk, h)).collect();
            let v: Vec<Vec<f64>> = stream.iter().map(|h| matvec(&layer.wv, h)).collect();
            let mut mixed = vec![vec![0.0; d]; stream.len()];
            for i in 0..stream.len() {
                let scores: Vec<f64> = (0..=i).map(|j| scale * dot(&q[i], &k[j])).collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    let a = e / total;
                    for (m, x) in mixed[i].iter_mut().zip(&v[j]) {
                        *m += a * x;
                    }
                }
            }
            for (h, m) in stream.iter_mut().zip(&mixed) {
                let o = matvec(&layer.wo, m);
                for (x, y) in h.iter_mut().zip(&o) {
                    *x += y;
                }
            }
            for h in stream.iter_mut() {
                let act: Vec<f64> = matvec(&layer.w1, h).into_iter().map(|x| x.max(0.0)).collect();
                let o = matvec(&layer.w2, &act);
                for (x, y) in h.iter_mut().zip(&o) {
                    *x += y;
                }
            }
        }
    }

    fn text_stream(&self, text: &[u32]) -> Vec<Vec<f64>> {
        std::iter::once(BOS)
            .chain(text.iter().copied())
            .map(|id| self.embedding.row(id as usize).to_vec())
            .collect()
    }

    /// Final states for `[visual][BOS][text]`.
    fn run(&self, visual: &[Vec<f64>], text: &[u32]) -> Vec<Vec<f64>> {
        let mut stream: Vec<Vec<f64>> = visual.to_vec();
        stream.extend(self.text_stream(text));
        self.forward(&mut stream);
        stream
    }

    fn max_new_tokens(&self) -> usize {
        2 * self.spec.plants.len().max(1) + 1
    }

    /// Greedy generation at scale 1.0 followed by teacher-forced passes at
    /// every requested scale.
    pub fn run_forward(&self, image_id: u64, prompt: &[u32], scale_factors: &[f64]) -> Result<ToyRun> {
        let v = self.spec.vocab_size;
        if let Some(&bad) = prompt.iter().find(|&&id| id as usize >= v || id == BOS) {
            return Err(Error::invalid("prompt", format!("token id {bad} is not a valid prompt token")));
        }
        let (w, h) = self.spec.image_dims();
        let config = ScaleConfig {
            scale_factors: scale_factors.to_vec(),
            ..ScaleConfig::default()
        };
        let patching = PatchRule {
            patch_size: self.spec.patch_size,
        };
        let plans = plan_scales(w, h, &config, ResizePolicy::RawResize, None, patching)?;
        let unit = plan_scales(w, h, &ScaleConfig::single(1.0), ResizePolicy::RawResize, None, patching)?
            .remove(0);
        let scene = Scene::new(self.spec.seed, image_id);

        let visual = self.embed_image(&scene, &unit);
        let n = visual.len();
        let mut text: Vec<u32> = prompt.to_vec();
        for _ in 0..self.max_new_tokens() {
            let states = self.run(&visual, &text);
            let last: Vec<f32> = states[states.len() - 1].iter().map(|&x| x as f32).collect();
            let logits = project_logits(&last, self.unembedding.view())?;
            let next = topk_ranking(&logits, 1)?.top().expect("k = 1");
            text.push(next);
            if next == PERIOD {
                break;
            }
        }
        let final_states = self.run(&visual, &text);
        let d = self.spec.hidden_dim;
        let text_states = Array2::from_shape_fn((text.len(), d), |(j, c)| final_states[n + j][c] as f32);

        let mut visual_states = Vec::with_capacity(plans.len());
        for plan in &plans {
            let emb = self.embed_image(&scene, plan);
            let m = emb.len();
            let states = self.run(&emb, &text);
            visual_states.push(Array2::from_shape_fn((m, d), |(i, c)| states[i][c] as f32));
        }

        let mut masks = MaskSet::new();
        for (i, plant) in self.spec.plants.iter().enumerate() {
            let (x0, y0, x1, y1) = self.plant_rect(plant, &scene);
            let mask = BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1);
            masks.insert(i as u32, word(plant.vocab_id), mask);
        }
        let tokens = text
            .iter()
            .enumerate()
            .map(|(j, &id)| TokenEntry {
                id,
                text: word(id),
                role: if j < prompt.len() {
                    TokenRole::Prompt
                } else {
                    TokenRole::Generated
                },
                semantic: semantic(id),
                mask_id: self
                    .spec
                    .plants
                    .iter()
                    .position(|p| p.vocab_id == id)
                    .map(|i| i as u32),
            })
            .collect();

        let bundle = TraceBundle {
            manifest: Manifest {
                model_name: format!("toy-mllm-seed{}", self.spec.seed),
                vocab_size: v,
                hidden_dim: d,
                layer: self.spec.layers,
                image_width: w,
                image_height: h,
                scales: plans,
                tokens,
            },
            unembedding: self.unembedding.clone(),
            visual_states,
            text_states,
        };
        bundle.validate()?;

        let image = RgbImage::from_fn(w, h, |x, y| {
            let c = self.color_at(&scene, 1.0, f64::from(x) + 0.5, f64::from(y) + 0.5);
            Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        });
        Ok(ToyRun { bundle, masks, image })
    }
}

/// A bundle with its ground-truth masks and the original image.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyRun {
    pub bundle: TraceBundle,
    pub masks: MaskSet,
    pub image: RgbImage,
}

pub const IMAGE_FILE: &str = "image.png";
pub const MASK_DIR: &str = "masks";

impl ToyRun {
    /// Writes the bundle, `masks/` and `image.png` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_trace(&self.bundle, dir)?;
        save_masks(&self.masks, dir.join(MASK_DIR))?;
        let path = dir.join(IMAGE_FILE);
        self.image.save(&path).map_err(|source| Error::Image { path, source })
    }
}

/// The default prompt, "describe this image".
pub fn default_prompt() -> Vec<u32> {
    vec![PROMPT_START, PROMPT_START + 1, PROMPT_START + 2]
}
