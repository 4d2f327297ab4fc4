//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero unless every criterion passes or fails only in its documented way.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lens_attrib::arc::{rbo, solve_beta, Explainer};
use lens_attrib::lens::token_attribution;
use lens_attrib::metrics::{binarize, f1_iou, func_iou, obj_iou, BinarizeMode};
use lens_attrib::msea::{fuse_maps, msea_attribution, rescale_map};
use lens_attrib::toy::{build_toy_model, default_prompt, ToyModelSpec};
use lens_attrib::{
    directory_digest, AttributionMap, BinarizePolicy, BinaryMask, EngineConfig, FusionMode, Interpolation, Ranking,
    ScaleConfig, Stage,
};

struct Outcome {
    pass: bool,
    detail: String,
    /// Failure explained by a documented inconsistency in the source tables.
    expected_failure: bool,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
            expected_failure: false,
        }
    }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed < limit, format!("{:.2}s < {}s", elapsed.as_secs_f64(), limit.as_secs()))
}

// (group, row, dataset, obj, func, printed f1)
const F1_TRIPLES: &[(&str, &str, &str, f64, f64, f64)] = &[
    ("methods", "Grad-CAM", "COCO", 21.23, 51.93, 30.14),
    ("methods", "Grad-CAM", "GranDf", 17.85, 62.15, 27.74),
    ("methods", "Grad-CAM", "OpenPSG", 22.93, 48.57, 31.15),
    ("methods", "Grad-CAM++", "COCO", 19.52, 62.83, 29.78),
    ("methods", "Grad-CAM++", "GranDf", 17.30, 73.42, 28.01),
    ("methods", "Grad-CAM++", "OpenPSG", 22.21, 59.95, 32.41),
    ("methods", "Grad-Rollout", "COCO", 1.27, 99.51, 2.51),
    ("methods", "Grad-Rollout", "GranDf", 1.40, 99.61, 2.77),
    ("methods", "Grad-Rollout", "OpenPSG", 1.57, 99.58, 13.08),
    ("methods", "Layer-CAM", "COCO", 11.43, 84.88, 20.15),
    ("methods", "Layer-CAM", "GranDf", 13.11, 82.09, 22.62),
    ("methods", "Layer-CAM", "OpenPSG", 14.12, 85.29, 24.22),
    ("methods", "Attention", "COCO", 8.20, 92.87, 15.07),
    ("methods", "Attention", "GranDf", 9.60, 93.56, 17.42),
    ("methods", "Attention", "OpenPSG", 10.58, 94.28, 19.03),
    ("methods", "Attention-Rollout", "COCO", 5.74, 96.50, 10.83),
    ("methods", "Attention-Rollout", "GranDf", 7.21, 96.65, 13.42),
    ("methods", "Attention-Rollout", "OpenPSG", 7.94, 97.04, 14.68),
    ("methods", "CP-LRP", "COCO", 9.90, 53.97, 16.73),
    ("methods", "CP-LRP", "GranDf", 12.61, 53.24, 20.39),
    ("methods", "CP-LRP", "OpenPSG", 13.30, 53.36, 21.30),
    ("methods", "Attn-LRP", "COCO", 9.92, 52.41, 16.69),
    ("methods", "Attn-LRP", "GranDf", 12.15, 52.19, 19.72),
    ("methods", "Attn-LRP", "OpenPSG", 12.78, 52.26, 20.54),
    ("methods", "CAM", "COCO", 21.23, 51.93, 30.14),
    ("methods", "CAM", "GranDf", 17.85, 62.15, 27.74),
    ("methods", "CAM", "OpenPSG", 22.93, 48.57, 31.15),
    ("methods", "Archi.-Surgery", "COCO", 15.69, 63.82, 25.19),
    ("methods", "Archi.-Surgery", "GranDf", 16.59, 62.28, 26.20),
    ("methods", "Archi.-Surgery", "OpenPSG", 19.83, 58.77, 29.65),
    ("methods", "TAM", "COCO", 27.37, 68.44, 39.10),
    ("methods", "TAM", "GranDf", 18.65, 88.97, 30.83),
    ("methods", "TAM", "OpenPSG", 26.26, 92.99, 40.95),
    ("methods", "MSEA+ARC", "COCO", 29.35, 91.57, 44.45),
    ("methods", "MSEA+ARC", "GranDf", 23.32, 91.85, 37.20),
    ("methods", "MSEA+ARC", "OpenPSG", 29.20, 94.69, 44.64),
    ("models", "LLaVA1.5-7B/CAM", "COCO", 23.17, 43.16, 30.16),
    ("models", "LLaVA1.5-7B/CAM", "GranDf", 20.07, 47.48, 28.21),
    ("models", "LLaVA1.5-7B/CAM", "OpenPSG", 25.11, 51.55, 33.77),
    ("models", "LLaVA1.5-7B/TAM", "COCO", 27.65, 61.43, 38.13),
    ("models", "LLaVA1.5-7B/TAM", "GranDf", 20.71, 59.15, 30.68),
    ("models", "LLaVA1.5-7B/TAM", "OpenPSG", 28.57, 61.06, 38.93),
    ("models", "LLaVA1.5-7B/MSEA+ARC", "COCO", 30.62, 87.32, 45.34),
    ("models", "LLaVA1.5-7B/MSEA+ARC", "GranDf", 24.79, 85.18, 38.40),
    ("models", "LLaVA1.5-7B/MSEA+ARC", "OpenPSG", 32.03, 86.80, 46.79),
    ("models", "LLaVA1.5-13B/CAM", "COCO", 24.82, 51.18, 33.43),
    ("models", "LLaVA1.5-13B/CAM", "GranDf", 21.34, 43.99, 28.74),
    ("models", "LLaVA1.5-13B/CAM", "OpenPSG", 26.65, 48.45, 34.39),
    ("models", "LLaVA1.5-13B/TAM", "COCO", 29.12, 58.50, 38.88),
    ("models", "LLaVA1.5-13B/TAM", "GranDf", 22.10, 51.02, 30.84),
    ("models", "LLaVA1.5-13B/TAM", "OpenPSG", 30.88, 59.96, 40.76),
    ("models", "LLaVA1.5-13B/MSEA+ARC", "COCO", 31.76, 97.18, 47.87),
    ("models", "LLaVA1.5-13B/MSEA+ARC", "GranDf", 26.08, 95.58, 40.98),
    ("models", "LLaVA1.5-13B/MSEA+ARC", "OpenPSG", 32.57, 97.32, 48.80),
    ("models", "InternVL2.5-2B/CAM", "COCO", 15.94, 45.62, 23.63),
    ("models", "InternVL2.5-2B/CAM", "GranDf", 18.28, 37.64, 24.61),
    ("models", "InternVL2.5-2B/CAM", "OpenPSG", 19.76, 46.42, 27.72),
    ("models", "InternVL2.5-2B/TAM", "COCO", 21.38, 65.10, 32.19),
    ("models", "InternVL2.5-2B/TAM", "GranDf", 20.48, 85.93, 33.08),
    ("models", "InternVL2.5-2B/TAM", "OpenPSG", 23.00, 86.86, 36.36),
    ("models", "InternVL2.5-2B/MSEA+ARC", "COCO", 30.61, 76.48, 43.72),
    ("models", "InternVL2.5-2B/MSEA+ARC", "GranDf", 24.54, 88.93, 38.47),
    ("models", "InternVL2.5-2B/MSEA+ARC", "OpenPSG", 31.50, 91.03, 46.81),
    ("models", "InternVL2.5-4B/CAM", "COCO", 18.23, 40.95, 25.23),
    ("models", "InternVL2.5-4B/CAM", "GranDf", 20.91, 44.52, 28.46),
    ("models", "InternVL2.5-4B/CAM", "OpenPSG", 21.28, 34.70, 26.38),
    ("models", "InternVL2.5-4B/TAM", "COCO", 21.76, 63.12, 32.36),
    ("models", "InternVL2.5-4B/TAM", "GranDf", 22.53, 89.71, 36.02),
    ("models", "InternVL2.5-4B/TAM", "OpenPSG", 23.49, 89.75, 37.23),
    ("models", "InternVL2.5-4B/MSEA+ARC", "COCO", 31.80, 82.73, 45.94),
    ("models", "InternVL2.5-4B/MSEA+ARC", "GranDf", 27.73, 94.34, 42.86),
    ("models", "InternVL2.5-4B/MSEA+ARC", "OpenPSG", 33.52, 94.09, 49.43),
    ("models", "InternVL2.5-8B/CAM", "COCO", 14.59, 64.41, 23.80),
    ("models", "InternVL2.5-8B/CAM", "GranDf", 18.04, 57.42, 27.45),
    ("models", "InternVL2.5-8B/CAM", "OpenPSG", 18.46, 62.21, 28.47),
    ("models", "InternVL2.5-8B/TAM", "COCO", 19.98, 66.53, 30.73),
    ("models", "InternVL2.5-8B/TAM", "GranDf", 21.56, 85.95, 34.47),
    ("models", "InternVL2.5-8B/TAM", "OpenPSG", 21.73, 88.74, 34.91),
    ("models", "InternVL2.5-8B/MSEA+ARC", "COCO", 32.16, 73.20, 45.25),
    ("models", "InternVL2.5-8B/MSEA+ARC", "GranDf", 27.00, 86.72, 41.18),
    ("models", "InternVL2.5-8B/MSEA+ARC", "OpenPSG", 33.97, 91.11, 49.49),
    ("models", "Qwen2-VL-2B/CAM", "COCO", 21.23, 51.93, 30.14),
    ("models", "Qwen2-VL-2B/CAM", "GranDf", 17.85, 62.15, 27.74),
    ("models", "Qwen2-VL-2B/CAM", "OpenPSG", 22.93, 48.50, 31.15),
    ("models", "Qwen2-VL-2B/TAM", "COCO", 27.37, 68.44, 39.10),
    ("models", "Qwen2-VL-2B/TAM", "GranDf", 18.65, 88.97, 30.83),
    ("models", "Qwen2-VL-2B/TAM", "OpenPSG", 26.26, 92.99, 40.95),
    ("models", "Qwen2-VL-2B/MSEA+ARC", "COCO", 29.35, 91.57, 44.45),
    ("models", "Qwen2-VL-2B/MSEA+ARC", "GranDf", 23.32, 91.85, 37.20),
    ("models", "Qwen2-VL-2B/MSEA+ARC", "OpenPSG", 29.20, 94.69, 44.64),
    ("models", "Qwen2-VL-7B/CAM", "COCO", 22.51, 42.44, 29.42),
    ("models", "Qwen2-VL-7B/CAM", "GranDf", 18.60, 68.03, 29.21),
    ("models", "Qwen2-VL-7B/CAM", "OpenPSG", 23.41, 42.94, 30.30),
    ("models", "Qwen2-VL-7B/TAM", "COCO", 28.13, 71.85, 40.43),
    ("models", "Qwen2-VL-7B/TAM", "GranDf", 19.88, 90.57, 32.61),
    ("models", "Qwen2-VL-7B/TAM", "OpenPSG", 26.94, 89.88, 41.45),
    ("models", "Qwen2-VL-7B/MSEA+ARC", "COCO", 29.86, 94.77, 45.41),
    ("models", "Qwen2-VL-7B/MSEA+ARC", "GranDf", 23.53, 90.59, 37.35),
    ("models", "Qwen2-VL-7B/MSEA+ARC", "OpenPSG", 29.01, 94.33, 44.37),
];

/// Printed F1 values that disagree with their own Obj/Func columns.
const F1_MISPRINTS: &[(&str, &str, &str)] = &[
    ("methods", "Grad-Rollout", "OpenPSG"),
    ("methods", "Layer-CAM", "GranDf"),
    ("models", "InternVL2.5-8B/MSEA+ARC", "COCO"),
    ("models", "Qwen2-VL-2B/CAM", "OpenPSG"),
];

fn f1_table() -> Outcome {
    let start = Instant::now();
    let mut failing = BTreeSet::new();
    let mut lines = Vec::new();
    for &(group, row, dataset, obj, func, printed) in F1_TRIPLES {
        let got = f1_iou(obj, func);
        if (got - printed).abs() > 0.01 + 1e-9 {
            failing.insert((group, row, dataset));
            lines.push(format!("{group} {row} {dataset}: {got:.4} vs printed {printed:.2}"));
        }
    }
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(1));
    let passed = F1_TRIPLES.len() - failing.len();
    let mut detail = format!("{passed}/{} triples within 0.01, {timing}", F1_TRIPLES.len());
    if !lines.is_empty() {
        detail.push_str(&format!("; off: {}", lines.join("; ")));
    }
    let known: BTreeSet<_> = F1_MISPRINTS.iter().copied().collect();
    Outcome {
        pass: failing.is_empty() && fast,
        detail,
        expected_failure: fast && failing == known,
    }
}

fn random_ranking(rng: &mut ChaCha8Rng, k: usize, vocab: u32) -> Ranking {
    let mut ids: Vec<u32> = (0..vocab).collect();
    ids.shuffle(rng);
    ids.truncate(k);
    Ranking::new(ids, vocab as usize).unwrap()
}

/// Prefix-intersection definition, computed with set intersections at each depth.
fn rbo_oracle(a: &[u32], b: &[u32], p: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for d in 1..=a.len() {
        let sa: BTreeSet<u32> = a[..d].iter().copied().collect();
        let sb: BTreeSet<u32> = b[..d].iter().copied().collect();
        let w = p.powi(d as i32 - 1);
        num += w * sa.intersection(&sb).count() as f64 / d as f64;
        den += w;
    }
    num / den
}

fn rbo_criterion() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for i in 0..1000 {
        let k = rng.random_range(1..=10);
        let p = [0.5, 0.9, 0.99][i % 3];
        // Small vocabularies force heavy overlap.
        let vocab = rng.random_range(k as u32..=3 * k as u32);
        let a = random_ranking(&mut rng, k, vocab);
        let b = random_ranking(&mut rng, k, vocab);
        let ab = rbo(&a, &b, p).unwrap();
        worst = worst.max((ab - rbo_oracle(a.as_slice(), b.as_slice(), p)).abs());
        exact &= ab == rbo(&b, &a, p).unwrap();
        exact &= rbo(&a, &a, p).unwrap() == 1.0;
    }
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(5));
    Outcome::new(
        worst <= 1e-12 && exact && fast,
        format!("max |rbo - oracle| = {worst:.1e}, symmetry and self-similarity exact: {exact}, {timing}"),
    )
}

fn map(values: Array2<f64>) -> AttributionMap {
    AttributionMap::pixel(values, Stage::Fused).unwrap()
}

fn beta_criterion() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_gap: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    let mut saturated = 0;
    for _ in 0..200 {
        let rows = rng.random_range(1..=32);
        let cols = rng.random_range(1..=32);
        let c = rng.random_range(0.0..5.0);
        let noise = rng.random_range(0.0..2.0);
        let hat = Array2::from_shape_fn((rows, cols), |_| rng.random_range(0.0..1.0));
        let a = Array2::from_shape_fn((rows, cols), |(r, q)| c * hat[[r, q]] + noise * rng.random_range(-1.0..1.0));
        let beta = solve_beta(&map(a.clone()), &map(hat.clone())).unwrap();

        let mut best = (f64::INFINITY, 0.0);
        for step in 0..=5000 {
            let b = step as f64 * 1e-3;
            let loss: f64 = a.iter().zip(hat.iter()).map(|(x, h)| (x - b * h).powi(2)).sum();
            if loss < best.0 {
                best = (loss, b);
            }
        }
        // A convex quadratic restricted to [0, 5] is minimized at the clipped optimum.
        saturated += (beta > 5.0) as usize;
        worst_gap = worst_gap.max((beta.min(5.0) - best.1).abs());

        if beta > 0.0 {
            let inner: f64 = a.iter().zip(hat.iter()).map(|(x, h)| (x - beta * h) * h).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nh = hat.iter().map(|x| x * x).sum::<f64>().sqrt();
            worst_orth = worst_orth.max(inner.abs() / (na * nh));
        }
    }
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(10));
    Outcome::new(
        worst_gap <= 1e-3 && worst_orth <= 1e-5 && fast,
        format!(
            "max |beta - grid| = {worst_gap:.1e} ({saturated} above the grid), \
             max normalized residual inner product = {worst_orth:.1e}, {timing}"
        ),
    )
}

fn random_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> AttributionMap {
    map(Array2::from_shape_fn((rows, cols), |_| rng.random_range(-5.0..5.0)))
}

fn msea_criterion() -> Outcome {
    let mut problems = Vec::new();

    // One pixel per patch: the scale-1.0 grid equals the canvas.
    let spec = ToyModelSpec {
        patch_size: 1,
        ..ToyModelSpec::default()
    };
    let run = build_toy_model(&spec)
        .unwrap()
        .run_forward(0, &default_prompt(), &[1.0])
        .unwrap();
    let single = ScaleConfig::single(1.0);
    for k in [0usize, 9, 10, 40] {
        let raw = token_attribution(&run.bundle, 0, k).unwrap();
        let fused = msea_attribution(&run.bundle, k, &single).unwrap();
        if raw.values() != fused.values() {
            problems.push(format!("token {k} differs from the raw map"));
        }
    }
    // At 16 px per patch the single-scale map is the raw map resampled once.
    let run = build_toy_model(&ToyModelSpec::default())
        .unwrap()
        .run_forward(0, &default_prompt(), &[1.0])
        .unwrap();
    let (w, h) = run.bundle.image_dims();
    for k in [9usize, 10] {
        let raw = token_attribution(&run.bundle, 0, k).unwrap();
        let expected = rescale_map(&raw, w, h, Interpolation::Bilinear).unwrap();
        if expected.values() != msea_attribution(&run.bundle, k, &single).unwrap().values() {
            problems.push(format!("token {k} at 16px differs from one bilinear resample"));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for set in 0..100 {
        let n = rng.random_range(1..=5);
        let (rows, cols) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let mut maps: Vec<AttributionMap> = (0..n).map(|_| random_map(&mut rng, rows, cols)).collect();
        let mean = fuse_maps(&maps, FusionMode::Mean).unwrap();
        let max = fuse_maps(&maps, FusionMode::Max).unwrap();
        for ((r, c), v) in mean.values().indexed_iter() {
            let column: Vec<f64> = maps.iter().map(|m| m.get(r, c)).collect();
            let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if *v < lo - 1e-12 || *v > hi + 1e-12 {
                problems.push(format!("set {set}: mean outside [min, max]"));
                break;
            }
        }
        maps.shuffle(&mut rng);
        if fuse_maps(&maps, FusionMode::Max).unwrap().values() != max.values() {
            problems.push(format!("set {set}: max depends on order"));
        }
    }
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            "single scale at 1.0 equals the raw map exactly; 100 sets bounded and order-free".to_string()
        } else {
            problems.join("; ")
        },
    )
}

fn positive_mass(m: &AttributionMap, inside: Option<&BinaryMask>) -> f64 {
    m.values()
        .indexed_iter()
        .filter(|((r, c), _)| inside.is_none_or(|k| k.get(*c as u32, *r as u32)))
        .map(|(_, v)| v.max(0.0))
        .sum()
}

fn arc_criterion() -> Outcome {
    let start = Instant::now();
    let model = build_toy_model(&ToyModelSpec::default()).unwrap();
    let config = EngineConfig::default();
    let mut problems = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    let mut least_gain = f64::INFINITY;
    for image_id in 0..8 {
        let run = model.run_forward(image_id, &default_prompt(), &[0.5, 0.75, 1.0]).unwrap();
        let bundle = &run.bundle;
        let explainer = Explainer::new(bundle, &config.arc, &config.scales_for(bundle)).unwrap();
        let explain = |text: &str| {
            let j = bundle.generated_positions().find(|&j| bundle.tokens()[j].text == text).unwrap();
            (j, explainer.explain(j).unwrap())
        };
        // "cat" is planted at every scale.
        let (j, cat) = explain("cat");
        let mask = run.masks.get(bundle.tokens()[j].mask_id.unwrap()).unwrap();
        let before = positive_mass(&cat.fused, Some(mask)) / positive_mass(&cat.fused, None);
        let after = positive_mass(&cat.refined, Some(mask)) / positive_mass(&cat.refined, None);
        least_gain = least_gain.min(after - before);
        if after <= before {
            problems.push(format!("image {image_id}: in-plant share {before:.3} -> {after:.3}"));
        }
        for punct in [",", "."] {
            let ratio = explain(punct).1.refined.sum() / cat.refined.sum();
            worst_ratio = worst_ratio.max(ratio);
            if ratio > 0.1 {
                problems.push(format!("image {image_id}: `{punct}` mass is {:.1}% of `cat`", ratio * 100.0));
            }
        }
    }
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(30));
    let mut detail = format!(
        "8 toy images; smallest in-plant share gain {least_gain:+.3}, worst punctuation/object mass {:.1}%, {timing}",
        worst_ratio * 100.0
    );
    if !problems.is_empty() {
        detail.push_str(&format!("; {}", problems.join("; ")));
    }
    Outcome::new(problems.is_empty() && fast, detail)
}

const GOLDEN: &[(&str, &str)] = &[
    ("corpus", "3fe4419ac373ef95b22fed8a251bee7bce98c00532886ed00bddc11a4705c425"),
    ("attribute", "70b6a4f2c14ae624d884581ea6de815c187b56c2239239ee3817a6ff13fbdf2f"),
    ("report", "d3d39a046d02ac2dc596a6e71a021b78aadfae82c42499269b6867402324a64b"),
    ("report-no-arc", "89c669959754b89d69e4871d0a5c74a093385d3c905c6745cc04f556551eecd5"),
    ("report-no-msea", "157236462df5797a4c244740ab5a9befa0cf528d39e7a2acabadf90b9ae77647"),
];

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lens-attrib"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

struct PipelineRun {
    digests: Vec<(String, String)>,
    scores: Vec<(f64, f64)>,
}

fn pipeline(root: &Path) -> Result<PipelineRun, String> {
    let p = |rel: &str| root.join(rel).to_string_lossy().into_owned();
    cli(&["toy-trace", "--out", &p("corpus"), "--seed", "42", "--count", "8"])?;
    cli(&["attribute", "--trace", &p("corpus/img_000"), "--out", &p("attribute")])?;
    let variants: [(&str, Option<&str>); 3] =
        [("report", None), ("report-no-arc", Some("--no-arc")), ("report-no-msea", Some("--no-msea"))];
    let corpus = p("corpus");
    let mut scores = Vec::new();
    for (name, flag) in variants {
        std::fs::create_dir_all(root.join(name)).map_err(|e| e.to_string())?;
        let report = p(&format!("{name}/report.json"));
        let mut args = vec!["evaluate", "--trace", &corpus, "--report", &report, "--no-timestamp"];
        args.extend(flag);
        cli(&args)?;
        let text = std::fs::read_to_string(&report).map_err(|e| e.to_string())?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        scores.push((v["obj_iou"].as_f64().unwrap(), v["func_iou"].as_f64().unwrap()));
    }
    let digests = GOLDEN
        .iter()
        .map(|(name, _)| Ok((name.to_string(), directory_digest(root.join(name)).map_err(|e| e.to_string())?)))
        .collect::<Result<_, String>>()?;
    Ok(PipelineRun { digests, scores })
}

fn golden_criterion() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, e),
    };
    let mut problems = Vec::new();
    if first.digests != second.digests {
        problems.push("repeated runs differ".to_string());
    }
    for ((name, got), (_, want)) in first.digests.iter().zip(GOLDEN) {
        if got != want {
            problems.push(format!("{name} digest {got} != committed {want}"));
        }
    }
    let report_digests: BTreeSet<&String> = first.digests[2..].iter().map(|(_, d)| d).collect();
    if report_digests.len() != 3 {
        problems.push("ablation reports are not distinct".to_string());
    }
    let [full, no_arc, no_msea] = [first.scores[0], first.scores[1], first.scores[2]];
    if full.1 <= no_arc.1 {
        problems.push(format!("Func-IoU with ARC {:.2} <= without {:.2}", full.1, no_arc.1));
    }
    if full.0 <= no_msea.0 {
        problems.push(format!("Obj-IoU with MSEA {:.2} <= without {:.2}", full.0, no_msea.0));
    }
    let detail = format!(
        "Obj/Func full {:.2}/{:.2}, no-arc {:.2}/{:.2}, no-msea {:.2}/{:.2}",
        full.0, full.1, no_arc.0, no_arc.1, no_msea.0, no_msea.1
    );
    if problems.is_empty() {
        Outcome::new(true, format!("digests stable and committed; {detail}"))
    } else {
        Outcome::new(false, format!("{}; {detail}", problems.join("; ")))
    }
}

fn mask_strategy() -> impl Strategy<Value = (u32, u32, Vec<bool>, Vec<bool>)> {
    (1u32..16, 1u32..16).prop_flat_map(|(w, h)| {
        let n = (w * h) as usize;
        (
            Just(w),
            Just(h),
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(any::<bool>(), n),
        )
    })
}

fn metric_criterion() -> Outcome {
    let cases = PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    };
    let mut problems = Vec::new();

    let mut runner = TestRunner::new(cases.clone());
    if let Err(e) = runner.run(&mask_strategy(), |(w, h, a, b)| {
        let a = BinaryMask::from_bits(w, h, a).unwrap();
        let b = BinaryMask::from_bits(w, h, b).unwrap();
        prop_assert_eq!(obj_iou(&a, &b).unwrap(), obj_iou(&b, &a).unwrap());
        prop_assert_eq!(obj_iou(&a, &a).unwrap(), 1.0);
        Ok(())
    }) {
        problems.push(format!("obj_iou: {e}"));
    }

    // Indicator maps: a region and a random subset of it.
    let region_lists = proptest::collection::vec(
        (1usize..10, 1usize..10).prop_flat_map(|(r, c)| {
            let n = r * c;
            (
                Just((r, c)),
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec(any::<bool>(), n),
                0.1f64..10.0,
            )
        }),
        1..5,
    );
    let policy = BinarizePolicy::default();
    let mut runner = TestRunner::new(cases.clone());
    if let Err(e) = runner.run(&region_lists, |items| {
        let mut wide = Vec::new();
        let mut narrow = Vec::new();
        for ((r, c), region, keep, scale) in items {
            let big: Vec<f64> = region.iter().map(|&on| if on { scale } else { 0.0 }).collect();
            let small: Vec<f64> = region
                .iter()
                .zip(&keep)
                .map(|(&on, &k)| if on && k { scale } else { 0.0 })
                .collect();
            wide.push(map(Array2::from_shape_vec((r, c), big).unwrap()));
            narrow.push(map(Array2::from_shape_vec((r, c), small).unwrap()));
        }
        prop_assert!(func_iou(&narrow, &policy).0 >= func_iou(&wide, &policy).0);
        Ok(())
    }) {
        problems.push(format!("func_iou: {e}"));
    }

    let affine = (1usize..12, 1usize..12)
        .prop_flat_map(|(r, c)| {
            (
                Just((r, c)),
                proptest::collection::vec(-1.0f64..1.0, r * c),
                0.1f64..10.0,
                -10.0f64..10.0,
                0.05f64..0.95,
                any::<bool>(),
            )
        });
    let mut runner = TestRunner::new(cases);
    if let Err(e) = runner.run(&affine, |((r, c), v, a, b, lambda, fixed)| {
        let policy = BinarizePolicy {
            mode: if fixed { BinarizeMode::Fixed } else { BinarizeMode::FractionOfMax },
            lambda,
        };
        let m = Array2::from_shape_vec((r, c), v).unwrap();
        let moved = m.mapv(|x| a * x + b);
        prop_assert_eq!(binarize(&map(m), &policy), binarize(&map(moved), &policy));
        Ok(())
    }) {
        problems.push(format!("binarize: {e}"));
    }

    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            "obj_iou symmetry/identity, func_iou shrinkage monotonicity, binarize affine invariance: 1000 cases each".into()
        } else {
            problems.join("; ")
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("f1-regression-table", f1_table),
        ("rbo-oracle", rbo_criterion),
        ("beta-oracle", beta_criterion),
        ("msea-degeneracy", msea_criterion),
        ("arc-suppression", arc_criterion),
        ("end-to-end-golden", golden_criterion),
        ("metric-invariants", metric_criterion),
    ];
    let mut ok = true;
    let mut passed = 0;
    for (name, check) in criteria {
        let outcome = check();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        let note = if !outcome.pass && outcome.expected_failure {
            " [documented source inconsistency]"
        } else {
            ""
        };
        println!("{status} {name}: {}{note}", outcome.detail);
        passed += outcome.pass as usize;
        ok &= outcome.pass || outcome.expected_failure;
    }
    println!("{passed}/{} criteria pass", criteria.len());
    if !ok {
        std::process::exit(1);
    }
}
