use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use lens_attrib::arc::Explainer;
use lens_attrib::metrics::{evaluate_tokens, EvalReport, TokenRecord};
use lens_attrib::render::{render_heatmap, render_overlay, Colormap};
use lens_attrib::toy::{self, build_toy_model, ToyModelSpec};
use lens_attrib::trace::{TokenRole, MANIFEST_FILE};
use lens_attrib::{
    directory_digest, load_map, load_masks, load_trace, save_map, AttributionMap, EngineConfig, Error,
    FusionMode, MaskSet, TraceBundle,
};

#[derive(Debug, Parser)]
#[command(name = "lens-attrib", version, about = "Logit-lens visual attribution for multimodal model traces")]
struct Cli {
    /// Engine configuration (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: one per logical core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write attribution maps and heatmaps for selected generated tokens.
    Attribute(AttributeArgs),
    /// Score attribution maps against ground-truth masks.
    Evaluate(EvaluateArgs),
    /// Overlay a map blob on an image.
    Render(RenderArgs),
    /// Generate bundles from the built-in toy model.
    ToyTrace(ToyArgs),
    /// Check a bundle (and its masks) for format errors.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FusionArg {
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ColormapArg {
    Jet,
    Gray,
}

#[derive(Debug, Args)]
struct EngineArgs {
    /// Scale factors, comma separated.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Ranking depth for relevance scoring.
    #[arg(long)]
    k: Option<usize>,
    /// Rank-biased overlap persistence.
    #[arg(long)]
    rbo_p: Option<f64>,
    /// Skip interference suppression and use the fused map.
    #[arg(long)]
    no_arc: bool,
    /// Use only the stored scale nearest 1.0.
    #[arg(long)]
    no_msea: bool,
    #[arg(long)]
    binarize_lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct AttributeArgs {
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Token position, token text, or `all-generated`.
    #[arg(long, default_value = "all-generated")]
    token: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// A bundle, a directory of bundles, or a file listing bundle paths.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Mask directory for a single bundle (default: `<bundle>/masks`).
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Report failing bundles and continue; exits with 3 if any failed.
    #[arg(long)]
    skip_bad: bool,
    #[arg(long)]
    no_timestamp: bool,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    colormap: Option<ColormapArg>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.75, 1.0])]
    scales: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    image_id: u64,
    /// Number of bundles; more than one writes `img_NNN` subdirectories.
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Space-separated prompt words.
    #[arg(long, default_value = "describe this image")]
    prompt: String,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Mask directory (default: `<trace>/masks` when present).
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Partial(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LENS_ATTRIB_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Partial(n)) => {
            eprintln!("{n} bundle(s) failed and were skipped");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let mut config = load_config(cli.config.as_deref())?;
    if cli.jobs.is_some() {
        config.jobs = cli.jobs;
    }
    if let Some(n) = config.jobs {
        if n == 0 {
            return Err(Failure::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Attribute(args) => attribute(args, config),
        Command::Evaluate(args) => evaluate(args, config),
        Command::Render(args) => render(args, config),
        Command::ToyTrace(args) => toy_trace(args),
        Command::Validate(args) => validate(args),
    }
}

fn load_config(path: Option<&Path>) -> CliResult<EngineConfig> {
    match path {
        None => {
            info!("no config file given; using defaults");
            Ok(EngineConfig::default())
        }
        Some(p) if !p.exists() => {
            warn!("config file {} not found; using defaults", p.display());
            Ok(EngineConfig::default())
        }
        Some(p) => EngineConfig::load(p).map_err(|e| Failure::Usage(e.to_string())),
    }
}

fn apply_engine_args(config: &mut EngineConfig, args: &EngineArgs) -> CliResult {
    if let Some(s) = &args.scales {
        config.scales.scale_factors = s.clone();
    }
    if let Some(f) = args.fusion {
        config.scales.fusion = match f {
            FusionArg::Mean => FusionMode::Mean,
            FusionArg::Max => FusionMode::Max,
        };
    }
    if let Some(k) = args.k {
        config.arc.k = k;
    }
    if let Some(p) = args.rbo_p {
        config.arc.rbo_p = p;
    }
    if args.no_arc {
        config.use_arc = false;
    }
    if args.no_msea {
        config.use_msea = false;
    }
    if let Some(l) = args.binarize_lambda {
        config.binarize.lambda = l;
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))
}

fn required(path: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    path.or_else(|| fallback.clone())
        .ok_or_else(|| Failure::Usage(format!("{flag} is required (or set it under `paths` in the config)")))
}

/// Resolves a selector to token positions.
fn select_tokens(bundle: &TraceBundle, selector: &str) -> CliResult<Vec<usize>> {
    let tokens = bundle.tokens();
    if selector == "all-generated" {
        return Ok(bundle.generated_positions().collect());
    }
    let position = match selector.parse::<usize>() {
        Ok(j) if j < tokens.len() => j,
        Ok(j) => {
            return Err(Failure::Usage(format!(
                "token position {j} out of range ({} tokens)",
                tokens.len()
            )))
        }
        Err(_) => {
            let matches: Vec<usize> = (0..tokens.len()).filter(|&j| tokens[j].text == selector).collect();
            match matches
                .iter()
                .copied()
                .find(|&j| tokens[j].role == TokenRole::Generated)
                .or(matches.first().copied())
            {
                Some(j) => j,
                None => return Err(Failure::Usage(format!("no token matches `{selector}`"))),
            }
        }
    };
    if tokens[position].role != TokenRole::Generated {
        return Err(Failure::Usage(Error::PromptTarget { position }.to_string()));
    }
    Ok(vec![position])
}

#[derive(Debug, Serialize)]
struct TokenSummary {
    position: usize,
    token: String,
    map: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_id: Option<u32>,
    context_tokens: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    relevance: Vec<f64>,
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn mean_min_max(v: &[f64]) -> Option<(f64, f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((mean, min, max))
}

fn attribute(args: AttributeArgs, mut config: EngineConfig) -> CliResult {
    apply_engine_args(&mut config, &args.engine)?;
    let trace = required(args.trace, &config.paths.trace, "--trace")?;
    let out = required(args.out, &config.paths.out, "--out")?;
    let bundle = load_trace(&trace)?;
    let positions = select_tokens(&bundle, &args.token)?;
    let scales = config.scales_for(&bundle);
    let explainer = Explainer::new(&bundle, &config.arc, &scales)?;
    let background = image::open(trace.join(toy::IMAGE_FILE)).ok().map(|i| i.to_rgb8());

    let results: Vec<(usize, AttributionMap, Option<lens_attrib::Explanation>, f64)> = positions
        .par_iter()
        .map(|&j| {
            let start = Instant::now();
            let (map, explanation) = if config.use_arc {
                let e = explainer.explain(j)?;
                (e.refined.clone(), Some(e))
            } else {
                (explainer.fused(j)?.clone(), None)
            };
            Ok((j, map, explanation, start.elapsed().as_secs_f64() * 1e3))
        })
        .collect::<Result<_, Error>>()?;

    fs::create_dir_all(&out).map_err(|e| Failure::Data(format!("cannot create {}: {e}", out.display())))?;
    let mut summary = Vec::with_capacity(results.len());
    for (j, map, explanation, ms) in results {
        let tok = &bundle.tokens()[j];
        let stem = format!("token_{j:03}");
        save_map(&map, out.join(format!("{stem}.f32")))?;
        let png = match &background {
            Some(img) => render_overlay(&map, img, &config.render)?,
            None => render_heatmap(&map, &config.render)?,
        };
        let png_path = out.join(format!("{stem}.png"));
        png.save(&png_path)
            .map_err(|e| Failure::Data(format!("cannot write {}: {e}", png_path.display())))?;

        let (beta, base_id, context, relevance) = match &explanation {
            Some(e) => (Some(e.beta), e.base_id, e.context_positions.len(), e.relevance.relevance.clone()),
            None => (None, None, 0, Vec::new()),
        };
        let stats = match mean_min_max(&relevance) {
            Some((mean, min, max)) => format!("relevance mean {mean:.3} min {min:.3} max {max:.3}"),
            None => "no context".to_string(),
        };
        let beta_text = beta.map_or("-".to_string(), |b| format!("{b:.4}"));
        println!("{j:>4} {:<12} beta {beta_text:<8} {stats}  ({ms:.1} ms)", tok.text);
        summary.push(TokenSummary {
            position: j,
            token: tok.text.clone(),
            map: format!("{stem}.f32"),
            beta,
            base_id,
            context_tokens: context,
            relevance,
        });
    }
    write_json(&out.join("summary.json"), &summary)
}

/// Bundle directories named by `path`, in a stable order.
fn resolve_bundles(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.join(MANIFEST_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if path.is_dir() {
        let mut dirs: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        if dirs.is_empty() {
            return Err(Failure::Data(format!("{} contains no bundles", path.display())));
        }
        return Ok(dirs);
    }
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| base.join(l))
            .collect());
    }
    Err(Failure::Data(format!("{} does not exist", path.display())))
}

fn label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn evaluate_bundle(dir: &Path, masks: Option<&Path>, config: &EngineConfig) -> Result<Vec<TokenRecord>, Error> {
    let bundle = load_trace(dir)?;
    let (w, h) = bundle.image_dims();
    let mask_dir = masks.map_or_else(|| dir.join(toy::MASK_DIR), Path::to_path_buf);
    let masks: MaskSet = load_masks(&mask_dir, w, h)?;
    bundle.validate_masks(&masks)?;
    let scales = config.scales_for(&bundle);
    let explainer = Explainer::new(&bundle, &config.arc, &scales)?;
    evaluate_tokens(&explainer, &masks, &config.binarize, config.use_arc, &label(dir))
}

fn evaluate(args: EvaluateArgs, mut config: EngineConfig) -> CliResult {
    apply_engine_args(&mut config, &args.engine)?;
    let trace = required(args.trace, &config.paths.trace, "--trace")?;
    let bundles = resolve_bundles(&trace)?;
    let masks = args.masks.or(config.paths.masks.clone());
    if masks.is_some() && bundles.len() > 1 {
        return Err(Failure::Usage("--masks applies to a single bundle only".into()));
    }
    let outcomes: Vec<Result<Vec<TokenRecord>, Error>> = bundles
        .par_iter()
        .map(|dir| evaluate_bundle(dir, masks.as_deref(), &config))
        .collect();

    let mut records = Vec::new();
    let mut failed = 0;
    for (dir, outcome) in bundles.iter().zip(outcomes) {
        match outcome {
            Ok(r) => records.extend(r),
            Err(e) if args.skip_bad => {
                eprintln!("skipping {}: {e}", dir.display());
                failed += 1;
            }
            Err(e) => return Err(Failure::Data(format!("{}: {e}", dir.display()))),
        }
    }
    if failed == bundles.len() {
        return Err(Failure::Data("every bundle failed".into()));
    }
    let mut report = EvalReport::from_records(records, config.obj_iou_mode);
    if !args.no_timestamp {
        report.generated_at_unix = SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs());
    }
    for w in &report.warnings {
        warn!("{w}");
    }
    write_json(&args.report, &report)?;
    print!("{}", report.table());
    println!(
        "{} object tokens, {} function tokens, {} bundle(s)",
        report.object_tokens,
        report.function_tokens,
        bundles.len() - failed
    );
    if failed > 0 {
        return Err(Failure::Partial(failed));
    }
    Ok(())
}

fn render(args: RenderArgs, mut config: EngineConfig) -> CliResult {
    if let Some(c) = args.colormap {
        config.render.colormap = match c {
            ColormapArg::Jet => Colormap::Jet,
            ColormapArg::Gray => Colormap::Gray,
        };
    }
    if let Some(a) = args.alpha {
        config.render.alpha = a;
    }
    config.render.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let img = image::open(&args.image)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", args.image.display())))?
        .to_rgb8();
    let map = load_map(&args.map, Some(img.dimensions()))?;
    let out = render_overlay(&map, &img, &config.render)?;
    out.save(&args.out)
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", args.out.display())))
}

fn toy_trace(args: ToyArgs) -> CliResult {
    let spec = ToyModelSpec {
        seed: args.seed,
        ..ToyModelSpec::default()
    };
    let model = build_toy_model(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
    let prompt = args
        .prompt
        .split_whitespace()
        .map(|w| toy::word_id(w).ok_or_else(|| Failure::Usage(format!("`{w}` is not in the toy vocabulary"))))
        .collect::<CliResult<Vec<u32>>>()?;
    if args.count == 0 {
        return Err(Failure::Usage("--count must be >= 1".into()));
    }
    for id in args.image_id..args.image_id + args.count {
        let dir = if args.count == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("img_{id:03}"))
        };
        let run = model
            .run_forward(id, &prompt, &args.scales)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        run.save(&dir)?;
        println!("{} {}", directory_digest(&dir)?, dir.display());
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> CliResult {
    let bundle = load_trace(&args.trace)?;
    let masks = args.masks.or_else(|| {
        let d = args.trace.join(toy::MASK_DIR);
        d.is_dir().then_some(d)
    });
    let mut mask_note = String::new();
    if let Some(dir) = masks {
        let (w, h) = bundle.image_dims();
        let set = load_masks(&dir, w, h)?;
        bundle.validate_masks(&set)?;
        mask_note = format!(", {} masks", set.len());
    }
    println!(
        "ok: {} tokens, {} scales{mask_note}, digest {}",
        bundle.tokens().len(),
        bundle.manifest.scales.len(),
        directory_digest(&args.trace)?
    );
    Ok(())
}
