mod svg;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use sketchgnn::evaluation::{evaluate_checkpoint, sweep};
use sketchgnn::model::{full_model_gradient_check, Checkpoint};
use sketchgnn::numerics::GradCheckOptions;
use sketchgnn::sketch::{
    map_labels_back, normalize_canvas, read_sketches, write_sketches, DatasetSplit, Format, LabelMap, Sketch,
};
use sketchgnn::synth::{densify, make_toy_dataset, trace_strokes, EdgeMap, ToyKind};
use sketchgnn::training::{perturb, train, write_history, PerturbationSpec, TrainConfig};

const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "sketchgnn", version, about = "Semantic segmentation of vector sketches with a two-branch GNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a per-category model and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Score a checkpoint on labeled sketches, optionally under perturbations.
    Eval(EvalArgs),
    /// Label every point of each input sketch.
    Infer(InferArgs),
    /// Apply perturbations to sketches.
    Perturb(PerturbArgs),
    /// Generate toy datasets or trace strokes from an edge map.
    Synth(SynthArgs),
    /// Draw one sketch as SVG.
    Render(RenderArgs),
    /// Finite-difference check of the full model gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Sketch NDJSON file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "native", value_parser = ["native", "quickdraw"])]
    format: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Flat `key = value` training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled validation sketches for best-epoch selection.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Class names as `{"category": .., "classes": [..]}`.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// History path; defaults to the checkpoint path with `.history.jsonl`.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Augmentation, e.g. `kind=point_noise,sigma=10`. Repeatable.
    #[arg(long, value_parser = parse_spec)]
    perturb: Vec<PerturbationSpec>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Report path. One report, or an array when sweeping.
    #[arg(long)]
    out: PathBuf,
    /// Perturbation to evaluate under. Repeat for a sweep.
    #[arg(long, value_parser = parse_spec)]
    perturb: Vec<PerturbationSpec>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled sketch NDJSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Applied in order. Repeatable.
    #[arg(long, required = true, value_parser = parse_spec)]
    perturb: Vec<PerturbationSpec>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct SynthSource {
    /// Toy shape: lollipop, two_bars or cross.
    #[arg(long, value_parser = parse_toy)]
    toy: Option<ToyKind>,
    /// Edge-map text grid to trace.
    #[arg(long)]
    edge_map: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    source: SynthSource,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Insert points so neighbors are at most this many pixels apart.
    #[arg(long)]
    densify: Option<f64>,
    /// Category name for traced sketches.
    #[arg(long, default_value = "traced")]
    category: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RenderArgs {
    /// Sketch NDJSON file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Which sketch of the file to draw.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value = "native", value_parser = ["native", "quickdraw"])]
    format: String,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Points in the random two-stroke sketch.
    #[arg(long, default_value_t = 32)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Most parameter coordinates to perturb.
    #[arg(long, default_value_t = 400)]
    max_coords: usize,
    /// Optional JSON result file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_spec(s: &str) -> Result<PerturbationSpec, String> {
    s.parse().map_err(|e: sketchgnn::Error| e.to_string())
}

fn parse_toy(s: &str) -> Result<ToyKind, String> {
    s.parse().map_err(|e: sketchgnn::Error| e.to_string())
}

enum Failure {
    Usage(String),
    Pipeline(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Pipeline(e)
    }
}

type Outcome<T> = Result<T, Failure>;

fn existing(path: &Path) -> Outcome<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::Usage(format!("no such file: {}", path.display())))
    }
}

fn read_data(path: &Path, format: &str) -> Outcome<Vec<Sketch>> {
    let format: Format = format.parse().map_err(|e: sketchgnn::Error| Failure::Usage(e.to_string()))?;
    let file = File::open(existing(path)?).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let sketches = read_sketches(BufReader::new(file), format)
        .with_context(|| format!("sketch_io: reading {}", path.display()))?;
    if sketches.is_empty() {
        return Err(anyhow::anyhow!("sketch_io: {} contains no sketches", path.display()).into());
    }
    Ok(sketches)
}

fn load_checkpoint(path: &Path) -> Outcome<Checkpoint> {
    Ok(Checkpoint::load(existing(path)?).with_context(|| format!("model: loading checkpoint {}", path.display()))?)
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cli: writing {}", path.display()))
}

fn write_ndjson(path: &Path, sketches: &[Sketch]) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("cli: creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write_sketches(&mut w, sketches).with_context(|| format!("sketch_io: writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn run_train(args: TrainArgs) -> Outcome<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(existing(path)?).map_err(|e| Failure::Usage(e.to_string()))?;
            TrainConfig::parse(&text).with_context(|| format!("training: config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.n_points {
        config.n_points = n;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    config.augmentation.extend(args.perturb);

    let train_set = read_data(&args.data.data, &args.data.format)?;
    let validation = match &args.validation {
        Some(path) => read_data(path, &args.data.format)?,
        None => Vec::new(),
    };
    let label_map: Option<LabelMap> = match &args.labels {
        Some(path) => {
            let text = std::fs::read_to_string(existing(path)?).map_err(|e| Failure::Usage(e.to_string()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("sketch_io: label map {}", path.display()))?)
        }
        None => None,
    };
    let classes = match &label_map {
        Some(m) => m.num_classes(),
        None => train_set.iter().chain(&validation).map(Sketch::class_bound).max().unwrap_or(0).max(2),
    };

    let split = DatasetSplit { train: train_set, validation, test: Vec::new(), seed: config.seed };
    let mut outcome = train(&split, &config.model_config(classes), &config).context("training")?;
    if let Some(m) = label_map {
        outcome.checkpoint.meta.category = m.category;
        outcome.checkpoint.meta.classes = m.classes;
    }
    outcome.checkpoint.save(&args.out).with_context(|| format!("model: saving checkpoint {}", args.out.display()))?;

    let history_path = args.history.unwrap_or_else(|| args.out.with_extension("history.jsonl"));
    let file = File::create(&history_path).with_context(|| format!("cli: creating {}", history_path.display()))?;
    write_history(BufWriter::new(file), &outcome.history).context("training: writing history")?;

    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} epochs, final train loss {:.6}, best epoch {}, checkpoint {}",
            outcome.history.len(),
            last.train_loss,
            outcome.checkpoint.meta.best_epoch.unwrap_or(last.epoch),
            outcome.checkpoint.id()
        );
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Outcome<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = read_data(&args.data.data, &args.data.format)?;
    let json = if args.perturb.is_empty() {
        let report = evaluate_checkpoint(&data, &ckpt, None, args.seed).context("evaluation")?;
        println!("clean: P {:.4} C {:.4}", report.p_metric, report.c_metric);
        serde_json::to_string_pretty(&report).context("evaluation: report")?
    } else {
        let reports = sweep(&data, &ckpt, &args.perturb, args.seed).context("evaluation")?;
        for (spec, r) in args.perturb.iter().zip(&reports) {
            println!("{spec}: P {:.4} C {:.4}", r.p_metric, r.c_metric);
        }
        serde_json::to_string_pretty(&reports).context("evaluation: report")?
    };
    write_file(&args.out, &json)?;
    Ok(())
}

fn run_infer(args: InferArgs) -> Outcome<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = read_data(&args.data.data, &args.data.format)?;
    let model = ckpt.model().context("model")?;
    let preprocess = ckpt.preprocess();
    let labeled = data
        .iter()
        .enumerate()
        .map(|(i, s)| -> anyhow::Result<Sketch> {
            let sampled = preprocess.apply(s).with_context(|| format!("sketch_io: preprocessing sketch {i}"))?;
            let prediction = model.predict(&sampled).with_context(|| format!("model: sketch {i}"))?;
            let mapped = map_labels_back(&normalize_canvas(s), &sampled, &prediction.labels)
                .with_context(|| format!("sketch_io: map-back for sketch {i}"))?;
            Ok(s.with_labels(&mapped.labels().expect("mapped sketch is labeled"))?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    write_ndjson(&args.out, &labeled)?;
    println!("labeled {} sketches", labeled.len());
    Ok(())
}

fn run_perturb(args: PerturbArgs) -> Outcome<()> {
    let data = read_data(&args.data.data, &args.data.format)?;
    let out = data
        .iter()
        .enumerate()
        .map(|(i, s)| -> anyhow::Result<Sketch> {
            let mut s = s.clone();
            for (j, spec) in args.perturb.iter().enumerate() {
                let seed = args.seed.wrapping_add((i * args.perturb.len() + j) as u64);
                s = perturb(&s, spec, seed).with_context(|| format!("training: perturbing sketch {i} with {spec}"))?;
            }
            Ok(s)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    write_ndjson(&args.out, &out)?;
    Ok(())
}

fn run_synth(args: SynthArgs) -> Outcome<()> {
    let mut sketches = match (args.source.toy, &args.source.edge_map) {
        (Some(kind), _) => make_toy_dataset(kind, args.count, args.seed).context("synth")?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(existing(path)?).map_err(|e| Failure::Usage(e.to_string()))?;
            let map = EdgeMap::parse(&text).with_context(|| format!("synth: edge map {}", path.display()))?;
            let mut s = trace_strokes(&map, args.seed).context("synth: tracing")?;
            s.category = args.category.clone();
            vec![s]
        }
        (None, None) => return Err(Failure::Usage("synth needs --toy or --edge-map".into())),
    };
    if let Some(spacing) = args.densify {
        sketches = sketches.iter().map(|s| densify(s, spacing)).collect::<Result<_, _>>().context("synth")?;
    }
    write_ndjson(&args.out, &sketches)?;
    println!("wrote {} sketches", sketches.len());
    Ok(())
}

fn run_render(args: RenderArgs) -> Outcome<()> {
    let data = read_data(&args.input, &args.format)?;
    let Some(sketch) = data.get(args.index) else {
        return Err(Failure::Usage(format!("--index {} but the file has {} sketches", args.index, data.len())));
    };
    write_file(&args.out, &svg::render_svg(sketch))?;
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Outcome<()> {
    let opts = GradCheckOptions { max_coords: args.max_coords, seed: args.seed, ..GradCheckOptions::default() };
    let err = full_model_gradient_check(args.n, args.seed, opts).context("numerics: gradient check")?;
    let passed = err < GRADCHECK_TOL;
    println!("max relative error {err:.3e} ({})", if passed { "ok" } else { "too large" });
    if let Some(path) = &args.out {
        let json = serde_json::json!({ "n": args.n, "seed": args.seed, "max_rel_error": err, "passed": passed });
        write_file(path, &json.to_string())?;
    }
    if !passed {
        return Err(anyhow::anyhow!("numerics: max relative error {err:.3e} exceeds {GRADCHECK_TOL:e}").into());
    }
    Ok(())
}

fn configure_threads() -> Outcome<()> {
    let Ok(value) = std::env::var("SKETCHGNN_THREADS") else { return Ok(()) };
    let threads: usize = match value.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => return Err(Failure::Usage(format!("SKETCHGNN_THREADS must be a positive integer, got '{value}'"))),
    };
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| anyhow::anyhow!("cli: {e}"))?;
    Ok(())
}

fn run(cli: Cli) -> Outcome<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Infer(a) => run_infer(a),
        Command::Perturb(a) => run_perturb(a),
        Command::Synth(a) => run_synth(a),
        Command::Render(a) => run_render(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
