//! `dair` command-line front end: dataset generation, training, evaluation,
//! reconstruction figures, controlled generation and the self-test suite.

pub mod render;
pub mod scene_spec;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use dair_core::data::{
    gen_multi_mnist, gen_multi_sprites, read_dataset, read_idx, write_dataset, Dataset, DigitSource, MnistConfig,
    SpritesConfig,
};
use dair_core::model::{EpisodeNoise, Mode, Model, ModelConfig, ObjectSpec};
use dair_core::train::{evaluate, Checkpoint, TrainConfig, Trainer, CKPT_F64, LOG_HEADER};
use dair_core::{selftest, Error, Result, Scalar, Tape};

use render::{grid, Figure, Panel, StepBox};

/// Exit status for a malformed command line.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for a failure while running a well-formed command.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dair", version, about = "Discrete-AIR scene decomposition", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a Multi-Sprites dataset
    GenSprites(GenSprites),
    /// Compose a Multi-MNIST dataset from IDX digit files
    GenMnist(GenMnist),
    /// Train a model
    Train(Train),
    /// Evaluate a checkpoint on a dataset
    Eval(Eval),
    /// Render inputs with detections next to their reconstructions
    Reconstruct(Reconstruct),
    /// Render a scene described by a scene file
    Generate(Generate),
    /// Run the property suite
    Selftest,
}

#[derive(Debug, Args)]
struct GenSprites {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    max_objects: usize,
    #[arg(long, default_value_t = 0.2)]
    scale_min: f64,
    #[arg(long, default_value_t = 0.45)]
    scale_max: f64,
}

#[derive(Debug, Args)]
struct GenMnist {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    height: usize,
    #[arg(long, default_value_t = 50)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    max_digits: usize,
}

#[derive(Debug, Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written periodically and at the end
    #[arg(long)]
    out: PathBuf,
    /// Architecture defaults: sprites or mnist
    #[arg(long, default_value = "sprites")]
    preset: String,
    /// File of key=value lines (model or training keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV metrics log
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from a checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Element width: 32 or 64
    #[arg(long, default_value_t = 32)]
    precision: u32,
}

#[derive(Debug, Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Report file (key=value lines)
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV file to append one summary row to
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct Reconstruct {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of images
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Index of the first image
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Border around each cell in pixels
    #[arg(long, default_value_t = 2)]
    pad: usize,
}

#[derive(Debug, Args)]
struct Generate {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene file: `category attr t_x t_y s omega [k_x k_y]` per line
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Learned-to-true category mapping as printed by eval (comma list);
    /// scene categories are then read as true categories
    #[arg(long)]
    mapping: Option<String>,
}

/// Runs the command line `argv` (program name first) and returns the exit
/// status.
pub fn run<S: AsRef<str>>(argv: &[S]) -> i32 {
    let args: Vec<&str> = argv.iter().map(|s| s.as_ref()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    let _ = e.print();
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::GenSprites(a) => gen_sprites(a),
        Command::GenMnist(a) => gen_mnist(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Generate(a) => generate(a),
        Command::Selftest => run_selftest(),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error[E_USAGE]: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error[{}]: {e}", e.code());
            EXIT_RUNTIME
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = std::result::Result<i32, Failure>;

fn print_resolved(section: &str, entries: &[(&str, String)]) {
    for (k, v) in entries {
        println!("{section}.{k}={v}");
    }
}

fn gen_sprites(a: GenSprites) -> CmdResult {
    let cfg = SpritesConfig {
        height: a.height,
        width: a.width,
        max_objects: a.max_objects,
        scale_min: a.scale_min,
        scale_max: a.scale_max,
    };
    print_resolved(
        "gen",
        &[
            ("count", a.count.to_string()),
            ("seed", a.seed.to_string()),
            ("height", cfg.height.to_string()),
            ("width", cfg.width.to_string()),
            ("max_objects", cfg.max_objects.to_string()),
            ("scale_min", cfg.scale_min.to_string()),
            ("scale_max", cfg.scale_max.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    let data = gen_multi_sprites(a.count, &cfg, a.seed)?;
    write_dataset(&data, &a.out)?;
    Ok(0)
}

fn gen_mnist(a: GenMnist) -> CmdResult {
    let cfg = MnistConfig {
        height: a.height,
        width: a.width,
        max_digits: a.max_digits,
    };
    print_resolved(
        "gen",
        &[
            ("images", a.images.display().to_string()),
            ("labels", a.labels.display().to_string()),
            ("count", a.count.to_string()),
            ("seed", a.seed.to_string()),
            ("height", cfg.height.to_string()),
            ("width", cfg.width.to_string()),
            ("max_digits", cfg.max_digits.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    let source = DigitSource::new(read_idx(&a.images)?, read_idx(&a.labels)?)?;
    let data = gen_multi_mnist(a.count, &source, &cfg, a.seed)?;
    write_dataset(&data, &a.out)?;
    Ok(0)
}

/// Applies one `key=value` to whichever config owns the key.
fn apply_kv(model: &mut ModelConfig, train: &mut TrainConfig, kv: &str) -> std::result::Result<(), Failure> {
    let (k, v) = kv
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("expected KEY=VALUE, got {kv:?}")))?;
    let k = k.trim();
    let r = if ModelConfig::is_key(k) {
        model.set(k, v)
    } else if TrainConfig::is_key(k) {
        train.set(k, v)
    } else {
        return Err(Failure::Usage(format!("unknown configuration key {k:?}")));
    };
    r.map_err(|e| Failure::Usage(e.to_string()))
}

/// Resolves configs with precedence defaults < preset < file < flags.
fn resolve_configs(a: &Train) -> std::result::Result<(ModelConfig, TrainConfig), Failure> {
    let mut model = match a.preset.as_str() {
        "sprites" => ModelConfig::multi_sprites(),
        "mnist" => ModelConfig::multi_mnist(),
        p => return Err(Failure::Usage(format!("unknown preset {p:?} (sprites or mnist)"))),
    };
    let mut train = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)?;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            apply_kv(&mut model, &mut train, line)?;
        }
    }
    for kv in &a.set {
        apply_kv(&mut model, &mut train, kv)?;
    }
    if let Some(s) = a.steps {
        train.total_steps = s;
    }
    if let Some(s) = a.seed {
        train.seed = s;
    }
    model.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok((model, train))
}

fn open_log(path: &Path, append: bool) -> std::result::Result<BufWriter<File>, Failure> {
    let fresh = !append || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = if append {
        OpenOptions::new().create(true).append(true).open(path)?
    } else {
        File::create(path)?
    };
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{LOG_HEADER}")?;
    }
    Ok(w)
}

fn train(a: Train) -> CmdResult {
    if a.precision != 32 && a.precision != 64 {
        return Err(Failure::Usage(format!("precision must be 32 or 64, got {}", a.precision)));
    }
    let data = read_dataset(&a.data)?;
    match &a.resume {
        None => {
            let (model_cfg, train_cfg) = resolve_configs(&a)?;
            if a.precision == 64 {
                let t = Trainer::new(Model::<f64>::new(model_cfg, train_cfg.seed)?, train_cfg)?;
                train_loop(t, &a, &data, false)
            } else {
                let t = Trainer::new(Model::<f32>::new(model_cfg, train_cfg.seed)?, train_cfg)?;
                train_loop(t, &a, &data, false)
            }
        }
        Some(path) => {
            let c = Checkpoint::read(path)?;
            if c.version == CKPT_F64 {
                let t = resume_with::<f64>(&c, &a)?;
                train_loop(t, &a, &data, true)
            } else {
                let t = resume_with::<f32>(&c, &a)?;
                train_loop(t, &a, &data, true)
            }
        }
    }
}

/// Restores a trainer; only training keys may be overridden on resume.
fn resume_with<T: Scalar>(c: &Checkpoint, a: &Train) -> std::result::Result<Trainer<T>, Failure> {
    let mut t = Trainer::<T>::from_checkpoint(c)?;
    let mut model = t.model.config().clone();
    let mut cfg = t.config.clone();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)?;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            apply_kv(&mut model, &mut cfg, line)?;
        }
    }
    for kv in &a.set {
        apply_kv(&mut model, &mut cfg, kv)?;
    }
    if &model != t.model.config() {
        return Err(Failure::Usage("model keys cannot change when resuming".into()));
    }
    if let Some(s) = a.steps {
        cfg.total_steps = s;
    }
    if a.seed.is_some_and(|s| s != cfg.seed) {
        return Err(Failure::Usage("the seed cannot change when resuming".into()));
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    t.config = cfg;
    Ok(t)
}

fn train_loop<T: Scalar>(mut t: Trainer<T>, a: &Train, data: &Dataset, resumed: bool) -> CmdResult {
    print_resolved("model", &t.model.config().entries());
    print_resolved("train", &t.config.entries());
    println!("run.precision={}", T::BYTES * 8);
    println!("run.start_step={}", t.step);
    let mut log = match &a.log {
        Some(p) => Some(open_log(p, resumed)?),
        None => None,
    };
    println!("{LOG_HEADER}");
    t.run(
        data,
        log.as_mut().map(|w| w as &mut dyn Write),
        Some(&a.out),
        |r| println!("{}", r.csv_row()),
    )?;
    if t.step == 0 || !a.out.exists() {
        t.save(&a.out)?;
    }
    Ok(0)
}

/// A trainer restored at its stored precision.
enum Loaded {
    F32(Trainer<f32>),
    F64(Trainer<f64>),
}

fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let c = Checkpoint::read(path)?;
    Ok(if c.version == CKPT_F64 {
        Loaded::F64(Trainer::from_checkpoint(&c)?)
    } else {
        Loaded::F32(Trainer::from_checkpoint(&c)?)
    })
}

fn eval(a: Eval) -> CmdResult {
    if a.batch_size == 0 {
        return Err(Failure::Usage("batch size must be positive".into()));
    }
    print_resolved(
        "eval",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("data", a.data.display().to_string()),
            ("batch_size", a.batch_size.to_string()),
        ],
    );
    let data = read_dataset(&a.data)?;
    let report = match load_checkpoint(&a.checkpoint)? {
        Loaded::F32(t) => evaluate(&t.model, &data, a.batch_size)?,
        Loaded::F64(t) => evaluate(&t.model, &data, a.batch_size)?,
    };
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = &a.out {
        std::fs::write(p, &text)?;
    }
    if let Some(p) = &a.csv {
        let fresh = std::fs::metadata(p).map(|m| m.len() == 0).unwrap_or(true);
        let mut f = OpenOptions::new().create(true).append(true).open(p)?;
        if fresh {
            writeln!(f, "{}", dair_core::metrics::MetricsReport::CSV_HEADER)?;
        }
        writeln!(f, "{}", report.csv_row())?;
    }
    Ok(0)
}

/// Input panels (with per-step boxes and count) and reconstruction panels
/// for the images at `indices`.
fn reconstruction_panels<T: Scalar>(model: &Model<T>, data: &Dataset, indices: &[usize]) -> Result<[Vec<Panel>; 2]> {
    let cfg = model.config();
    let x = data.batch::<T>(indices)?;
    let tape = Tape::new();
    let p = model.bind(&tape, false);
    let noise = EpisodeNoise::zeros(cfg, indices.len());
    let trace = model.run_episode(&p, tape.constant(x.clone()), &noise, T::one(), Mode::Eval, None)?;
    let y = trace.reconstruction().value();
    let detections = trace.detections(cfg);
    let hw = cfg.canvas_pixels();
    let mut inputs = Vec::new();
    let mut recons = Vec::new();
    for (b, dets) in detections.iter().enumerate() {
        let to_f64 = |t: &dair_core::Tensor<T>| t.data()[b * hw..(b + 1) * hw].iter().map(|v| v.as_f64()).collect();
        let boxes = dets
            .iter()
            .map(|d| {
                StepBox::around(
                    d.step,
                    d.center_x.as_f64(),
                    d.center_y.as_f64(),
                    d.extent.0.as_f64(),
                    d.extent.1.as_f64(),
                )
            })
            .collect();
        inputs.push(Panel {
            image: to_f64(&x),
            boxes,
            count: Some(dets.len()),
        });
        recons.push(Panel {
            image: to_f64(&y),
            boxes: Vec::new(),
            count: None,
        });
    }
    Ok([inputs, recons])
}

fn reconstruct(a: Reconstruct) -> CmdResult {
    print_resolved(
        "reconstruct",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("data", a.data.display().to_string()),
            ("count", a.count.to_string()),
            ("start", a.start.to_string()),
            ("pad", a.pad.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    if a.count == 0 {
        return Err(Failure::Usage("count must be positive".into()));
    }
    let data = read_dataset(&a.data)?;
    if a.start + a.count > data.len() {
        return Err(Failure::Usage(format!(
            "images {}..{} requested from a dataset of {}",
            a.start,
            a.start + a.count,
            data.len()
        )));
    }
    let idx: Vec<usize> = (a.start..a.start + a.count).collect();
    let (h, w) = (data.header.height as usize, data.header.width as usize);
    let rows = match load_checkpoint(&a.checkpoint)? {
        Loaded::F32(t) => reconstruction_panels(&t.model, &data, &idx)?,
        Loaded::F64(t) => reconstruction_panels(&t.model, &data, &idx)?,
    };
    grid(&rows, w, h, a.pad).write_png(&a.out)?;
    Ok(0)
}

/// Parses an eval mapping (learned id → true id) and inverts it.
fn invert_mapping(text: &str) -> std::result::Result<Vec<usize>, Failure> {
    let forward: Vec<usize> = text
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("bad mapping {text:?}")))?;
    let mut inverse = vec![usize::MAX; forward.len()];
    for (learned, &truth) in forward.iter().enumerate() {
        if truth >= forward.len() || inverse[truth] != usize::MAX {
            return Err(Failure::Usage(format!("mapping {text:?} is not a permutation")));
        }
        inverse[truth] = learned;
    }
    Ok(inverse)
}

fn generate_with<T: Scalar>(model: &Model<T>, scene: &[scene_spec::SpecLine]) -> Result<Vec<f64>> {
    let objects: Vec<ObjectSpec<T>> = scene
        .iter()
        .map(|l| ObjectSpec {
            category: l.category,
            attr: l.attr.iter().map(|&v| T::lit(v)).collect(),
            pose: l.pose.cast(),
        })
        .collect();
    Ok(model.generate_scene(&objects)?.data().iter().map(|v| v.as_f64()).collect())
}

fn generate(a: Generate) -> CmdResult {
    print_resolved(
        "generate",
        &[
            ("checkpoint", a.checkpoint.display().to_string()),
            ("spec", a.spec.display().to_string()),
            ("mapping", a.mapping.clone().unwrap_or_else(|| "identity".into())),
            ("out", a.out.display().to_string()),
        ],
    );
    let mut scene = scene_spec::parse_scene(&std::fs::read_to_string(&a.spec)?)?;
    if let Some(m) = &a.mapping {
        let inverse = invert_mapping(m)?;
        for (i, l) in scene.iter_mut().enumerate() {
            l.category = *inverse.get(l.category).ok_or_else(|| {
                Failure::Runtime(Error::InvalidArgument(format!(
                    "object {i}: category {} outside the mapping",
                    l.category
                )))
            })?;
        }
    }
    let loaded = load_checkpoint(&a.checkpoint)?;
    let (image, h, w) = match &loaded {
        Loaded::F32(t) => (generate_with(&t.model, &scene)?, t.model.config().canvas_h, t.model.config().canvas_w),
        Loaded::F64(t) => (generate_with(&t.model, &scene)?, t.model.config().canvas_h, t.model.config().canvas_w),
    };
    let mut fig = Figure::new(w, h);
    fig.paste(&image, w, h, 0, 0);
    fig.write_png(&a.out)?;
    Ok(0)
}

fn run_selftest() -> CmdResult {
    let results = selftest::run_all();
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    println!("{} of {} checks passed", results.len() - failed, results.len());
    Ok(if failed == 0 { 0 } else { EXIT_RUNTIME })
}
