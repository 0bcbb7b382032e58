//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Criteria 1, 2 and 5 always run and decide the exit status. The long
//! training criteria 3, 4 and 6 report on cached checkpoints under
//! `$DAIR_ACCEPTANCE_DIR` (default: the cargo target tmp dir) and only
//! train when `--train` is given, e.g.
//!
//! ```text
//! cargo test --release -p dair-core --test acceptance -- --train 3 6
//! DAIR_MNIST_DIR=/path/to/idx cargo test --release -p dair-core --test acceptance -- --train 4
//! ```
//!
//! Training resumes from the newest checkpoint, so interrupted runs continue.

mod common;

use dair_core::attention::{to_pixels, AffinePose};
use dair_core::data::{gen_multi_mnist, gen_multi_sprites, read_dataset, read_idx, write_dataset, Dataset, DigitSource, MnistConfig, SpritesConfig};
use dair_core::metrics::{correspondence_rate, table_from_pairs, MetricsReport};
use dair_core::model::{EpisodeNoise, Model, ModelConfig, ObjectSpec};
use dair_core::train::{evaluate, Trainer, LOG_HEADER};
use dair_core::{selftest, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

const TRAIN_SEED: u64 = 1;
const SPRITES_DATA_SEED: u64 = 2019;
const MNIST_DATA_SEED: u64 = 2020;
const TEST_SEED_OFFSET: u64 = 1000;
const TEST_IMAGES: usize = 1000;
const LONG_STEPS: u64 = 30_000;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Options {
    train: bool,
    only: Vec<usize>,
    dir: PathBuf,
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let opts = Options {
        train: args.iter().any(|a| a == "--train"),
        only: args.iter().filter_map(|a| a.parse().ok()).collect(),
        dir: std::env::var_os("DAIR_ACCEPTANCE_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")),
    };
    let criteria: [(usize, &str, fn(&Options) -> Outcome, bool); 6] = [
        (1, "selftest suite", criterion_selftest, true),
        (2, "correspondence oracle", criterion_metric_oracle, true),
        (3, "multi-sprites desk run", criterion_sprites, false),
        (4, "multi-mnist smoke run", criterion_mnist, false),
        (5, "elbo smoke test", criterion_elbo, true),
        (6, "controlled generation", criterion_generation, false),
    ];
    let mut gate_failed = false;
    for (n, name, f, gating) in criteria {
        if !opts.only.is_empty() && !opts.only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (tag, detail) = match f(&opts) {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                gate_failed |= gating;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} criterion {n} ({name}): {detail} [{:.1}s]", start.elapsed().as_secs_f64());
    }
    if gate_failed {
        std::process::exit(1);
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn criterion_selftest(_: &Options) -> Outcome {
    let results = selftest::run_all();
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| format!("{}: {}", r.name, r.detail)).collect();
    let passed = results.len() - failed.len();
    verdict(failed.is_empty(), format!("{passed} of {} checks passed {}", results.len(), failed.join("; ")))
}

fn criterion_metric_oracle(_: &Options) -> Outcome {
    let pairs = [(1, 4), (4, 0), (2, 1), (2, 1), (3, 5)];
    let example = table_from_pairs(&pairs, 6).and_then(|t| correspondence_rate(&t, 5));
    let Ok((worked, _)) = example else {
        return Outcome::Fail(format!("worked example errored: {example:?}"));
    };
    let mut ok = worked == 1.0;
    let mut detail = format!("worked example {worked}");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for k in [3usize, 10] {
        let n = 100_000;
        let pairs: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..k), rng.random_range(0..k))).collect();
        let (r, _) = correspondence_rate(&table_from_pairs(&pairs, k).unwrap(), n as u64).unwrap();
        ok &= (r - 1.0 / k as f64).abs() <= 0.02;
        detail += &format!(", random k={k} {r:.4}");
    }
    verdict(ok, detail)
}

fn criterion_elbo(_: &Options) -> Outcome {
    // frozen-noise gradient of the single-step 16×16 bound
    let cfg = common::tiny_config();
    let mut m = Model::<f64>::new(cfg.clone(), 11).unwrap();
    common::jitter(&mut m, 0.1, 11);
    let x = common::blob_images(2, 16, 16, 12);
    let noise = EpisodeNoise::sample(&cfg, 2, 3, 4);
    let grad_err = common::elbo_grad_error(&m, &x, &noise, 0.7, 3);

    // 200 steps on 64 copies of one default-sized scene
    let data = gen_multi_sprites(20, &SpritesConfig::default(), 3).unwrap();
    let idx = data.records.iter().position(|r| r.objects.len() == 2).unwrap();
    let x: Tensor<f32> = data.batch(&[idx; 64]).unwrap();
    let model = Model::<f32>::new(ModelConfig::multi_sprites(), TRAIN_SEED).unwrap();
    let mut t = Trainer::new(model, Default::default()).unwrap();
    let first = t.step_on(&x).unwrap().terms.total;
    let mut last = first;
    for _ in 1..200 {
        last = t.step_on(&x).unwrap().terms.total;
    }
    let reduction = (first - last) / first.abs();
    verdict(
        grad_err <= 1e-3 && reduction >= 0.3,
        format!("grad rel error {grad_err:.2e}, negative bound {first:.1} -> {last:.1} ({:.1}% lower)", 100.0 * reduction),
    )
}

fn sprites_data() -> (Dataset, Dataset) {
    let cfg = SpritesConfig::default();
    (
        gen_multi_sprites(20_000, &cfg, SPRITES_DATA_SEED).unwrap(),
        gen_multi_sprites(TEST_IMAGES, &cfg, SPRITES_DATA_SEED + TEST_SEED_OFFSET).unwrap(),
    )
}

fn mnist_data() -> Result<(Dataset, Dataset), String> {
    let dir = std::env::var_os("DAIR_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let load = |f: &str| read_idx(dir.join(f)).map_err(|e| format!("{}: {e}", dir.join(f).display()));
    let source = DigitSource::new(load("images.idx")?, load("labels.idx")?).map_err(|e| e.to_string())?;
    let cfg = MnistConfig::default();
    Ok((
        gen_multi_mnist(10_000, &source, &cfg, MNIST_DATA_SEED).map_err(|e| e.to_string())?,
        gen_multi_mnist(TEST_IMAGES, &source, &cfg, MNIST_DATA_SEED + TEST_SEED_OFFSET).map_err(|e| e.to_string())?,
    ))
}

/// Finished model of a long run, training or resuming it when allowed.
fn long_run(
    opts: &Options,
    name: &str,
    config: ModelConfig,
    data: impl FnOnce() -> Result<(Dataset, Dataset), String>,
) -> Result<(Model<f32>, Dataset), Outcome> {
    let ckpt = opts.dir.join(format!("{name}.ckpt"));
    let test_path = opts.dir.join(format!("{name}_test.dair"));
    let existing = Trainer::<f32>::load(&ckpt).ok();
    if let Some(t) = existing.as_ref().filter(|t| t.step >= LONG_STEPS) {
        return match read_dataset(&test_path) {
            Ok(test) => Ok((t.model.clone(), test)),
            Err(e) => Err(Outcome::Fail(format!("{}: {e}", test_path.display()))),
        };
    }
    if !opts.train {
        let at = existing.map_or("no checkpoint".to_string(), |t| format!("checkpoint at step {}", t.step));
        return Err(Outcome::Skip(format!("{at} in {}; rerun with --train", opts.dir.display())));
    }
    let (train, test) = data().map_err(Outcome::Fail)?;
    std::fs::create_dir_all(&opts.dir).map_err(|e| Outcome::Fail(e.to_string()))?;
    write_dataset(&test, &test_path).map_err(|e| Outcome::Fail(e.to_string()))?;
    let mut t = match existing {
        Some(t) => t,
        None => {
            let model = Model::<f32>::new(config, TRAIN_SEED).map_err(|e| Outcome::Fail(e.to_string()))?;
            let train_cfg = dair_core::train::TrainConfig {
                total_steps: LONG_STEPS,
                seed: TRAIN_SEED,
                ..Default::default()
            };
            Trainer::new(model, train_cfg).map_err(|e| Outcome::Fail(e.to_string()))?
        }
    };
    let log_path = opts.dir.join(format!("{name}.csv"));
    let fresh = !log_path.exists();
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Outcome::Fail(e.to_string()))?;
    if fresh {
        writeln!(log, "{LOG_HEADER}").map_err(|e| Outcome::Fail(e.to_string()))?;
    }
    let started = Instant::now();
    t.run(&train, Some(&mut log), Some(&ckpt), |r| {
        if r.step % 1000 == 0 {
            eprintln!("{name} step {} total {:.1} tau {:.3} ({:.0}s)", r.step, r.terms.total, r.tau, started.elapsed().as_secs_f64());
        }
    })
    .map_err(|e| Outcome::Fail(format!("training stopped: {e}")))?;
    t.save(&ckpt).map_err(|e| Outcome::Fail(e.to_string()))?;
    Ok((t.model, test))
}

fn describe(m: &MetricsReport) -> String {
    format!(
        "count accuracy {:.3}, R_corr {:.3}, MSE {:.4} over {} held-out images",
        m.count_accuracy, m.r_corr, m.mse, m.images
    )
}

fn criterion_sprites(opts: &Options) -> Outcome {
    let (model, test) = match long_run(opts, "sprites", ModelConfig::multi_sprites(), || Ok(sprites_data())) {
        Ok(v) => v,
        Err(o) => return o,
    };
    match evaluate(&model, &test, 100) {
        Ok(m) => verdict(m.count_accuracy >= 0.90 && m.r_corr >= 0.75 && m.mse <= 0.03, describe(&m)),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn criterion_mnist(opts: &Options) -> Outcome {
    let (model, test) = match long_run(opts, "mnist", ModelConfig::multi_mnist(), mnist_data) {
        Ok(v) => v,
        Err(o) => return o,
    };
    match evaluate(&model, &test, 100) {
        Ok(m) => verdict(m.count_accuracy >= 0.85 && m.r_corr >= 0.30, describe(&m)),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

/// Four-connected components of `img > threshold` with their
/// intensity-weighted centroids (x, y).
fn components(img: &[f64], h: usize, w: usize, threshold: f64) -> Vec<(f64, f64)> {
    let mut label = vec![usize::MAX; h * w];
    let mut out = Vec::new();
    for seed in 0..h * w {
        if img[seed] <= threshold || label[seed] != usize::MAX {
            continue;
        }
        let id = out.len();
        let (mut mass, mut sx, mut sy) = (0.0, 0.0, 0.0);
        let mut stack = vec![seed];
        label[seed] = id;
        while let Some(p) = stack.pop() {
            let (r, c) = (p / w, p % w);
            mass += img[p];
            sx += img[p] * c as f64;
            sy += img[p] * r as f64;
            let mut visit = |q: usize| {
                if img[q] > threshold && label[q] == usize::MAX {
                    label[q] = id;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        out.push((sx / mass, sy / mass));
    }
    out
}

fn criterion_generation(opts: &Options) -> Outcome {
    let (model, test) = match long_run(opts, "sprites", ModelConfig::multi_sprites(), || Ok(sprites_data())) {
        Ok(v) => v,
        Err(o) => return o,
    };
    let report = match evaluate(&model, &test, 100) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    // learned category rendering each requested true shape
    let learned = |shape: usize| report.mapping.iter().position(|&t| t == shape);
    let (square, triangle, ellipse) = (0, 1, 2);
    let wanted = [
        (square, -0.5, -0.5, 0.3, 0.0),
        (ellipse, 0.5, -0.5, 0.3, 0.5),
        (square, -0.5, 0.5, 0.3, 0.0),
        (triangle, 0.5, 0.5, 0.3, 0.0),
    ];
    let mut objects = Vec::new();
    for &(shape, tx, ty, s, omega) in &wanted {
        let Some(category) = learned(shape).filter(|&c| c < model.config().num_categories) else {
            return Outcome::Fail(format!("no learned category maps to shape {shape}"));
        };
        objects.push(ObjectSpec {
            category,
            attr: vec![],
            pose: AffinePose::new(s, tx, ty, omega),
        });
    }
    let img = match model.generate_scene(&objects) {
        Ok(i) => i,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let cfg = model.config();
    let pixels: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let found = components(&pixels, cfg.canvas_h, cfg.canvas_w, 0.5);
    let mut worst = 0.0f64;
    let mut used = vec![false; found.len()];
    for &(_, tx, ty, _, _) in &wanted {
        let (cx, cy) = to_pixels(tx as f64, ty as f64, cfg.canvas_h, cfg.canvas_w);
        let nearest = found
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, &(x, y))| (i, ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((i, d)) => {
                used[i] = true;
                worst = worst.max(d);
            }
            None => worst = f64::INFINITY,
        }
    }
    verdict(
        found.len() == 4 && worst <= 3.0,
        format!("{} components, worst centroid offset {worst:.2} px", found.len()),
    )
}
