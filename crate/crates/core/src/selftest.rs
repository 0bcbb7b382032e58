//! Runtime property suite: each check exercises one invariant end to end and
//! reports a one-line summary.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{inverse_pose_matrix, pose_to_matrices, AffineMatrix, AffinePose, PoseFlags};
use crate::data::{gen_multi_sprites, Dataset, SpritesConfig};
use crate::error::{Error, Result};
use crate::latents::{
    kl_pres_step, kl_relaxed_categorical_mc, sample_gumbel_sigmoid, sample_gumbel_softmax, RelaxedBernoulliParams,
    RelaxedCategoricalParams,
};
use crate::metrics::{assignment_solve, correspondence_rate, table_from_pairs};
use crate::model::{Model, ModelConfig};
use crate::noise::{NoiseStream, Role};
use crate::tensor::{grad_check, Tape, Tensor};
use crate::train::{Checkpoint, TrainConfig, Trainer};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String>;
type Expr = Box<dyn for<'t> Fn(&'t Tape<f64>, crate::Var<'t, f64>) -> Result<crate::Var<'t, f64>>>;

/// Every check in execution order.
pub fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("autodiff_grad_check", autodiff_grad_check as Check),
        ("pose_inverse_identity", pose_inverse_identity),
        ("gumbel_softmax_simplex", gumbel_softmax_simplex),
        ("gumbel_max_distribution", gumbel_max_distribution),
        ("kl_zero_when_q_equals_p", kl_zero_when_q_equals_p),
        ("dataset_round_trip", dataset_round_trip),
        ("checkpoint_round_trip", checkpoint_round_trip),
        ("assignment_matches_brute_force", assignment_matches_brute_force),
        ("correspondence_worked_example", correspondence_worked_example),
    ]
}

pub fn run_all() -> Vec<CheckResult> {
    checks()
        .into_iter()
        .map(|(name, f)| match f() {
            Ok(detail) => CheckResult {
                name,
                passed: true,
                detail,
            },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect()
}

fn fail(msg: String) -> Result<String> {
    Err(Error::invalid(msg))
}

/// Gradient checks of composite expressions covering every differentiable
/// op, in 64-bit at tolerance 1e-4.
fn autodiff_grad_check() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut rand_tensor = |shape: &[usize]| Tensor::<f64>::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let w = rand_tensor(&[4, 3]);
    let img = Tensor::from_fn(&[2, 6, 7], |i| ((i * 37 % 11) as f64) / 11.0);
    let kern = rand_tensor(&[2, 1, 3, 3]);
    let cases: Vec<(&str, Tensor<f64>, Expr)> = vec![
        (
            "dense",
            rand_tensor(&[2, 4]),
            Box::new(move |t, x| {
                let h = x.matmul(t.constant(w.clone()))?.tanh();
                Ok(h.softmax()?.mul(h.sigmoid())?.sum().add(h.logsumexp()?.sum())?)
            }),
        ),
        (
            "elementwise",
            Tensor::from_fn(&[5], |i| 0.3 + 0.2 * i as f64),
            Box::new(|_, x| {
                let a = x.exp().add(x.ln())?.sub(x.sin().mul(x.cos())?)?;
                Ok(a.div(x.softplus())?.square().sum().add(x.relu().log_softmax()?.sum())?)
            }),
        ),
        (
            "affine_sampling",
            Tensor::from_f64(&[2, 6], &[0.71, 0.13, 0.051, -0.12, 0.83, -0.073, 0.9, -0.2, 0.11, 0.17, 0.62, 0.043])?,
            Box::new(move |t, theta| {
                let out = t.constant(img.clone()).grid_sample(theta, 5, 4)?;
                Ok(out.square().sum())
            }),
        ),
        (
            "depthwise_conv",
            rand_tensor(&[2, 1, 5, 6]),
            Box::new(move |t, x| {
                let k = t.constant(kern.clone());
                Ok(x.conv2d_depthwise(k)?.tanh().sum())
            }),
        ),
        (
            "reshape_slice_concat",
            rand_tensor(&[3, 4]),
            Box::new(|t, x| {
                let a = x.slice(1, 1, 2)?;
                let b = x.reshape(&[4, 3])?.slice(0, 0, 3)?.reshape(&[3, 3])?;
                let c = t.concat(&[a, b], 1)?;
                Ok(c.sum_axis(0)?.square().sum())
            }),
        ),
    ];
    let mut worst = 0.0f64;
    for (name, point, f) in &cases {
        let r = grad_check(|t, x| f(t, x), point, 1e-6)?;
        if r.max_rel_error > 1e-4 {
            return fail(format!("{name}: relative error {:.2e} at {}", r.max_rel_error, r.worst_coordinate));
        }
        worst = worst.max(r.max_rel_error);
    }
    Ok(format!("{} expressions, max relative error {worst:.2e}", cases.len()))
}

fn pose_inverse_identity() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let flags = PoseFlags {
        enable_shear: true,
        merge_rot_shear: false,
    };
    let mut worst = 0.0f32;
    for _ in 0..1000 {
        let p = AffinePose::<f32> {
            s_x: rng.random_range(0.3..2.0),
            s_y: rng.random_range(0.3..2.0),
            t_x: rng.random_range(-0.8..0.8),
            t_y: rng.random_range(-0.8..0.8),
            omega: rng.random_range(-PI as f32..PI as f32),
            k_x: rng.random_range(-0.5..0.5),
            k_y: rng.random_range(-0.5..0.5),
        };
        let d = pose_to_matrices(&p, flags)?.d;
        let e = inverse_pose_matrix(&p, flags)?;
        worst = worst.max(e.mul(&d).max_abs_diff(&AffineMatrix::identity()));
    }
    if worst > 1e-5 {
        return fail(format!("max |T_e·T_d − I| = {worst:.2e}"));
    }
    Ok(format!("1000 poses (32-bit), max |T_e·T_d − I| = {worst:.2e}"))
}

fn gumbel_batch(logits: &[f64], tau: f64, n: usize, index: u64) -> Result<Tensor<f64>> {
    let k = logits.len();
    let mut s = NoiseStream::new(5, 0, index, Role::Test);
    let tape = Tape::new();
    let l = tape.constant(Tensor::from_fn(&[n, k], |i| logits[i % k]));
    let g = tape.constant(Tensor::from_vec(&[n, k], s.fill(n * k, |s| s.gumbel()))?);
    Ok(sample_gumbel_softmax(&RelaxedCategoricalParams::new(l, tau)?, g)?.value.value())
}

fn gumbel_softmax_simplex() -> Result<String> {
    let y = gumbel_batch(&[1.5, -0.5, 0.0, 2.0], 0.5, 10_000, 1)?;
    let mut worst = 0.0f64;
    for row in y.data().chunks(4) {
        if row.iter().any(|&v| !(v >= 0.0 && v <= 1.0)) {
            return fail(format!("component outside [0, 1]: {row:?}"));
        }
        worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    if worst > 1e-6 {
        return fail(format!("row sum off by {worst:.2e}"));
    }
    Ok(format!("10^4 samples, max |Σy − 1| = {worst:.2e}"))
}

fn gumbel_max_distribution() -> Result<String> {
    let logits = [0.5, -1.0, 1.0, 0.0];
    let n = 100_000;
    let y = gumbel_batch(&logits, 0.8, n, 2)?;
    let mut counts = [0usize; 4];
    for row in y.data().chunks(4) {
        counts[crate::model::argmax(row)] += 1;
    }
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let tv = 0.5
        * counts
            .iter()
            .zip(&logits)
            .map(|(&c, l)| (c as f64 / n as f64 - l.exp() / z).abs())
            .sum::<f64>();
    if tv > 0.01 {
        return fail(format!("total variation {tv:.4}"));
    }
    Ok(format!("10^5 samples, TV distance {tv:.4}"))
}

fn kl_zero_when_q_equals_p() -> Result<String> {
    let n = 10_000;
    let prior = [0.1, 0.6, 0.3];
    let logits: Vec<f64> = prior.iter().map(|p: &f64| p.ln()).collect();
    let mut s = NoiseStream::new(6, 0, 0, Role::Test);
    let tape = Tape::new();
    let l = tape.constant(Tensor::from_fn(&[n, 3], |i| logits[i % 3]));
    let g = tape.constant(Tensor::from_vec(&[n, 3], s.fill(n * 3, |s| s.gumbel()))?);
    let params = RelaxedCategoricalParams::new(l, 0.6)?;
    let sample = sample_gumbel_softmax(&params, g)?;
    let cat = kl_relaxed_categorical_mc(&params, &prior, &sample)?.value().data().iter().sum::<f64>() / n as f64;

    let p = 0.35f64;
    let l = tape.constant(Tensor::full(&[n, 1], (p / (1.0 - p)).ln()));
    let g = tape.constant(Tensor::from_vec(&[n, 1], s.fill(n, |s| s.logistic()))?);
    let params = RelaxedBernoulliParams::new(l, 0.6)?;
    let sample = sample_gumbel_sigmoid(&params, g)?;
    let pres = kl_pres_step(&params, &sample, p)?.value().data().iter().sum::<f64>() / n as f64;
    if cat.abs() > 0.02 || pres.abs() > 0.02 {
        return fail(format!("categorical {cat:.4}, presence {pres:.4}"));
    }
    Ok(format!("categorical {cat:.2e}, presence {pres:.2e}"))
}

fn dataset_round_trip() -> Result<String> {
    let d = gen_multi_sprites(200, &SpritesConfig::default(), 11)?;
    let again = gen_multi_sprites(200, &SpritesConfig::default(), 11)?;
    let bytes = d.to_bytes()?;
    if again.to_bytes()? != bytes {
        return fail("generation is not deterministic".into());
    }
    let back = Dataset::from_bytes(&bytes)?;
    if back != d || back.to_bytes()? != bytes {
        return fail("write → read → write changed bytes".into());
    }
    Ok(format!("200 records, {} bytes identical", bytes.len()))
}

fn checkpoint_round_trip() -> Result<String> {
    let cfg = ModelConfig {
        canvas_h: 12,
        canvas_w: 12,
        glimpse_h: 6,
        glimpse_w: 6,
        rnn_hidden: 8,
        enc_hidden: 8,
        dec_hidden: 8,
        attr_dim: 1,
        ..ModelConfig::default()
    };
    let data = gen_multi_sprites(
        8,
        &SpritesConfig {
            height: 12,
            width: 12,
            ..SpritesConfig::default()
        },
        3,
    )?;
    let mut sizes = Vec::new();
    for wide in [false, true] {
        let bytes = if wide {
            let mut t = Trainer::new(Model::<f64>::new(cfg.clone(), 4)?, TrainConfig { batch_size: 4, ..TrainConfig::default() })?;
            t.train_step(&data)?;
            let bytes = t.to_checkpoint().to_bytes()?;
            let back = Trainer::<f64>::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?;
            if back.model != t.model || back.adam != t.adam || back.step != t.step {
                return fail("64-bit state changed across save/load".into());
            }
            bytes
        } else {
            let mut t = Trainer::new(Model::<f32>::new(cfg.clone(), 4)?, TrainConfig { batch_size: 4, ..TrainConfig::default() })?;
            t.train_step(&data)?;
            let bytes = t.to_checkpoint().to_bytes()?;
            let back = Trainer::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?;
            if back.model != t.model || back.adam != t.adam || back.step != t.step {
                return fail("32-bit state changed across save/load".into());
            }
            bytes
        };
        if Checkpoint::from_bytes(&bytes)?.to_bytes()? != bytes {
            return fail("checkpoint bytes changed across read/write".into());
        }
        sizes.push(bytes.len());
    }
    Ok(format!("32-bit {} bytes, 64-bit {} bytes identical", sizes[0], sizes[1]))
}

fn brute_force(table: &[f64], k: usize) -> f64 {
    fn go(row: usize, k: usize, used: &mut Vec<bool>, table: &[f64]) -> f64 {
        if row == k {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..k {
            if !used[j] {
                used[j] = true;
                best = best.max(table[row * k + j] + go(row + 1, k, used, table));
                used[j] = false;
            }
        }
        best
    }
    go(0, k, &mut vec![false; k], table)
}

fn assignment_matches_brute_force() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for trial in 0..1000 {
        let k = 1 + trial % 5;
        let table: Vec<f64> = (0..k * k).map(|_| rng.random_range(0..20) as f64).collect();
        let a = assignment_solve(&table, k)?;
        let b = brute_force(&table, k);
        if (a.value - b).abs() > 1e-9 {
            return fail(format!("k={k}: solver {} vs brute force {b}", a.value));
        }
    }
    Ok("1000 tables, k ≤ 5, all optimal".into())
}

fn correspondence_worked_example() -> Result<String> {
    let pairs = [(1, 4), (4, 0), (2, 1), (2, 1), (3, 5)];
    let (r, a) = correspondence_rate(&table_from_pairs(&pairs, 6)?, 5)?;
    if r != 1.0 || a.mapping[1] != 4 || a.mapping[4] != 0 || a.mapping[2] != 1 || a.mapping[3] != 5 {
        return fail(format!("R_corr {r} with mapping {:?}", a.mapping));
    }
    Ok("R_corr = 1 under 1→4, 4→0, 2→1, 3→5".into())
}
