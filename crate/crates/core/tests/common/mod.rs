//! Finite-difference oracle for the full negative ELBO with respect to the
//! model parameters.

#![allow(dead_code)]

use dair_core::model::{EpisodeNoise, Mode, Model, ModelConfig};
use dair_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 16×16 canvas, one step, every latent family active.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        canvas_h: 16,
        canvas_w: 16,
        glimpse_h: 8,
        glimpse_w: 8,
        max_steps: 1,
        num_categories: 3,
        attr_dim: 1,
        rnn_hidden: 6,
        enc_hidden: 8,
        dec_hidden: 8,
        enable_shear: true,
        ..ModelConfig::multi_sprites()
    }
}

/// Adds uniform jitter to every parameter so zero-initialized heads carry
/// gradient to the layers below them.
pub fn jitter(model: &mut Model<f64>, amount: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params_mut().tensors_mut() {
        let data: Vec<f64> = t.data().iter().map(|v| v + rng.random_range(-amount..amount)).collect();
        *t = Tensor::from_vec(t.shape(), data).unwrap();
    }
}

pub fn loss(model: &Model<f64>, x: &Tensor<f64>, noise: &EpisodeNoise<f64>, tau: f64) -> f64 {
    let tape = Tape::new();
    let p = model.bind(&tape, false);
    let xv = tape.constant(x.clone());
    let trace = model.run_episode(&p, xv, noise, tau, Mode::Train, None).unwrap();
    model.elbo(xv, &trace).unwrap().total.value().item()
}

/// Worst `|analytic − numeric| / max(1, |numeric|)` over `per_param`
/// random coordinates of every parameter tensor.
pub fn elbo_grad_error(model: &Model<f64>, x: &Tensor<f64>, noise: &EpisodeNoise<f64>, tau: f64, per_param: usize) -> f64 {
    let tape = Tape::new();
    let p = model.bind(&tape, true);
    let xv = tape.constant(x.clone());
    let trace = model.run_episode(&p, xv, noise, tau, Mode::Train, None).unwrap();
    let total = model.elbo(xv, &trace).unwrap().total;
    let grads = tape.backward(total).unwrap();
    let analytic: Vec<Tensor<f64>> = p.vars().iter().map(|v| grads.get(*v).unwrap().clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        for _ in 0..per_param {
            let j = rng.random_range(0..a.numel());
            let probe = |delta: f64| {
                let mut m = model.clone();
                let t = &m.params().tensors()[i];
                let mut data = t.to_vec();
                data[j] += delta;
                m.params_mut().tensors_mut()[i] = Tensor::from_vec(t.shape(), data).unwrap();
                loss(&m, x, noise, tau)
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            let err = (a.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// A smooth random image in [0, 1].
pub fn blob_images(batch: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<(f64, f64)> = (0..batch)
        .map(|_| (rng.random_range(3.0..w as f64 - 3.0), rng.random_range(3.0..h as f64 - 3.0)))
        .collect();
    Tensor::from_fn(&[batch, h, w], |i| {
        let (b, r, c) = (i / (h * w), (i / w) % h, i % w);
        let (cx, cy) = centres[b];
        let d2 = (c as f64 - cx).powi(2) + (r as f64 - cy).powi(2);
        (-d2 / 8.0).exp()
    })
}
