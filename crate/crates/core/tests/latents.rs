//! Monte-Carlo and quadrature checks of the samplers and KL estimators.

use dair_core::latents::*;
use dair_core::noise::{NoiseStream, Role};
use dair_core::tensor::grad_check;
use dair_core::{Tape, Tensor};

fn stream(index: u64) -> NoiseStream {
    NoiseStream::new(2024, 0, index, Role::Test)
}

fn logistic_pdf(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / (1.0 + e).powi(2)
}

/// KL between two binary Concrete laws (same τ) by trapezoidal quadrature in
/// the pre-sigmoid coordinate, where x = (l + L)/τ with L standard logistic.
fn binary_concrete_kl_quadrature(lq: f64, lp: f64, tau: f64) -> f64 {
    let (lo, hi, n) = (-80.0 / tau, 80.0 / tau, 400_000);
    let h = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let q = tau * logistic_pdf(tau * x - lq);
        let p = tau * logistic_pdf(tau * x - lp);
        if q > 0.0 && p > 0.0 {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * q * (q / p).ln();
        }
    }
    acc * h
}

#[test]
fn gaussian_moments_match() {
    let n = 100_000;
    let mut s = stream(1);
    let tape = Tape::<f64>::new();
    let mu = tape.constant(Tensor::full(&[n], 0.5));
    let ls = tape.constant(Tensor::full(&[n], 2f64.ln()));
    let eps = tape.constant(Tensor::from_vec(&[n], s.fill(n, |s| s.normal())).unwrap());
    let z = sample_gaussian(&GaussianParams::new(mu, ls).unwrap(), eps).unwrap().value();
    let mean = z.data().iter().sum::<f64>() / n as f64;
    let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - 0.5).abs() <= 0.02, "mean {mean}");
    assert!((var.sqrt() - 2.0).abs() <= 0.02, "std {}", var.sqrt());
}

fn gumbel_softmax_batch(logits: &[f64], tau: f64, n: usize, seed: u64) -> Tensor<f64> {
    let k = logits.len();
    let mut s = stream(seed);
    let tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::from_fn(&[n, k], |i| logits[i % k]));
    let g = tape.constant(Tensor::from_vec(&[n, k], s.fill(n * k, |s| s.gumbel())).unwrap());
    let params = RelaxedCategoricalParams::new(l, tau).unwrap();
    sample_gumbel_softmax(&params, g).unwrap().value.value()
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}

#[test]
fn gumbel_max_frequencies() {
    let n = 100_000;
    let y = gumbel_softmax_batch(&[2f64.ln(), 0.0], 1.0, n, 2);
    let hits = y.data().chunks(2).filter(|r| argmax(r) == 0).count();
    let f = hits as f64 / n as f64;
    assert!((f - 2.0 / 3.0).abs() <= 0.01, "{f}");

    // total variation against the softmax for a 4-way draw
    let logits = [0.3, -1.0, 1.2, 0.0];
    let y = gumbel_softmax_batch(&logits, 0.7, n, 3);
    let mut counts = [0usize; 4];
    for row in y.data().chunks(4) {
        counts[argmax(row)] += 1;
    }
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let tv: f64 = 0.5
        * counts
            .iter()
            .zip(&logits)
            .map(|(&c, l)| (c as f64 / n as f64 - l.exp() / z).abs())
            .sum::<f64>();
    assert!(tv <= 0.01, "tv {tv}");
}

#[test]
fn gumbel_softmax_stays_inside_simplex() {
    let y = gumbel_softmax_batch(&[5.0, -3.0, 0.0], 0.3, 2000, 4);
    for row in y.data().chunks(3) {
        assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn low_temperature_concentration() {
    // With a two-way gap d the largest component exceeds 0.99 exactly when
    // |d + L| > τ·ln 99 for logistic L; compare with that probability, and
    // require the ≥ 99 % level once the gap is wide enough to carry it.
    let (n, tau) = (10_000, 0.01);
    let band = tau * 99f64.ln();
    for gap in [1.0, 2.0, 3.0] {
        let y = gumbel_softmax_batch(&[gap, 0.0], tau, n, 10 + gap as u64);
        let f = y.data().chunks(2).filter(|r| r[0].max(r[1]) > 0.99).count() as f64 / n as f64;
        let cdf = |z: f64| 1.0 / (1.0 + (-z).exp());
        let expected = 1.0 - (cdf(band - gap) - cdf(-band - gap));
        assert!((f - expected).abs() < 0.005, "gap {gap}: {f} vs {expected}");
        if gap >= 3.0 {
            assert!(f >= 0.99, "gap {gap}: {f}");
        }
    }
}

#[test]
fn gumbel_sigmoid_symmetric_frequency() {
    let n = 100_000;
    let mut s = stream(5);
    let tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::zeros(&[n]));
    let g = tape.constant(Tensor::from_vec(&[n], s.fill(n, |s| s.logistic())).unwrap());
    let y = sample_gumbel_sigmoid(&RelaxedBernoulliParams::new(l, 0.5).unwrap(), g)
        .unwrap()
        .value
        .value();
    let f = y.data().iter().filter(|&&v| v > 0.5).count() as f64 / n as f64;
    assert!((f - 0.5).abs() <= 0.01, "{f}");
}

fn categorical_kl_average(logits: &[f64], prior: &[f64], tau: f64, n: usize, seed: u64) -> f64 {
    let k = logits.len();
    let mut s = stream(seed);
    let tape = Tape::<f64>::new();
    let l = tape.constant(Tensor::from_fn(&[n, k], |i| logits[i % k]));
    let g = tape.constant(Tensor::from_vec(&[n, k], s.fill(n * k, |s| s.gumbel())).unwrap());
    let params = RelaxedCategoricalParams::new(l, tau).unwrap();
    let sample = sample_gumbel_softmax(&params, g).unwrap();
    let kl = kl_relaxed_categorical_mc(&params, prior, &sample).unwrap().value();
    kl.data().iter().sum::<f64>() / n as f64
}

#[test]
fn categorical_kl_vanishes_when_posterior_is_prior() {
    let prior = [0.2, 0.5, 0.3];
    let logits: Vec<f64> = prior.iter().map(|p: &f64| p.ln()).collect();
    let avg = categorical_kl_average(&logits, &prior, 0.7, 10_000, 6);
    assert!(avg.abs() <= 0.02, "{avg}");
}

#[test]
fn categorical_kl_matches_quadrature() {
    let tau = 0.5;
    let avg = categorical_kl_average(&[3f64.ln(), 0.0], &[0.5, 0.5], tau, 100_000, 7);
    let oracle = binary_concrete_kl_quadrature(3f64.ln(), 0.0, tau);
    assert!((avg - oracle).abs() <= 0.02, "mc {avg} quadrature {oracle}");
}

fn pres_kl_average(logits: &[f64], continue_prob: f64, tau: f64, n: usize, seed: u64) -> f64 {
    let mut s = stream(seed);
    let tape = Tape::<f64>::new();
    let mut params = Vec::new();
    let mut samples = Vec::new();
    for &lg in logits {
        let l = tape.constant(Tensor::full(&[n], lg));
        let g = tape.constant(Tensor::from_vec(&[n], s.fill(n, |s| s.logistic())).unwrap());
        let p = RelaxedBernoulliParams::new(l, tau).unwrap();
        samples.push(sample_gumbel_sigmoid(&p, g).unwrap());
        params.push(p);
    }
    let kl = kl_pres_geometric_mc(&params, &samples, continue_prob).unwrap().value();
    kl.data().iter().sum::<f64>() / n as f64
}

#[test]
fn presence_kl_vanishes_when_posterior_is_prior() {
    let p: f64 = 0.3;
    let avg = pres_kl_average(&[(p / (1.0 - p)).ln()], p, 0.5, 10_000, 8);
    assert!(avg.abs() <= 0.02, "{avg}");
}

#[test]
fn presence_kl_matches_quadrature() {
    let tau = 0.5;
    let avg = pres_kl_average(&[2.0, -2.0], 0.5, tau, 100_000, 9);
    let oracle = binary_concrete_kl_quadrature(2.0, 0.0, tau) + binary_concrete_kl_quadrature(-2.0, 0.0, tau);
    assert!((avg - oracle).abs() <= 0.03, "mc {avg} quadrature {oracle}");
}

#[test]
fn kl_estimates_are_non_negative_on_average() {
    let mut s = stream(12);
    for trial in 0..5 {
        let logits: Vec<f64> = (0..3).map(|_| 2.0 * s.normal::<f64>()).collect();
        let avg = categorical_kl_average(&logits, &[0.25, 0.25, 0.5], 0.6, 100_000, 100 + trial);
        assert!(avg >= -0.01, "categorical {avg}");
        let l: f64 = 2.0 * s.normal::<f64>();
        let avg = pres_kl_average(&[l], 0.4, 0.6, 100_000, 200 + trial);
        assert!(avg >= -0.01, "presence {avg}");
    }
}

#[test]
fn samplers_are_deterministic_in_their_noise() {
    let a = gumbel_softmax_batch(&[0.1, 0.4, -0.3], 0.8, 64, 13);
    let b = gumbel_softmax_batch(&[0.1, 0.4, -0.3], 0.8, 64, 13);
    assert_eq!(a.data(), b.data());
}

#[test]
fn gradients_pass_finite_difference_checks() {
    let g = Tensor::from_f64(&[2, 3], &[0.3, -0.8, 1.1, 0.05, 0.6, -1.4]).unwrap();
    let logits = Tensor::from_f64(&[2, 3], &[0.2, -0.5, 0.9, 1.3, 0.0, -0.7]).unwrap();

    let r = grad_check(
        |tape, x| {
            let p = RelaxedCategoricalParams::new(x, 0.7)?;
            let y = sample_gumbel_softmax(&p, tape.constant(g.clone()))?;
            let w = tape.constant(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5])?);
            Ok(y.value.mul(w)?.sum())
        },
        &logits,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "gumbel-softmax {}", r.max_rel_error);

    let r = grad_check(
        |tape, x| {
            let p = RelaxedCategoricalParams::new(x, 0.7)?;
            let y = sample_gumbel_softmax(&p, tape.constant(g.clone()))?;
            Ok(kl_relaxed_categorical_mc(&p, &[0.2, 0.3, 0.5], &y)?.sum())
        },
        &logits,
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "categorical kl {}", r.max_rel_error);

    let noise = Tensor::from_f64(&[3], &[0.4, -1.2, 2.0]).unwrap();
    let r = grad_check(
        |tape, x| {
            let p = RelaxedBernoulliParams::new(x, 0.6)?;
            let y = sample_gumbel_sigmoid(&p, tape.constant(noise.clone()))?;
            Ok(kl_pres_step(&p, &y, 0.5)?.sum().add(y.value.sum())?)
        },
        &Tensor::from_f64(&[3], &[0.5, -1.0, 1.5]).unwrap(),
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "presence {}", r.max_rel_error);

    let eps = Tensor::from_f64(&[4], &[0.3, -1.0, 0.7, 2.0]).unwrap();
    let r = grad_check(
        |tape, x| {
            let mu = x.slice(0, 0, 4)?;
            let ls = x.slice(0, 4, 4)?;
            let p = GaussianParams::new(mu, ls)?;
            let z = sample_gaussian(&p, tape.constant(eps.clone()))?;
            Ok(z.square().sum().add(kl_gaussian_standard(&p)?.sum())?)
        },
        &Tensor::from_f64(&[8], &[0.1, -0.4, 1.0, 0.0, -0.3, 0.2, 0.5, -1.0]).unwrap(),
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "gaussian {}", r.max_rel_error);
}
