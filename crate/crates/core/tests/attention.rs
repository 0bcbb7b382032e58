use dair_core::attention::{grid_sample, AffineMatrix, PoseVars};
use dair_core::tensor::grad_check;
use dair_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight per-pixel bilinear sampler with zero padding; pixel centers at
/// -1 and +1 on each axis.
fn reference_sample(img: &[f64], h: usize, w: usize, m: &[f64; 6], oh: usize, ow: usize) -> Vec<f64> {
    let norm = |i: usize, n: usize| if n == 1 { 0.0 } else { 2.0 * i as f64 / (n - 1) as f64 - 1.0 };
    let at = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0.0
        } else {
            img[r as usize * w + c as usize]
        }
    };
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let (x, y) = (norm(j, ow), norm(i, oh));
            let u = m[0] * x + m[1] * y + m[2];
            let v = m[3] * x + m[4] * y + m[5];
            let px = (u + 1.0) * (w as f64 - 1.0) / 2.0;
            let py = (v + 1.0) * (h as f64 - 1.0) / 2.0;
            let (c0, r0) = (px.floor(), py.floor());
            let (fx, fy) = (px - c0, py - r0);
            let (c0, r0) = (c0 as i64, r0 as i64);
            out.push(
                (1.0 - fy) * ((1.0 - fx) * at(r0, c0) + fx * at(r0, c0 + 1))
                    + fy * ((1.0 - fx) * at(r0 + 1, c0) + fx * at(r0 + 1, c0 + 1)),
            );
        }
    }
    out
}

#[test]
fn sampler_matches_reference_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (h, w) = (rng.random_range(2..12), rng.random_range(2..12));
        let (oh, ow) = (rng.random_range(1..10), rng.random_range(1..10));
        let img = Tensor::<f64>::from_fn(&[h, w], |_| rng.random_range(0.0..1.0));
        let m: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.2..1.2));
        let got = grid_sample(&img, &AffineMatrix::from_rows(m[0], m[1], m[2], m[3], m[4], m[5]), oh, ow).unwrap();
        let want = reference_sample(img.data(), h, w, &m, oh, ow);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn one_pixel_translation_shifts_with_zero_border() {
    let (h, w) = (6, 9);
    let img = Tensor::<f64>::from_fn(&[h, w], |i| 1.0 + i as f64);
    let pitch = 2.0 / (w as f64 - 1.0);
    // output pixel j reads input pixel j + 1
    let out = grid_sample(&img, &AffineMatrix::from_rows(1.0, 0.0, pitch, 0.0, 1.0, 0.0), h, w).unwrap();
    for r in 0..h {
        for c in 0..w {
            let want = if c + 1 < w { img.data()[r * w + c + 1] } else { 0.0 };
            assert!((out.data()[r * w + c] - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn pose_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = Tensor::<f64>::from_fn(&[1, 12, 12], |i| {
        let (r, c) = ((i / 12) as f64 - 5.5, (i % 12) as f64 - 5.5);
        (-(r * r + c * c) / 18.0).exp() + 0.1 * (c / 3.0).sin()
    });
    for trial in 0..20 {
        let base = [0.7, 0.9, 0.1, -0.2, 0.4, 0.2, -0.1];
        let point = Tensor::from_fn(&[1, 7], |i| base[i] + rng.random_range(-0.3..0.3) + 1e-3 * rng.random_range(-1.0..1.0));
        for inverse in [false, true] {
            let r = grad_check(
                |tape, x| {
                    let col = |i| x.slice(1, i, 1).unwrap();
                    let pose = PoseVars {
                        s_x: col(0),
                        s_y: col(1),
                        t_x: col(2),
                        t_y: col(3),
                        omega: col(4),
                        k_x: Some(col(5)),
                        k_y: Some(col(6)),
                    };
                    let rows = if inverse { pose.inverse_rows()? } else { pose.forward_rows()? };
                    let out = tape.constant(img.clone()).grid_sample(rows, 9, 9)?;
                    Ok(out.square().sum())
                },
                &point,
                1e-6,
            )
            .unwrap();
            assert!(r.max_rel_error <= 1e-4, "trial {trial}: {} at {}", r.max_rel_error, r.worst_coordinate);
        }
    }
}
