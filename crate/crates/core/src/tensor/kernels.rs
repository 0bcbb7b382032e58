//! Forward and adjoint kernels for the non-elementwise primitives.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Normalized coordinate of pixel `i` on an axis of `n` pixels: pixel centers
/// span [-1, 1] end to end; a single pixel sits at 0.
#[inline]
pub fn normalized_coord<T: Scalar>(i: usize, n: usize) -> T {
    if n <= 1 {
        T::zero()
    } else {
        T::lit(-1.0 + 2.0 * i as f64 / (n - 1) as f64)
    }
}

struct Tap<T> {
    x0: isize,
    y0: isize,
    fx: T,
    fy: T,
    /// d(pixel x)/du and d(pixel y)/dv
    sx: T,
    sy: T,
}

#[inline]
fn tap<T: Scalar>(u: T, v: T, h: usize, w: usize) -> Tap<T> {
    let sx = T::lit((w as f64 - 1.0) * 0.5);
    let sy = T::lit((h as f64 - 1.0) * 0.5);
    let px = (u + T::one()) * sx;
    let py = (v + T::one()) * sy;
    let fx0 = px.floor();
    let fy0 = py.floor();
    Tap {
        x0: fx0.to_isize().unwrap_or(isize::MIN / 2),
        y0: fy0.to_isize().unwrap_or(isize::MIN / 2),
        fx: px - fx0,
        fy: py - fy0,
        sx,
        sy,
    }
}

#[inline]
fn pixel<T: Scalar>(img: &[T], h: usize, w: usize, y: isize, x: isize) -> T {
    if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
        T::zero()
    } else {
        img[y as usize * w + x as usize]
    }
}

fn check_grid_args<T: Scalar>(image: &Tensor<T>, theta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Shape {
            op: "grid_sample (image must be [batch, h, w])",
            lhs: s.to_vec(),
            rhs: theta.shape().to_vec(),
        });
    }
    let ok = matches!(theta.shape(), [b, 2, 3] if *b == s[0]) || matches!(theta.shape(), [b, 6] if *b == s[0]);
    if !ok {
        return Err(Error::Shape {
            op: "grid_sample (theta must be [batch, 2, 3])",
            lhs: s.to_vec(),
            rhs: theta.shape().to_vec(),
        });
    }
    Ok((s[0], s[1], s[2]))
}

/// Bilinear resampling of a batch of single-channel images.
///
/// `theta` holds the top two rows of a 3×3 affine matrix per batch item and
/// maps normalized output coordinates to normalized input coordinates.
/// Samples falling outside the input read as zero.
pub fn grid_sample<T: Scalar>(
    image: &Tensor<T>,
    theta: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let (batch, h, w) = check_grid_args(image, theta)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("grid_sample output must be at least 1x1"));
    }
    let img = image.data();
    let th = theta.data();
    let mut out = vec![T::zero(); batch * out_h * out_w];
    for b in 0..batch {
        let t = &th[b * 6..b * 6 + 6];
        let src = &img[b * h * w..(b + 1) * h * w];
        let dst = &mut out[b * out_h * out_w..(b + 1) * out_h * out_w];
        for i in 0..out_h {
            let yo: T = normalized_coord(i, out_h);
            for j in 0..out_w {
                let xo: T = normalized_coord(j, out_w);
                let u = t[0] * xo + t[1] * yo + t[2];
                let v = t[3] * xo + t[4] * yo + t[5];
                let p = tap(u, v, h, w);
                let i00 = pixel(src, h, w, p.y0, p.x0);
                let i01 = pixel(src, h, w, p.y0, p.x0 + 1);
                let i10 = pixel(src, h, w, p.y0 + 1, p.x0);
                let i11 = pixel(src, h, w, p.y0 + 1, p.x0 + 1);
                let one = T::one();
                dst[i * out_w + j] = (one - p.fy) * ((one - p.fx) * i00 + p.fx * i01)
                    + p.fy * ((one - p.fx) * i10 + p.fx * i11);
            }
        }
    }
    Ok(Tensor::from_parts(vec![batch, out_h, out_w], out))
}

/// Adjoint of [`grid_sample`]: accumulates into image and theta gradients.
pub(crate) fn grid_sample_backward<T: Scalar>(
    image: &Tensor<T>,
    theta: &Tensor<T>,
    grad_out: &[T],
    out_h: usize,
    out_w: usize,
    grad_image: Option<&mut [T]>,
    grad_theta: Option<&mut [T]>,
) {
    let s = image.shape();
    let (batch, h, w) = (s[0], s[1], s[2]);
    let img = image.data();
    let th = theta.data();
    let mut gi = grad_image;
    let mut gt = grad_theta;
    for b in 0..batch {
        let t = &th[b * 6..b * 6 + 6];
        let src = &img[b * h * w..(b + 1) * h * w];
        let go = &grad_out[b * out_h * out_w..(b + 1) * out_h * out_w];
        let mut acc = [T::zero(); 6];
        for i in 0..out_h {
            let yo: T = normalized_coord(i, out_h);
            for j in 0..out_w {
                let g = go[i * out_w + j];
                if g == T::zero() {
                    continue;
                }
                let xo: T = normalized_coord(j, out_w);
                let u = t[0] * xo + t[1] * yo + t[2];
                let v = t[3] * xo + t[4] * yo + t[5];
                let p = tap(u, v, h, w);
                let one = T::one();
                if let Some(gimg) = gi.as_deref_mut() {
                    let base = b * h * w;
                    let taps = [
                        (p.y0, p.x0, (one - p.fy) * (one - p.fx)),
                        (p.y0, p.x0 + 1, (one - p.fy) * p.fx),
                        (p.y0 + 1, p.x0, p.fy * (one - p.fx)),
                        (p.y0 + 1, p.x0 + 1, p.fy * p.fx),
                    ];
                    for (y, x, wgt) in taps {
                        if x >= 0 && y >= 0 && x < w as isize && y < h as isize {
                            gimg[base + y as usize * w + x as usize] += g * wgt;
                        }
                    }
                }
                if gt.is_some() {
                    let i00 = pixel(src, h, w, p.y0, p.x0);
                    let i01 = pixel(src, h, w, p.y0, p.x0 + 1);
                    let i10 = pixel(src, h, w, p.y0 + 1, p.x0);
                    let i11 = pixel(src, h, w, p.y0 + 1, p.x0 + 1);
                    let d_px = (one - p.fy) * (i01 - i00) + p.fy * (i11 - i10);
                    let d_py = (one - p.fx) * (i10 - i00) + p.fx * (i11 - i01);
                    let du = g * d_px * p.sx;
                    let dv = g * d_py * p.sy;
                    acc[0] += du * xo;
                    acc[1] += du * yo;
                    acc[2] += du;
                    acc[3] += dv * xo;
                    acc[4] += dv * yo;
                    acc[5] += dv;
                }
            }
        }
        if let Some(gth) = gt.as_deref_mut() {
            for k in 0..6 {
                gth[b * 6 + k] += acc[k];
            }
        }
    }
}

fn check_conv_args<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<()> {
    let (si, sk) = (input.shape(), kernels.shape());
    let ok = si.len() == 4
        && sk.len() == 4
        && si[0] == sk[0]
        && si[1] == sk[1]
        && sk[2] % 2 == 1
        && sk[3] % 2 == 1;
    if ok {
        Ok(())
    } else {
        Err(Error::Shape {
            op: "conv2d_depthwise (input [b,c,h,w], odd kernels [b,c,kh,kw])",
            lhs: si.to_vec(),
            rhs: sk.to_vec(),
        })
    }
}

/// Depth-wise 2-D cross-correlation with per-sample kernels, stride 1 and
/// zero padding that preserves the spatial size.
pub fn conv2d_depthwise<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    check_conv_args(input, kernels)?;
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (kh, kw) = (kernels.shape()[2], kernels.shape()[3]);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![T::zero(); x.len()];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let ker = &k[plane * kh * kw..(plane + 1) * kh * kw];
        let dst = &mut out[plane * h * w..(plane + 1) * h * w];
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = T::zero();
                for p in 0..kh as isize {
                    let y = i + p - ph;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for q in 0..kw as isize {
                        let xx = j + q - pw;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        acc += src[y as usize * w + xx as usize] * ker[(p as usize) * kw + q as usize];
                    }
                }
                dst[i as usize * w + j as usize] = acc;
            }
        }
    }
    Ok(Tensor::from_parts(s.to_vec(), out))
}

pub(crate) fn conv2d_depthwise_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_kernels: Option<&mut [T]>,
) {
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (kh, kw) = (kernels.shape()[2], kernels.shape()[3]);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let x = input.data();
    let k = kernels.data();
    let mut gi = grad_input;
    let mut gk = grad_kernels;
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let ker = &k[plane * kh * kw..(plane + 1) * kh * kw];
        let go = &grad_out[plane * h * w..(plane + 1) * h * w];
        for i in 0..h as isize {
            for j in 0..w as isize {
                let g = go[i as usize * w + j as usize];
                for p in 0..kh as isize {
                    let y = i + p - ph;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for q in 0..kw as isize {
                        let xx = j + q - pw;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let si = y as usize * w + xx as usize;
                        let ki = p as usize * kw + q as usize;
                        if let Some(gi) = gi.as_deref_mut() {
                            gi[plane * h * w + si] += g * ker[ki];
                        }
                        if let Some(gk) = gk.as_deref_mut() {
                            gk[plane * kh * kw + ki] += g * src[si];
                        }
                    }
                }
            }
        }
    }
}

/// Row-wise softmax over the last axis of a buffer laid out as `rows × cols`.
pub(crate) fn softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let m = src.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - m).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

pub(crate) fn logsumexp_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    x.chunks(cols)
        .map(|row| {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            if !m.is_finite() {
                return m;
            }
            m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
        })
        .collect()
}
