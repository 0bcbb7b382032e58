//! Factorized affine poses and bilinear attention.
//!
//! Coordinates are normalized so that pixel centers span [-1, 1] on each
//! axis. The placement matrix `T_d = T_st · T_r · T_k` maps object (glimpse)
//! coordinates to canvas coordinates: `t` is the object center and `s` its
//! extent as a fraction of the canvas. `T_e = T_k⁻¹ · T_r⁻¹ · T_st⁻¹` maps
//! canvas coordinates back into the object frame.
//!
//! The sampler pulls: output pixel `p` reads the input at `M · p`. Reading a
//! glimpse out of the canvas therefore samples with `T_d`, and writing an
//! object onto the canvas samples the object with `T_e`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tape, Tensor, Var};

/// Smallest scale accepted when inverting a pose.
pub const MIN_INVERTIBLE_SCALE: f64 = 1e-6;

/// Pose scalars in their canonical order.
pub const POSE_FIELDS: [&str; 7] = ["s_x", "s_y", "t_x", "t_y", "omega", "k_x", "k_y"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePose<T> {
    pub s_x: T,
    pub s_y: T,
    pub t_x: T,
    pub t_y: T,
    pub omega: T,
    pub k_x: T,
    pub k_y: T,
}

/// Which factors of the pose are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PoseFlags {
    pub enable_shear: bool,
    pub merge_rot_shear: bool,
}

impl PoseFlags {
    /// Number of pose scalars the inference network emits.
    pub fn dims(&self) -> usize {
        if self.enable_shear {
            7
        } else {
            5
        }
    }
}

impl<T: Scalar> AffinePose<T> {
    /// Converts every field to another element type.
    pub fn cast<U: Scalar>(&self) -> AffinePose<U> {
        let c = |v: T| U::lit(v.as_f64());
        AffinePose {
            s_x: c(self.s_x),
            s_y: c(self.s_y),
            t_x: c(self.t_x),
            t_y: c(self.t_y),
            omega: c(self.omega),
            k_x: c(self.k_x),
            k_y: c(self.k_y),
        }
    }

    pub fn identity() -> Self {
        AffinePose {
            s_x: T::one(),
            s_y: T::one(),
            t_x: T::zero(),
            t_y: T::zero(),
            omega: T::zero(),
            k_x: T::zero(),
            k_y: T::zero(),
        }
    }

    /// Isotropic pose without shear.
    pub fn new(scale: T, t_x: T, t_y: T, omega: T) -> Self {
        AffinePose {
            s_x: scale,
            s_y: scale,
            t_x,
            t_y,
            omega,
            ..Self::identity()
        }
    }

    pub fn to_array(&self) -> [T; 7] {
        [self.s_x, self.s_y, self.t_x, self.t_y, self.omega, self.k_x, self.k_y]
    }

    pub fn from_array(v: [T; 7]) -> Self {
        AffinePose {
            s_x: v[0],
            s_y: v[1],
            t_x: v[2],
            t_y: v[3],
            omega: v[4],
            k_x: v[5],
            k_y: v[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Maps unconstrained network outputs (first `flags.dims()` entries) to
    /// pose fields: `s = 0.1 + softplus`, `t = tanh`, `ω` as is,
    /// `k = 0.5·tanh`. Shear is zero when disabled.
    pub fn from_raw(raw: &[T], flags: PoseFlags) -> Result<Self> {
        if raw.len() != flags.dims() {
            return Err(Error::invalid(format!(
                "expected {} raw pose values, got {}",
                flags.dims(),
                raw.len()
            )));
        }
        let sp = |x: T| T::lit(0.1) + tensor_softplus(x);
        let half = T::lit(0.5);
        Ok(AffinePose {
            s_x: sp(raw[0]),
            s_y: sp(raw[1]),
            t_x: raw[2].tanh(),
            t_y: raw[3].tanh(),
            omega: raw[4],
            k_x: if flags.enable_shear { half * raw[5].tanh() } else { T::zero() },
            k_y: if flags.enable_shear { half * raw[6].tanh() } else { T::zero() },
        })
    }

    /// Inverse of [`AffinePose::from_raw`] on its range (used to place
    /// objects at chosen poses).
    pub fn to_raw(&self, flags: PoseFlags) -> Result<Vec<T>> {
        let inv_sp = |s: T| {
            let y = s - T::lit(0.1);
            if y <= T::zero() {
                return Err(Error::invalid(format!("scale {s} below the 0.1 floor")));
            }
            // softplus⁻¹(y) = ln(eᵞ − 1)
            Ok(y.exp_m1().ln())
        };
        let atanh = |t: T| {
            if t.abs() >= T::one() {
                return Err(Error::invalid(format!("translation {t} outside (-1, 1)")));
            }
            Ok(T::lit(0.5) * ((T::one() + t) / (T::one() - t)).ln())
        };
        let mut raw = vec![inv_sp(self.s_x)?, inv_sp(self.s_y)?, atanh(self.t_x)?, atanh(self.t_y)?, self.omega];
        if flags.enable_shear {
            raw.push(atanh(self.k_x * T::lit(2.0))?);
            raw.push(atanh(self.k_y * T::lit(2.0))?);
        }
        Ok(raw)
    }
}

fn tensor_softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Row-major 3×3 homogeneous transform with bottom row `[0, 0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMatrix<T>(pub [T; 9]);

impl<T: Scalar> AffineMatrix<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        AffineMatrix([o, z, z, z, o, z, z, z, o])
    }

    pub fn from_rows(a: T, b: T, c: T, d: T, e: T, f: T) -> Self {
        let (o, z) = (T::one(), T::zero());
        AffineMatrix([a, b, c, d, e, f, z, z, o])
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.0[r * 3 + c]
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = [T::zero(); 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = (0..3).map(|k| self.at(r, k) * other.at(k, c)).sum();
            }
        }
        AffineMatrix(out)
    }

    /// The two non-trivial rows, as consumed by the sampler.
    pub fn top_rows(&self) -> [T; 6] {
        let m = &self.0;
        [m[0], m[1], m[2], m[3], m[4], m[5]]
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn apply(&self, x: T, y: T) -> (T, T) {
        (
            self.at(0, 0) * x + self.at(0, 1) * y + self.at(0, 2),
            self.at(1, 0) * x + self.at(1, 1) * y + self.at(1, 2),
        )
    }
}

/// The factors of a pose: translation/scale, rotation, shear and their product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseMatrices<T> {
    pub st: AffineMatrix<T>,
    pub r: AffineMatrix<T>,
    pub k: AffineMatrix<T>,
    pub d: AffineMatrix<T>,
}

fn rotation<T: Scalar>(omega: T) -> AffineMatrix<T> {
    let (s, c) = omega.sin_cos();
    AffineMatrix::from_rows(c, -s, T::zero(), s, c, T::zero())
}

fn shear<T: Scalar>(k_x: T, k_y: T) -> AffineMatrix<T> {
    AffineMatrix::from_rows(T::one() + k_x * k_y, k_x, T::zero(), k_y, T::one(), T::zero())
}

fn active_shear<T: Scalar>(pose: &AffinePose<T>, flags: PoseFlags) -> (T, T) {
    if flags.enable_shear {
        (pose.k_x, pose.k_y)
    } else {
        (T::zero(), T::zero())
    }
}

/// `T_st`, `T_r`, `T_k` and `T_d = T_st · T_r · T_k`.
///
/// With shear disabled `T_k` is the identity. With `merge_rot_shear` the
/// rotation and shear form a single block returned in `r` (and `k` is the
/// identity).
pub fn pose_to_matrices<T: Scalar>(pose: &AffinePose<T>, flags: PoseFlags) -> Result<PoseMatrices<T>> {
    if !pose.is_finite() {
        return Err(Error::NonFinite {
            what: format!("pose {pose:?}"),
            coordinate: 0,
        });
    }
    let st = AffineMatrix::from_rows(pose.s_x, T::zero(), pose.t_x, T::zero(), pose.s_y, pose.t_y);
    let (k_x, k_y) = active_shear(pose, flags);
    let (r, k) = if flags.merge_rot_shear {
        (rotation(pose.omega).mul(&shear(k_x, k_y)), AffineMatrix::identity())
    } else {
        (rotation(pose.omega), shear(k_x, k_y))
    };
    let d = st.mul(&r).mul(&k);
    Ok(PoseMatrices { st, r, k, d })
}

/// `T_e = T_k⁻¹ · T_r⁻¹ · T_st⁻¹`, each factor inverted in closed form.
pub fn inverse_pose_matrix<T: Scalar>(pose: &AffinePose<T>, flags: PoseFlags) -> Result<AffineMatrix<T>> {
    if !pose.is_finite() {
        return Err(Error::NonFinite {
            what: format!("pose {pose:?}"),
            coordinate: 0,
        });
    }
    let tol = T::lit(MIN_INVERTIBLE_SCALE);
    if pose.s_x <= tol || pose.s_y <= tol {
        return Err(Error::invalid(format!(
            "pose scale ({}, {}) not invertible",
            pose.s_x, pose.s_y
        )));
    }
    let (ix, iy) = (T::one() / pose.s_x, T::one() / pose.s_y);
    let st_inv = AffineMatrix::from_rows(ix, T::zero(), -pose.t_x * ix, T::zero(), iy, -pose.t_y * iy);
    let r_inv = rotation(-pose.omega);
    let (k_x, k_y) = active_shear(pose, flags);
    let k_inv = AffineMatrix::from_rows(T::one(), -k_x, T::zero(), -k_y, T::one() + k_x * k_y, T::zero());
    Ok(k_inv.mul(&r_inv).mul(&st_inv))
}

/// Resamples a single `H×W` image through `matrix` (pull convention).
pub fn grid_sample<T: Scalar>(
    image: &Tensor<T>,
    matrix: &AffineMatrix<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() != 2 {
        return Err(Error::Shape {
            op: "grid_sample (image must be [h, w])",
            lhs: s.to_vec(),
            rhs: vec![out_h, out_w],
        });
    }
    let batched = image.reshape(&[1, s[0], s[1]])?;
    let theta = Tensor::from_vec(&[1, 2, 3], matrix.top_rows().to_vec())?;
    tensor::grid_sample(&batched, &theta, out_h, out_w)?.reshape(&[out_h, out_w])
}

/// Canvas pixel position of the normalized point `(x, y)`.
pub fn to_pixels<T: Scalar>(x: T, y: T, height: usize, width: usize) -> (T, T) {
    let half_w = T::lit((width as f64 - 1.0) * 0.5);
    let half_h = T::lit((height as f64 - 1.0) * 0.5);
    ((x + T::one()) * half_w, (y + T::one()) * half_h)
}

/// Batched pose on the tape: one `[B, 1]` column per field.
#[derive(Debug, Clone, Copy)]
pub struct PoseVars<'t, T: Scalar> {
    pub s_x: Var<'t, T>,
    pub s_y: Var<'t, T>,
    pub t_x: Var<'t, T>,
    pub t_y: Var<'t, T>,
    pub omega: Var<'t, T>,
    pub k_x: Option<Var<'t, T>>,
    pub k_y: Option<Var<'t, T>>,
}

impl<'t, T: Scalar> PoseVars<'t, T> {
    /// Applies the raw-output mapping of [`AffinePose::from_raw`] to a
    /// `[B, flags.dims()]` tape variable.
    pub fn from_raw(raw: Var<'t, T>, flags: PoseFlags) -> Result<Self> {
        let shape = raw.shape();
        if shape.len() != 2 || shape[1] != flags.dims() {
            return Err(Error::Shape {
                op: "PoseVars::from_raw",
                lhs: shape,
                rhs: vec![flags.dims()],
            });
        }
        let col = |i: usize| raw.slice(1, i, 1);
        let floor = T::lit(0.1);
        let (k_x, k_y) = if flags.enable_shear {
            (
                Some(col(5)?.tanh().scale(T::lit(0.5))),
                Some(col(6)?.tanh().scale(T::lit(0.5))),
            )
        } else {
            (None, None)
        };
        Ok(PoseVars {
            s_x: col(0)?.softplus().add_scalar(floor),
            s_y: col(1)?.softplus().add_scalar(floor),
            t_x: col(2)?.tanh(),
            t_y: col(3)?.tanh(),
            omega: col(4)?,
            k_x,
            k_y,
        })
    }

    /// Builds a batch from explicit poses (used for controlled generation).
    pub fn from_poses(tape: &'t Tape<T>, poses: &[AffinePose<T>], flags: PoseFlags) -> Result<Self> {
        let b = poses.len();
        let column = |f: fn(&AffinePose<T>) -> T| -> Result<Var<'t, T>> {
            Ok(tape.constant(Tensor::from_vec(&[b, 1], poses.iter().map(f).collect())?))
        };
        Ok(PoseVars {
            s_x: column(|p| p.s_x)?,
            s_y: column(|p| p.s_y)?,
            t_x: column(|p| p.t_x)?,
            t_y: column(|p| p.t_y)?,
            omega: column(|p| p.omega)?,
            k_x: if flags.enable_shear { Some(column(|p| p.k_x)?) } else { None },
            k_y: if flags.enable_shear { Some(column(|p| p.k_y)?) } else { None },
        })
    }

    /// Concrete poses of every batch item.
    pub fn values(&self) -> Vec<AffinePose<T>> {
        let get = |v: &Var<'t, T>| v.value().to_vec();
        let (sx, sy, tx, ty, om) = (get(&self.s_x), get(&self.s_y), get(&self.t_x), get(&self.t_y), get(&self.omega));
        let kx = self.k_x.as_ref().map(get);
        let ky = self.k_y.as_ref().map(get);
        (0..sx.len())
            .map(|i| AffinePose {
                s_x: sx[i],
                s_y: sy[i],
                t_x: tx[i],
                t_y: ty[i],
                omega: om[i],
                k_x: kx.as_ref().map_or(T::zero(), |k| k[i]),
                k_y: ky.as_ref().map_or(T::zero(), |k| k[i]),
            })
            .collect()
    }

    /// Rotation-shear block `R·K` as four `[B, 1]` entries.
    fn rot_shear(&self) -> Result<[Var<'t, T>; 4]> {
        let (s, c) = (self.omega.sin(), self.omega.cos());
        match (self.k_x, self.k_y) {
            (Some(kx), Some(ky)) => {
                let a = kx.mul(ky)?.add_scalar(T::one());
                Ok([
                    c.mul(a)?.sub(s.mul(ky)?)?,
                    c.mul(kx)?.sub(s)?,
                    s.mul(a)?.add(c.mul(ky)?)?,
                    s.mul(kx)?.add(c)?,
                ])
            }
            _ => Ok([c, s.neg(), s, c]),
        }
    }

    /// Inverse block `K⁻¹·R⁻¹` as four `[B, 1]` entries.
    fn rot_shear_inverse(&self) -> Result<[Var<'t, T>; 4]> {
        let (s, c) = (self.omega.sin(), self.omega.cos());
        match (self.k_x, self.k_y) {
            (Some(kx), Some(ky)) => {
                let a = kx.mul(ky)?.add_scalar(T::one());
                Ok([
                    c.add(kx.mul(s)?)?,
                    s.sub(kx.mul(c)?)?,
                    ky.mul(c)?.add(a.mul(s)?)?.neg(),
                    a.mul(c)?.sub(ky.mul(s)?)?,
                ])
            }
            _ => Ok([c, s, s.neg(), c]),
        }
    }

    /// Top rows of `T_d` as a `[B, 6]` variable.
    pub fn forward_rows(&self) -> Result<Var<'t, T>> {
        let [m00, m01, m10, m11] = self.rot_shear()?;
        let tape = self.s_x.tape();
        tape.concat(
            &[
                self.s_x.mul(m00)?,
                self.s_x.mul(m01)?,
                self.t_x,
                self.s_y.mul(m10)?,
                self.s_y.mul(m11)?,
                self.t_y,
            ],
            1,
        )
    }

    /// Top rows of `T_e = T_d⁻¹` as a `[B, 6]` variable.
    pub fn inverse_rows(&self) -> Result<Var<'t, T>> {
        let [n00, n01, n10, n11] = self.rot_shear_inverse()?;
        let ux = self.t_x.div(self.s_x)?;
        let uy = self.t_y.div(self.s_y)?;
        let tape = self.s_x.tape();
        let tx = n00.mul(ux)?.add(n01.mul(uy)?)?.neg();
        let ty = n10.mul(ux)?.add(n11.mul(uy)?)?.neg();
        tape.concat(
            &[
                n00.div(self.s_x)?,
                n01.div(self.s_y)?,
                tx,
                n10.div(self.s_x)?,
                n11.div(self.s_y)?,
                ty,
            ],
            1,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const SHEAR: PoseFlags = PoseFlags {
        enable_shear: true,
        merge_rot_shear: false,
    };

    fn random_pose(rng: &mut ChaCha8Rng) -> AffinePose<f64> {
        AffinePose {
            s_x: rng.random_range(0.3..2.0),
            s_y: rng.random_range(0.3..2.0),
            t_x: rng.random_range(-0.8..0.8),
            t_y: rng.random_range(-0.8..0.8),
            omega: rng.random_range(-PI..PI),
            k_x: rng.random_range(-0.5..0.5),
            k_y: rng.random_range(-0.5..0.5),
        }
    }

    #[test]
    fn identity_pose_gives_identity() {
        let m = pose_to_matrices(&AffinePose::<f64>::identity(), SHEAR).unwrap();
        assert_eq!(m.d, AffineMatrix::identity());
        let e = inverse_pose_matrix(&AffinePose::<f64>::identity(), SHEAR).unwrap();
        assert_eq!(e, AffineMatrix::identity());
    }

    #[test]
    fn quarter_turn_and_unit_shear() {
        let pose = AffinePose {
            omega: PI / 2.0,
            ..AffinePose::<f64>::identity()
        };
        let m = pose_to_matrices(&pose, SHEAR).unwrap();
        let want = AffineMatrix::from_rows(0.0, -1.0, 0.0, 1.0, 0.0, 0.0);
        assert!(m.r.max_abs_diff(&want) < 1e-15);

        let pose = AffinePose {
            k_x: 1.0,
            ..AffinePose::<f64>::identity()
        };
        let m = pose_to_matrices(&pose, SHEAR).unwrap();
        assert_eq!(m.k, AffineMatrix::from_rows(1.0, 1.0, 0.0, 0.0, 1.0, 0.0));
        let no_shear = pose_to_matrices(&pose, PoseFlags::default()).unwrap();
        assert_eq!(no_shear.k, AffineMatrix::identity());
    }

    #[test]
    fn merged_block_equals_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(&mut rng);
        let merged = PoseFlags {
            enable_shear: true,
            merge_rot_shear: true,
        };
        let a = pose_to_matrices(&pose, SHEAR).unwrap();
        let b = pose_to_matrices(&pose, merged).unwrap();
        assert!(a.d.max_abs_diff(&b.d) < 1e-14);
        assert_eq!(b.k, AffineMatrix::identity());
    }

    #[test]
    fn inverse_identity_holds_for_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let id64 = AffineMatrix::<f64>::identity();
        let id32 = AffineMatrix::<f32>::identity();
        for _ in 0..1000 {
            let p = random_pose(&mut rng);
            let d = pose_to_matrices(&p, SHEAR).unwrap().d;
            let e = inverse_pose_matrix(&p, SHEAR).unwrap();
            assert!(e.mul(&d).max_abs_diff(&id64) <= 1e-10);
            let p32 = AffinePose::from_array(p.to_array().map(|v| v as f32));
            let d32 = pose_to_matrices(&p32, SHEAR).unwrap().d;
            let e32 = inverse_pose_matrix(&p32, SHEAR).unwrap();
            assert!(e32.mul(&d32).max_abs_diff(&id32) <= 1e-5);
        }
    }

    #[test]
    fn translation_inverse_and_degenerate_scale() {
        let p = AffinePose {
            t_x: 0.3,
            t_y: -0.2,
            ..AffinePose::<f64>::identity()
        };
        let e = inverse_pose_matrix(&p, SHEAR).unwrap();
        assert!((e.at(0, 2) + 0.3).abs() < 1e-15 && (e.at(1, 2) - 0.2).abs() < 1e-15);
        let bad = AffinePose {
            s_x: 1e-7,
            ..AffinePose::<f64>::identity()
        };
        assert!(inverse_pose_matrix(&bad, SHEAR).is_err());
        let nan = AffinePose {
            t_x: f64::NAN,
            ..AffinePose::<f64>::identity()
        };
        assert!(pose_to_matrices(&nan, SHEAR).is_err());
    }

    #[test]
    fn raw_mapping_round_trips() {
        let raw = [0.3, -1.2, 0.5, -0.4, 2.0, 0.1, -0.7];
        let p = AffinePose::<f64>::from_raw(&raw, SHEAR).unwrap();
        assert!(p.s_x > 0.1 && p.s_y > 0.1 && p.k_x.abs() < 0.5);
        let back = p.to_raw(SHEAR).unwrap();
        for (a, b) in raw.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn tape_rows_match_plain_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for flags in [SHEAR, PoseFlags::default()] {
            let poses: Vec<_> = (0..20)
                .map(|_| {
                    let mut p = random_pose(&mut rng);
                    if !flags.enable_shear {
                        p.k_x = 0.0;
                        p.k_y = 0.0;
                    }
                    p
                })
                .collect();
            let tape = Tape::<f64>::new();
            let pv = PoseVars::from_poses(&tape, &poses, flags).unwrap();
            let fwd = pv.forward_rows().unwrap().value();
            let inv = pv.inverse_rows().unwrap().value();
            for (i, p) in poses.iter().enumerate() {
                let d = pose_to_matrices(p, flags).unwrap().d.top_rows();
                let e = inverse_pose_matrix(p, flags).unwrap().top_rows();
                for j in 0..6 {
                    assert!((fwd.data()[i * 6 + j] - d[j]).abs() < 1e-12);
                    assert!((inv.data()[i * 6 + j] - e[j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_image_samples_to_zero() {
        let img = Tensor::<f64>::zeros(&[8, 8]);
        let m = pose_to_matrices(&AffinePose::new(0.4, 0.2, -0.1, 0.7), SHEAR).unwrap().d;
        let out = grid_sample(&img, &m, 5, 6).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    fn psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let mse = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / a.numel() as f64;
        10.0 * (1.0 / mse).log10()
    }

    #[test]
    fn write_then_read_round_trip() {
        let (gh, gw, ch, cw) = (28, 28, 64, 64);
        let glimpse = Tensor::<f64>::from_fn(&[gh, gw], |i| {
            let (y, x) = ((i / gw) as f64 / (gh - 1) as f64, (i % gw) as f64 / (gw - 1) as f64);
            0.5 + 0.4 * (3.0 * x).sin() * (2.0 * y).cos()
        });
        let pose = AffinePose::new(0.5, 0.2, -0.3, 0.4);
        let d = pose_to_matrices(&pose, SHEAR).unwrap().d;
        let e = inverse_pose_matrix(&pose, SHEAR).unwrap();
        let canvas = grid_sample(&glimpse, &e, ch, cw).unwrap();
        let back = grid_sample(&canvas, &d, gh, gw).unwrap();
        assert!(psnr(&glimpse, &back) >= 25.0, "{}", psnr(&glimpse, &back));
    }
}
