use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{Tape, Tensor, Var};

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck<T> {
    /// max over coordinates of |analytic - numeric| / max(1, |numeric|)
    pub max_rel_error: T,
    pub worst_coordinate: usize,
    pub analytic: Tensor<T>,
    pub numeric: Tensor<T>,
}

fn eval<T, F>(f: &F, point: Tensor<T>) -> Result<T>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let x = tape.constant(point);
    let y = f(&tape, x)?;
    let v = y.value();
    if v.numel() != 1 {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Checks the reverse-mode gradient of scalar `f` at `point` against central
/// differences with step `h`. A non-finite probe is reported with the
/// coordinate being perturbed.
pub fn grad_check<T, F>(f: F, point: &Tensor<T>, h: T) -> Result<GradCheck<T>>
where
    T: Scalar,
    F: for<'t> Fn(&'t Tape<T>, Var<'t, T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&tape, x)?;
    let centre = y.value();
    if centre.numel() == 1 && !centre.item().is_finite() {
        return Err(Error::NonFinite {
            what: "f(x)".into(),
            coordinate: 0,
        });
    }
    let grads = tape.backward(y)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let base = point.to_vec();
    let mut numeric = vec![T::zero(); base.len()];
    let two_h = h + h;
    for (i, slot) in numeric.iter_mut().enumerate() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = eval(&f, Tensor::from_parts(point.shape().to_vec(), plus))?;
        let fm = eval(&f, Tensor::from_parts(point.shape().to_vec(), minus))?;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite {
                what: "f(x ± h·e_i)".into(),
                coordinate: i,
            });
        }
        *slot = (fp - fm) / two_h;
    }

    let mut worst = (T::zero(), 0);
    for (i, (&a, &n)) in analytic.data().iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / n.abs().max(T::one());
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst_coordinate: worst.1,
        analytic,
        numeric: Tensor::from_parts(point.shape().to_vec(), numeric),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let r = grad_check(|_, x| Ok(x.square().sum()), &Tensor::scalar(3.0f64), 1e-4).unwrap();
        assert!(r.max_rel_error <= 1e-8, "{}", r.max_rel_error);
        assert!((r.analytic.item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_probe_is_reported() {
        // ln(x) at x = 0.5e-4 with h = 1e-4 probes ln of a negative number
        let err = grad_check(|_, x| Ok(x.ln().sum()), &Tensor::from_f64(&[2], &[1.0, 0.5e-4]).unwrap(), 1e-4)
            .unwrap_err();
        match err {
            Error::NonFinite { coordinate, .. } => assert_eq!(coordinate, 1),
            other => panic!("unexpected {other}"),
        }
    }
}
