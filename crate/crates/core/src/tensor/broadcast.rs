//! Trailing-axis broadcasting: shapes are right-aligned, missing leading
//! axes count as 1, and an axis broadcasts only when one side has size 1.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

pub(crate) fn checked_broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    broadcast_shape(a, b).ok_or_else(|| Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

/// Per-output-axis strides of `shape` viewed through `out` (0 on broadcast axes).
fn view_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output position together with the matching input offsets.
fn for_each_pair(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (ia_step, ib_step) = (sa[rank - 1], sb[rank - 1]);
    let outer: usize = out[..rank - 1].iter().product();
    let mut counter = vec![0usize; rank - 1];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    let mut o = 0;
    for _ in 0..outer {
        let (mut ia, mut ib) = (base_a, base_b);
        for _ in 0..inner {
            f(o, ia, ib);
            o += 1;
            ia += ia_step;
            ib += ib_step;
        }
        // odometer increment over the outer axes
        for ax in (0..rank - 1).rev() {
            counter[ax] += 1;
            base_a += sa[ax];
            base_b += sb[ax];
            if counter[ax] < out[ax] {
                break;
            }
            base_a -= sa[ax] * out[ax];
            base_b -= sb[ax] * out[ax];
            counter[ax] = 0;
        }
    }
}

/// Element-wise binary map under broadcasting; `out` must be the broadcast shape.
pub(crate) fn zip_map<T: Scalar>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    if a_shape == b_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let n: usize = out.iter().product();
    if b.len() == 1 && a.len() == n {
        let y = b[0];
        return a.iter().map(|&x| f(x, y)).collect();
    }
    if a.len() == 1 && b.len() == n {
        let x = a[0];
        return b.iter().map(|&y| f(x, y)).collect();
    }
    // b repeats along leading axes of a (bias-style)
    if a.len() == n && out.ends_with(b_shape) && !b_shape.is_empty() {
        let m = b.len();
        return a
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b[i % m]))
            .collect();
    }
    let sa = view_strides(a_shape, out);
    let sb = view_strides(b_shape, out);
    let mut res = vec![T::zero(); n];
    for_each_pair(out, &sa, &sb, |o, ia, ib| res[o] = f(a[ia], b[ib]));
    res
}

/// Sums a gradient of shape `out` down to `target` (a shape broadcastable to `out`).
pub(crate) fn reduce_to<T: Scalar>(grad: &[T], out: &[usize], target: &[usize]) -> Vec<T> {
    let m: usize = target.iter().product();
    if m == grad.len() {
        return grad.to_vec();
    }
    if m == 1 {
        return vec![grad.iter().copied().sum()];
    }
    let mut res = vec![T::zero(); m];
    if out.ends_with(target) {
        for (i, &g) in grad.iter().enumerate() {
            res[i % m] += g;
        }
        return res;
    }
    let st = view_strides(target, out);
    let zeros = vec![0; out.len()];
    for_each_pair(out, &st, &zeros, |o, it, _| res[it] += grad[o]);
    res
}

/// Materializes `src` (of `shape`) at the broadcast shape `out`.
pub(crate) fn expand<T: Scalar>(src: &[T], shape: &[usize], out: &[usize]) -> Vec<T> {
    let n: usize = out.iter().product();
    if src.len() == n {
        return src.to_vec();
    }
    if src.len() == 1 {
        return vec![src[0]; n];
    }
    let s = view_strides(shape, out);
    let zeros = vec![0; out.len()];
    let mut res = vec![T::zero(); n];
    for_each_pair(out, &s, &zeros, |o, i, _| res[o] = src[i]);
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1], &[1, 4]), Some(vec![2, 4]));
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shape(&[4, 2, 3], &[2, 1]), Some(vec![4, 2, 3]));
    }

    #[test]
    fn zip_column_broadcast() {
        // [2,1] * [2,3]
        let a = [2.0f64, 3.0];
        let b = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = zip_map(&a, &[2, 1], &b, &[2, 3], &[2, 3], |x, y| x * y);
        assert_eq!(r, vec![2.0, 4.0, 6.0, 12.0, 15.0, 18.0]);
        let back = reduce_to(&r, &[2, 3], &[2, 1]);
        assert_eq!(back, vec![12.0, 45.0]);
    }

    #[test]
    fn expand_then_reduce_counts_copies() {
        let src = [1.0f64, 2.0, 3.0];
        let e = expand(&src, &[1, 3, 1], &[2, 3, 2]);
        assert_eq!(e.len(), 12);
        assert_eq!(&e[..6], &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let r = reduce_to(&e, &[2, 3, 2], &[1, 3, 1]);
        assert_eq!(r, vec![4.0, 8.0, 12.0]);
    }
}
