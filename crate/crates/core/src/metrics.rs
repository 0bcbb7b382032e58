//! Reconstruction error, count accuracy and the best-relabeling category
//! correspondence rate.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Matching radius between predicted and true centers, in pixels.
pub const MATCH_RADIUS: f64 = 10.0;

/// Mean of `(x − y)²` over every element.
pub fn mse<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    if x.shape() != y.shape() {
        return Err(Error::Shape {
            op: "mse",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let sum: T = x.data().iter().zip(y.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / T::lit(x.numel() as f64))
}

/// Fraction of images whose predicted count equals the true count.
pub fn count_accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predicted counts for {} images",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("count accuracy of zero images"));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// A labeled object center in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub category: usize,
    pub x: f64,
    pub y: f64,
}

/// Greedy nearest-center pairing: repeatedly pairs the globally closest
/// (prediction, truth) couple within `radius` and removes both. Returns
/// `(prediction index, truth index)` pairs in pairing order.
pub fn match_objects(predicted: &[LabeledPoint], truth: &[LabeledPoint], radius: f64) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d = (p.x - t.x).hypot(p.y - t.y);
            if d <= radius {
                candidates.push((d, i, j));
            }
        }
    }
    // ties broken by index for determinism
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; predicted.len()];
    let mut used_t = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// `k × k` counts of matched (predicted category, true category) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    k: usize,
    counts: Vec<u64>,
}

impl ContingencyTable {
    pub fn new(k: usize) -> Self {
        ContingencyTable {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, predicted: usize, truth: usize) -> u64 {
        self.counts[predicted * self.k + truth]
    }

    pub fn add(&mut self, predicted: usize, truth: usize) -> Result<()> {
        if predicted >= self.k || truth >= self.k {
            return Err(Error::invalid(format!(
                "category pair ({predicted}, {truth}) outside a {k}-category table",
                k = self.k
            )));
        }
        self.counts[predicted * self.k + truth] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ContingencyTable) -> Result<()> {
        if other.k != self.k {
            return Err(Error::invalid("tables of different size"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Rows as text, one line per predicted category.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for a in 0..self.k {
            let row: Vec<String> = (0..self.k).map(|b| self.get(a, b).to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }
}

/// An optimal injective mapping row → `mapping[row]` and its total reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub mapping: Vec<usize>,
    pub value: f64,
}

/// Maximum-reward assignment on a square row-major `k × k` table
/// (Hungarian method with potentials, O(k³)).
pub fn assignment_solve(reward: &[f64], k: usize) -> Result<Assignment> {
    if reward.len() != k * k {
        return Err(Error::invalid(format!("assignment table has {} entries, not {k}×{k}", reward.len())));
    }
    if let Some(i) = reward.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "assignment table".into(),
            coordinate: i,
        });
    }
    if k == 0 {
        return Ok(Assignment {
            mapping: vec![],
            value: 0.0,
        });
    }
    // minimize cost = -reward; 1-based arrays with a sentinel column 0
    let cost = |i: usize, j: usize| -reward[(i - 1) * k + (j - 1)];
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut mapping = vec![0; k];
    for j in 1..=k {
        mapping[owner[j] - 1] = j - 1;
    }
    let value = mapping.iter().enumerate().map(|(i, &j)| reward[i * k + j]).sum();
    Ok(Assignment { mapping, value })
}

/// Best-relabeling correspondence rate: the largest number of matched pairs
/// explained by one injective predicted → true mapping, over `total_truths`.
pub fn correspondence_rate(table: &ContingencyTable, total_truths: u64) -> Result<(f64, Assignment)> {
    if table.total() > total_truths {
        return Err(Error::invalid(format!(
            "{} matched pairs exceed {total_truths} true labels",
            table.total()
        )));
    }
    let k = table.k();
    let reward: Vec<f64> = table.counts.iter().map(|&c| c as f64).collect();
    let a = assignment_solve(&reward, k)?;
    let rate = if total_truths == 0 { 0.0 } else { a.value / total_truths as f64 };
    Ok((rate, a))
}

/// Builds a table from matched `(predicted, true)` category pairs; predicted
/// ids must be below `k`.
pub fn table_from_pairs(pairs: &[(usize, usize)], k: usize) -> Result<ContingencyTable> {
    let mut t = ContingencyTable::new(k);
    for &(p, q) in pairs {
        t.add(p, q)?;
    }
    Ok(t)
}

/// Evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub images: usize,
    pub mse: f64,
    pub count_accuracy: f64,
    pub r_corr: f64,
    pub true_objects: u64,
    pub matched: u64,
    /// best mapping predicted → true category
    pub mapping: Vec<usize>,
    pub table: ContingencyTable,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "images,mse,count_accuracy,r_corr,true_objects,matched";

    /// `key=value` lines followed by the contingency table rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images={}", self.images);
        let _ = writeln!(s, "mse={:.6}", self.mse);
        let _ = writeln!(s, "count_accuracy={:.6}", self.count_accuracy);
        let _ = writeln!(s, "r_corr={:.6}", self.r_corr);
        let _ = writeln!(s, "true_objects={}", self.true_objects);
        let _ = writeln!(s, "matched={}", self.matched);
        let mapping: Vec<String> = self.mapping.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "mapping={}", mapping.join(","));
        for (i, line) in self.table.to_text().lines().enumerate() {
            let _ = writeln!(s, "confusion.{i}={line}");
        }
        s
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{},{}",
            self.images, self.mse, self.count_accuracy, self.r_corr, self.true_objects, self.matched
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let x = Tensor::<f64>::ones(&[2, 3]);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        assert_eq!(mse(&x, &Tensor::zeros(&[2, 3])).unwrap(), 1.0);
        assert!(mse(&x, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn count_accuracy_examples() {
        assert_eq!(count_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(count_accuracy(&[1, 2, 3], &[0, 1, 2]).unwrap(), 0.0);
        assert!(count_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn assignment_examples() {
        let mut t = vec![1.0; 9];
        for i in 0..3 {
            t[i * 3 + i] = 10.0;
        }
        let a = assignment_solve(&t, 3).unwrap();
        assert_eq!(a.mapping, vec![0, 1, 2]);
        assert_eq!(a.value, 30.0);
        let flat = assignment_solve(&[2.0; 16], 4).unwrap();
        assert_eq!(flat.value, 8.0);
        assert!(assignment_solve(&[1.0; 6], 3).is_err());
    }

    #[test]
    fn matching_examples() {
        let p = |x, y| LabeledPoint { category: 0, x, y };
        assert_eq!(match_objects(&[p(5.0, 5.0)], &[p(5.0, 5.0)], MATCH_RADIUS), vec![(0, 0)]);
        assert!(match_objects(&[], &[p(5.0, 5.0)], MATCH_RADIUS).is_empty());
        assert!(match_objects(&[p(30.0, 5.0)], &[p(5.0, 5.0)], MATCH_RADIUS).is_empty());
    }
}
