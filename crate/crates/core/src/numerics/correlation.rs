//! Correlation coefficients and rank transforms.
//!
//! Every coefficient comes back as a [`Correlation`]: the value plus a flag
//! raised when an input had (numerically) zero variance or was fully tied.
//! Degenerate results always carry the value `0.0`, never NaN.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Variance threshold below which a vector counts as constant.
pub const VARIANCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

impl Correlation {
    pub const DEGENERATE: Correlation = Correlation { value: 0.0, degenerate: true };

    fn ok(value: f64) -> Self {
        Correlation { value: value.clamp(-1.0, 1.0), degenerate: false }
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::TooShort { needed: 2, got: x.len() });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if sxx / n < VARIANCE_EPS || syy / n < VARIANCE_EPS {
        return Ok(Correlation::DEGENERATE);
    }
    Ok(Correlation::ok(sxy / (sxx * syy).sqrt()))
}

/// Ranks starting at 1, tied values sharing the average of their positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RankVector(Vec<f64>);

impl RankVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn rank_transform(v: &[f64]) -> Result<RankVector> {
    if v.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    Ok(RankVector(ranks))
}

/// Spearman rank correlation: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let rx = rank_transform(x)?;
    let ry = rank_transform(y)?;
    pearson(rx.as_slice(), ry.as_slice())
}

/// Kendall's tau-b, computed with Knight's O(n log n) merge-sort algorithm.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pair(x, y)?;
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |t: u64| t * t.saturating_sub(1) / 2;
    let total = pairs(n as u64);

    // ties in x, and joint ties in (x, y)
    let (mut x_ties, mut joint_ties) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        if x[a] == x[b] {
            run_x += 1;
            if y[a] == y[b] {
                run_xy += 1;
            } else {
                joint_ties += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            x_ties += pairs(run_x);
            joint_ties += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    x_ties += pairs(run_x);
    joint_ties += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);

    let mut y_ties = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            y_ties += pairs(run_y);
            run_y = 1;
        }
    }
    y_ties += pairs(run_y);

    let denom_x = total - x_ties;
    let denom_y = total - y_ties;
    if denom_x == 0 || denom_y == 0 {
        return Ok(Correlation::DEGENERATE);
    }
    let numer = total as i128 - x_ties as i128 - y_ties as i128 + joint_ties as i128
        - 2 * swaps as i128;
    Ok(Correlation::ok(numer as f64 / ((denom_x as f64) * (denom_y as f64)).sqrt()))
}

/// Stable merge sort of `v`, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (lo, hi) = v.split_at_mut(mid);
        let (blo, bhi) = buf.split_at_mut(mid);
        merge_count(lo, blo) + merge_count(hi, bhi)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + (n - j)].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// `1 - pearson(row_i, row_j)` for every pair of rows.
///
/// Rows whose variance falls below [`VARIANCE_EPS`] correlate as 0 with
/// everything (including themselves), so their distances are 1; the second
/// return value reports whether any such row was present.
pub fn pairwise_pearson_distance(rows: &Matrix) -> Result<(Matrix, bool)> {
    let (n, d) = rows.shape();
    if n < 2 || d < 2 {
        return Err(Error::shape("at least 2x2", format!("{n}x{d}")));
    }
    let mut centered_rows = Vec::with_capacity(n);
    let mut degenerate = false;
    for row in rows.row_iter() {
        let m = mean(row);
        let centered: Vec<f64> = row.iter().map(|v| v - m).collect();
        let ss: f64 = centered.iter().map(|v| v * v).sum();
        if ss / (d as f64) < VARIANCE_EPS {
            degenerate = true;
            centered_rows.push(None);
        } else {
            centered_rows.push(Some((centered, ss)));
        }
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let r = match (&centered_rows[i], &centered_rows[j]) {
                (Some(_), Some(_)) if i == j => 1.0,
                (Some((a, sa)), Some((b, sb))) => {
                    let sxy: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                    (sxy / (sa * sb).sqrt()).clamp(-1.0, 1.0)
                }
                _ => 0.0,
            };
            let dist = 1.0 - r;
            out.set(i, j, dist);
            out.set(j, i, dist);
        }
    }
    Ok((out, degenerate))
}

/// Strict upper-triangle entries `(0,1), (0,2), …, (1,2), …` in row-major
/// order; for a symmetric matrix this is the lower triangle.
pub fn lower_triangle(d: &Matrix) -> Result<Vec<f64>> {
    if !d.is_square() {
        return Err(Error::shape("square matrix", format!("{}x{}", d.rows(), d.cols())));
    }
    let n = d.rows();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        out.extend_from_slice(&d.row(i)[i + 1..]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn pearson_examples() {
        assert!(close(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().value, 1.0));
        assert!(close(pearson(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value, -1.0));
        let flat = pearson(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(flat, Correlation::DEGENERATE);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(pearson(&[1.0], &[1.0]), Err(Error::TooShort { .. })));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_transform(&[10.0, 20.0, 30.0]).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(rank_transform(&[5.0, 5.0]).unwrap().as_slice(), &[1.5, 1.5]);
        assert_eq!(
            rank_transform(&[3.0, 1.0, 2.0, 2.0]).unwrap().as_slice(),
            &[4.0, 1.0, 2.5, 2.5]
        );
        assert!(rank_transform(&[]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert!(close(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().value, -1.0));
        assert!(close(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().value, 0.8));
        assert!(close(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap().value, 1.0));
        assert!(spearman(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap().degenerate);
    }

    #[test]
    fn kendall_examples() {
        assert!(close(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().value, 1.0));
        assert!(close(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().value, 1.0 / 3.0));
        assert!(close(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().value, -1.0));
        let tied = kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(tied, Correlation::DEGENERATE);
    }

    #[test]
    fn distance_examples() {
        let same = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let (d, deg) = pairwise_pearson_distance(&same).unwrap();
        assert!(!deg);
        assert!(d.as_slice().iter().all(|v| v.abs() < 1e-15));

        let opposite = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let (d, _) = pairwise_pearson_distance(&opposite).unwrap();
        assert_eq!(d.as_slice(), &[0.0, 2.0, 2.0, 0.0]);

        let onehot = Matrix::one_hot(&[0, 1, 2], 3).unwrap();
        let (d, _) = pairwise_pearson_distance(&onehot).unwrap();
        assert!(close(d.get(0, 1), 1.5));
        assert!(close(d.get(1, 2), 1.5));

        let thin = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(pairwise_pearson_distance(&thin).is_err());
    }

    #[test]
    fn constant_row_is_flagged() {
        let m = Matrix::from_rows(&[[1.0, 1.0, 1.0], [1.0, 2.0, 3.0]]).unwrap();
        let (d, deg) = pairwise_pearson_distance(&m).unwrap();
        assert!(deg);
        assert_eq!(d.get(0, 0), 1.0);
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn lower_triangle_order() {
        let d = Matrix::from_rows(&[[0.0, 7.0], [7.0, 0.0]]).unwrap();
        assert_eq!(lower_triangle(&d).unwrap(), vec![7.0]);
        let d3 = Matrix::from_rows(&[[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]]).unwrap();
        assert_eq!(lower_triangle(&d3).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(lower_triangle(&Matrix::zeros(4, 4)).unwrap().len(), 6);
        assert!(lower_triangle(&Matrix::zeros(2, 3)).is_err());
    }
}
