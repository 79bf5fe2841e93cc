//! Independent reference implementations used as test oracles. They follow
//! the textbook definitions directly and share no code with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskdistill::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Random rows on the probability simplex.
pub fn random_distributions(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    Matrix::new(rows, cols, data).unwrap()
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// `tr(K H L H) / (n - 1)^2` with `H = I - 11ᵀ/n` formed explicitly.
pub fn hsic_oracle(k: &Matrix, l: &Matrix) -> f64 {
    let n = k.rows();
    let h: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64).collect())
        .collect();
    let mul = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|t| a[i][t] * b[t][j]).sum()).collect()).collect()
    };
    let khlh = mul(&mul(&mul(&to_rows(k), &h), &to_rows(l)), &h);
    let trace: f64 = (0..n).map(|i| khlh[i][i]).sum();
    trace / ((n - 1) as f64).powi(2)
}

pub fn gram_oracle(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum());
        }
    }
    Matrix::new(n, n, data).unwrap()
}

/// Linear CKA as the HSIC ratio `HSIC(K,L) / sqrt(HSIC(K,K) HSIC(L,L))`.
pub fn cka_oracle(x: &Matrix, y: &Matrix) -> f64 {
    let k = gram_oracle(x);
    let l = gram_oracle(y);
    hsic_oracle(&k, &l) / (hsic_oracle(&k, &k) * hsic_oracle(&l, &l)).sqrt()
}

/// Average ranks (1-based) by counting, quadratic in the length.
pub fn ranks_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Sample Pearson correlation; 0 when either side has no variance.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx / n < 1e-12 || syy / n < 1e-12 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_oracle(&ranks_oracle(x), &ranks_oracle(y))
}

/// Kendall tau-b by enumerating all pairs.
pub fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tied_x += 1;
            }
            if dy == 0.0 {
                tied_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = (((pairs - tied_x) * (pairs - tied_y)) as f64).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    (concordant - discordant) as f64 / denom
}

/// PARC: Spearman between the lower triangles of the `1 - pearson` distance
/// matrices of the representation rows and the one-hot label rows.
pub fn parc_oracle(features: &Matrix, labels: &[usize], num_classes: usize) -> f64 {
    let onehot: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| (0..num_classes).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
        .collect();
    let feats = to_rows(features);
    let mut dx = Vec::new();
    let mut dy = Vec::new();
    for i in 0..labels.len() {
        for j in 0..i {
            dx.push(1.0 - pearson_oracle(&feats[i], &feats[j]));
            dy.push(1.0 - pearson_oracle(&onehot[i], &onehot[j]));
        }
    }
    spearman_oracle(&dx, &dy)
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// Relative top-k accuracy of an explicit ranking, from the definition.
pub fn topk_oracle(ranking: &[usize], acc: &[f64], k: usize) -> f64 {
    let picked: f64 = ranking[..k].iter().map(|&i| acc[i]).sum::<f64>() / k as f64;
    let mut sorted = acc.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let best: f64 = sorted[..k].iter().sum::<f64>() / k as f64;
    picked / best
}

/// Expected mean relative accuracy (k = 1..=max_k) of a uniformly random
/// ranking, by averaging over all permutations.
pub fn random_mra_oracle(acc: &[f64], max_k: usize) -> f64 {
    let perms = permutations(acc.len());
    let total: f64 = perms
        .iter()
        .map(|p| (1..=max_k).map(|k| topk_oracle(p, acc, k)).sum::<f64>() / max_k as f64)
        .sum();
    total / perms.len() as f64
}

/// Central finite-difference gradient of `f` at `params`.
pub fn finite_difference(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest per-entry relative error, with a small floor on the scale.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-7))
        .fold(0.0, f64::max)
}

/// Recursively collects `(relative path, bytes)` of every file under `dir`.
pub fn read_tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
