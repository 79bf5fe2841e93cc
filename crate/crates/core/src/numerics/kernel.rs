use crate::error::{Error, Result};
use crate::numerics::Matrix;

const SYMMETRY_TOL: f64 = 1e-9;

/// Hilbert-Schmidt independence criterion `tr(K H L H) / (N - 1)^2`,
/// with `H = I - 11ᵀ/N` the centering matrix.
pub fn hsic(k: &Matrix, l: &Matrix) -> Result<f64> {
    for m in [k, l] {
        if !m.is_square() {
            return Err(Error::shape("square kernel", format!("{}x{}", m.rows(), m.cols())));
        }
        let scale = m.as_slice().iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        if m.asymmetry() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidArgument("kernel matrix is not symmetric".into()));
        }
    }
    if k.rows() != l.rows() {
        return Err(Error::LengthMismatch { left: k.rows(), right: l.rows() });
    }
    let n = k.rows();
    if n < 2 {
        return Err(Error::TooShort { needed: 2, got: n });
    }
    // tr(K H L H) = Σ_ij (HKH)_ij L_ji
    let kc = double_center(k);
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += kc.get(i, j) * l.get(j, i);
        }
    }
    Ok(acc / ((n - 1) * (n - 1)) as f64)
}

/// `H K H` for a square `K`.
pub fn double_center(k: &Matrix) -> Matrix {
    let n = k.rows();
    let nf = n as f64;
    let row_means: Vec<f64> = k.row_iter().map(|r| r.iter().sum::<f64>() / nf).collect();
    let col_means = k.col_means();
    let grand = row_means.iter().sum::<f64>() / nf;
    let mut out = k.clone();
    for i in 0..n {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = *v - row_means[i] - col_means[j] + grand;
        }
    }
    out
}

/// Linear kernel `X Xᵀ`.
pub fn linear_kernel(x: &Matrix) -> Matrix {
    x.matmul(&x.transpose()).expect("X Xᵀ is always conformable")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_n2_gives_one() {
        let i = Matrix::identity(2);
        assert!((hsic(&i, &i).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_kernel_is_annihilated() {
        let k = Matrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]]).unwrap();
        assert!(hsic(&k, &Matrix::filled(3, 3, 1.0)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(hsic(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).is_err());
        assert!(hsic(&Matrix::identity(2), &Matrix::identity(3)).is_err());
        assert!(hsic(&Matrix::identity(1), &Matrix::identity(1)).is_err());
        let asym = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(hsic(&asym, &Matrix::identity(2)).is_err());
    }
}
