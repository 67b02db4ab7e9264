//! Dense helpers shared by the trainers.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Smallest accepted ratio between the smallest and largest Cholesky pivot.
/// Below this the system is treated as singular (condition number ~1e14).
const MIN_PIVOT_RATIO: f64 = 1e-7;

/// `alpha * op(A) * op(B)` through `matrixmultiply`, where `op` optionally
/// transposes by swapping strides instead of copying.
fn gemm(alpha: f64, a: &DMatrix<f64>, a_t: bool, b: &DMatrix<f64>, b_t: bool) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let (m, k, rsa, csa) = if a_t { (ac, ar, ar, 1) } else { (ar, ac, 1, ar) };
    let (k2, n, rsb, csb) = if b_t { (bc, br, br, 1) } else { (br, bc, 1, br) };
    assert_eq!(k, k2, "gemm: inner dimension mismatch");
    let mut out = DMatrix::<f64>::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: strides describe the column-major buffers of `a`, `b`, `out`,
    // whose extents match (m, k), (k, n), (m, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    out
}

/// `A * B`.
pub fn mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    gemm(1.0, a, false, b, false)
}

/// `A^T * B`.
pub fn tr_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    gemm(1.0, a, true, b, false)
}

/// `A * B^T`.
pub fn mul_transpose(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    gemm(1.0, a, false, b, true)
}

/// `A * A^T`, exactly symmetric.
pub fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = gemm(1.0, a, false, a, true);
    let n = out.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Solves `(A + shift*I) X = rhs` for symmetric positive-definite `A` by Cholesky.
pub fn spd_solve(
    a: &DMatrix<f64>,
    shift: f64,
    rhs: &DMatrix<f64>,
    what: &'static str,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut sys = a.clone();
    if shift != 0.0 {
        for i in 0..n {
            sys[(i, i)] += shift;
        }
    }
    let chol = Cholesky::new(sys).ok_or(Error::Singular(what))?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if n > 0 && !(lo > MIN_PIVOT_RATIO * hi) {
        return Err(Error::Singular(what));
    }
    Ok(chol.solve(rhs))
}

/// Squared Frobenius norm.
pub fn frobenius_sq(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

pub fn trace(a: &DMatrix<f64>) -> f64 {
    a.diagonal().iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_matches_naive_product() {
        let a = DMatrix::from_fn(7, 13, |i, j| ((i * 31 + j * 17) % 11) as f64 - 5.0);
        let naive = &a * a.transpose();
        let fast = gram(&a);
        assert!((naive - fast).abs().max() < 1e-12);
    }

    #[test]
    fn mul_transpose_matches_naive_product() {
        let a = DMatrix::from_fn(5, 9, |i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.1);
        let b = DMatrix::from_fn(4, 9, |i, j| ((i + 2 * j) % 5) as f64);
        let naive = &a * b.transpose();
        assert!((naive - mul_transpose(&a, &b)).abs().max() < 1e-12);
    }

    #[test]
    fn tr_mul_and_mul_match_naive_products() {
        let a = DMatrix::from_fn(6, 4, |i, j| (i as f64 - j as f64) * 0.25);
        let b = DMatrix::from_fn(6, 3, |i, j| ((i * j) % 4) as f64 + 0.5);
        assert!((a.transpose() * &b - tr_mul(&a, &b)).abs().max() < 1e-12);
        let c = DMatrix::from_fn(4, 2, |i, j| i as f64 * 0.1 + j as f64);
        assert!((&a * &c - mul(&a, &c)).abs().max() < 1e-12);
    }

    #[test]
    fn spd_solve_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rhs = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(
            spd_solve(&a, 0.0, &rhs, "test"),
            Err(Error::Singular(_))
        ));
        assert!(spd_solve(&a, 0.5, &rhs, "test").is_ok());
    }
}
