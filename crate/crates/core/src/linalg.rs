//! Small dense symmetric linear algebra.
//!
//! Matrices are flat row-major `Vec<f64>` of length p*p. Everything here is
//! sized for p up to a few dozen (model information matrices, normal
//! equations), so simple O(p^3) routines are fine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:.3e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("dimension mismatch: matrix {p}x{p}, vector {n}")]
    DimensionMismatch { p: usize, n: usize },
}

/// Cholesky factor L (lower, row-major) of a symmetric positive definite
/// matrix. Fails on a non-positive pivot, with a small relative tolerance so
/// exactly-collinear inputs are rejected rather than producing garbage.
pub fn cholesky(a: &[f64], p: usize) -> Result<Vec<f64>, LinalgError> {
    assert_eq!(a.len(), p * p, "matrix storage must be p*p");
    let mut l = vec![0.0; p * p];
    let scale = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    for j in 0..p {
        for i in j..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if s <= tol {
                    return Err(LinalgError::NotPositiveDefinite { pivot: j, value: s });
                }
                l[j * p + j] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Ok(l)
}

/// Solve A x = b for symmetric positive definite A.
pub fn solve_spd(a: &[f64], b: &[f64], p: usize) -> Result<Vec<f64>, LinalgError> {
    if b.len() != p {
        return Err(LinalgError::DimensionMismatch { p, n: b.len() });
    }
    let l = cholesky(a, p)?;
    Ok(solve_with_factor(&l, b, p))
}

fn solve_with_factor(l: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    // forward: L y = b
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    // back: L' x = y
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    x
}

/// Inverse of a symmetric positive definite matrix.
pub fn invert_spd(a: &[f64], p: usize) -> Result<Vec<f64>, LinalgError> {
    let l = cholesky(a, p)?;
    let mut inv = vec![0.0; p * p];
    let mut e = vec![0.0; p];
    for j in 0..p {
        e[j] = 1.0;
        let col = solve_with_factor(&l, &e, p);
        e[j] = 0.0;
        for i in 0..p {
            inv[i * p + j] = col[i];
        }
    }
    // symmetrize away the last-bit asymmetry from column-wise solves
    for i in 0..p {
        for j in 0..i {
            let v = 0.5 * (inv[i * p + j] + inv[j * p + i]);
            inv[i * p + j] = v;
            inv[j * p + i] = v;
        }
    }
    Ok(inv)
}

/// y = A x for row-major A (p x p).
pub fn matvec(a: &[f64], x: &[f64], p: usize) -> Vec<f64> {
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = 0.0;
        for j in 0..p {
            s += a[i * p + j] * x[j];
        }
        y[i] = s;
    }
    y
}

/// C = A B for row-major p x p matrices.
pub fn matmul(a: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * p];
    for i in 0..p {
        for k in 0..p {
            let aik = a[i * p + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..p {
                c[i * p + j] += aik * b[k * p + j];
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_known_system() {
        // A = [[4,2],[2,3]], b = [2,1] -> x = [1/2, 0]
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let x = solve_spd(&a, &[2.0, 1.0], 2).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-14);
        assert!(x[1].abs() < 1e-14);
    }

    #[test]
    fn inverse_reconstructs_identity() {
        let a = vec![6.0, 2.0, 1.0, 2.0, 5.0, 2.0, 1.0, 2.0, 4.0];
        let inv = invert_spd(&a, 3).unwrap();
        let prod = matmul(&a, &inv, 3);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i * 3 + j] - want).abs() < 1e-12, "prod[{i}{j}]");
            }
        }
    }

    #[test]
    fn rejects_singular() {
        // second row is 2x the first
        let a = vec![1.0, 2.0, 2.0, 4.0];
        assert!(matches!(
            cholesky(&a, 2),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }
}
