//! Dense Cholesky factor-and-solve for the small SPD systems of the
//! regression experts.

/// Overwrites the lower triangle of the row-major `dim x dim` matrix `a` with
/// its Cholesky factor and then solves `a x = b` in place of `b`.
///
/// Returns the offending pivot if the matrix is not numerically positive
/// definite.
pub(crate) fn cholesky_solve(a: &mut [f64], dim: usize, b: &mut [f64]) -> Result<(), f64> {
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(b.len(), dim);
    for j in 0..dim {
        let mut diag = a[j * dim + j];
        for k in 0..j {
            diag -= a[j * dim + k] * a[j * dim + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(diag);
        }
        let diag = diag.sqrt();
        a[j * dim + j] = diag;
        for i in (j + 1)..dim {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= a[i * dim + k] * a[j * dim + k];
            }
            a[i * dim + j] = s / diag;
        }
    }
    // L y = b
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * dim + k] * b[k];
        }
        b[i] = s / a[i * dim + i];
    }
    // L^T x = y
    for i in (0..dim).rev() {
        let mut s = b[i];
        for k in (i + 1)..dim {
            s -= a[k * dim + i] * b[k];
        }
        b[i] = s / a[i * dim + i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_2x2() {
        let mut a = vec![4.0, 2.0, 2.0, 3.0];
        let mut b = vec![2.0, 1.0];
        cholesky_solve(&mut a, 2, &mut b).unwrap();
        // [[4,2],[2,3]]^{-1} [2,1] = [0.5, 0]
        assert!((b[0] - 0.5).abs() < 1e-15);
        assert!(b[1].abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        let mut b = vec![1.0, 1.0];
        assert!(cholesky_solve(&mut a, 2, &mut b).is_err());
    }
}
