//! Small dense helpers used by the reference selectors.

/// Determinant of a row-major `n x n` matrix by LU decomposition with partial
/// pivoting. The empty matrix has determinant 1.
pub fn determinant(matrix: &[f64], n: usize) -> f64 {
    debug_assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            det = -det;
        }
        let p = a[col * n + col];
        det *= p;
        for r in col + 1..n {
            let factor = a[r * n + col] / p;
            if factor != 0.0 {
                for k in col..n {
                    a[r * n + k] -= factor * a[col * n + k];
                }
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::determinant;

    #[test]
    fn known_values() {
        assert_eq!(determinant(&[], 0), 1.0);
        assert_eq!(determinant(&[3.0], 1), 3.0);
        assert!((determinant(&[1.0, 2.0, 3.0, 4.0], 2) + 2.0).abs() < 1e-12);
        // needs a row swap
        assert!((determinant(&[0.0, 1.0, 1.0, 0.0], 2) + 1.0).abs() < 1e-12);
        let m = [2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0];
        assert!((determinant(&m, 3) - 4.0).abs() < 1e-12);
        assert_eq!(determinant(&[1.0, 1.0, 1.0, 1.0], 2), 0.0);
    }
}
