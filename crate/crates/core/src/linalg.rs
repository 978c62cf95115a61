//! Small dense linear-algebra kernels shared by PCA, DLT and affine fitting.
//!
//! Matrices are row-major `Vec<f64>` with an explicit order `n`.

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues sorted in descending order.
    pub values: Vec<f64>,
    /// Row `k` is the unit eigenvector belonging to `values[k]`.
    pub vectors: Vec<Vec<f64>>,
    pub sweeps: usize,
}

pub const JACOBI_TOLERANCE: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigen-solver for a symmetric `n x n` matrix.
///
/// Sweeps over all upper-triangular pairs, annihilating each off-diagonal
/// element with a plane rotation, until the off-diagonal Frobenius norm drops
/// below `tol` times the Frobenius norm of the input (or `max_sweeps` is hit).
pub fn jacobi_eigen(matrix: &[f64], n: usize, tol: f64, max_sweeps: usize) -> SymmetricEigen {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    let mut a = matrix.to_vec();
    // v holds eigenvectors as columns while iterating.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = tol * total.max(f64::MIN_POSITIVE);

    let mut sweeps = 0;
    while sweeps < max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| 2.0 * a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            break;
        }
        sweeps += 1;

        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                // signum(0) is 1 in Rust, which is the rotation we want
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));

    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&col| (0..n).map(|row| v[row * n + col]).collect()).collect();

    SymmetricEigen { values, vectors, sweeps }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `1e-14` times the largest entry of `A`.
pub fn solve(matrix: &[f64], rhs: &[f64], n: usize) -> Option<Vec<f64>> {
    assert_eq!(matrix.len(), n * n);
    assert_eq!(rhs.len(), n);
    let mut a = matrix.to_vec();
    let mut b = rhs.to_vec();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return None;
    }

    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
        if a[pivot * n + col].abs() < 1e-14 * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in (col + 1)..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }

    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = ((row + 1)..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Some(x)
}

pub fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat3_det(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse via the adjugate; `None` if the determinant is (numerically) zero.
pub fn mat3_inverse(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = mat3_det(m);
    let norm: f64 = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if !det.is_finite() || det.abs() <= 1e-12 * norm.powi(3) || norm == 0.0 {
        return None;
    }
    let inv_det = 1.0 / det;
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    Some([
        [c(1, 1, 2, 2) * inv_det, -c(0, 1, 2, 2) * inv_det, c(0, 1, 1, 2) * inv_det],
        [-c(1, 0, 2, 2) * inv_det, c(0, 0, 2, 2) * inv_det, -c(0, 0, 1, 2) * inv_det],
        [c(1, 0, 2, 1) * inv_det, -c(0, 0, 2, 1) * inv_det, c(0, 0, 1, 1) * inv_det],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes_2x2() {
        let e = jacobi_eigen(&[2.0, 1.0, 1.0, 2.0], 2, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS);
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
        let v = &e.vectors[0];
        assert!((v[0].abs() - v[1].abs()).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        let n = 9;
        let mut m = vec![0.0; n * n];
        let mut state = 12345u64;
        for i in 0..n {
            for j in i..n {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let x = ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                m[i * n + j] = x;
                m[j * n + i] = x;
            }
        }
        let e = jacobi_eigen(&m, n, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS);
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| e.values[k] * e.vectors[k][i] * e.vectors[k][j]).sum();
                assert!((r - m[i * n + j]).abs() < 1e-9);
                let dot: f64 = (0..n).map(|k| e.vectors[i][k] * e.vectors[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn solve_small_system() {
        let x = solve(&[2.0, 1.0, 1.0, 3.0], &[3.0, 5.0], 2).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12);
        assert!((x[1] - 1.4).abs() < 1e-12);
        assert!(solve(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0], 2).is_none());
    }

    #[test]
    fn mat3_inverse_roundtrip() {
        let m = [[2.0, 0.5, 3.0], [0.1, 1.0, -2.0], [0.001, 0.002, 1.0]];
        let inv = mat3_inverse(&m).unwrap();
        let id = mat3_mul(&m, &inv);
        for (i, row) in id.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
