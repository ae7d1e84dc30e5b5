use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

/// Thin singular value decomposition `A = U diag(S) V^T`.
///
/// With `k = min(rows, cols)`: `u` is rows-by-k, `v` is cols-by-k, and
/// `singular_values` holds k values sorted descending.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// Rank-`k` reconstruction `U_k diag(S_k) V_k^T`.
    pub fn truncated(&self, k: usize) -> Matrix {
        let k = k.min(self.singular_values.len());
        let scaled = self.u.take_cols(k).scale_cols(&self.singular_values[..k]);
        scaled.matmul_bt(&self.v.take_cols(k))
    }
}

const MAX_SWEEPS: usize = 64;
const ORTHO_EPS: f64 = 1e-14;

/// Singular value decomposition by one-sided Jacobi (Hestenes) rotations.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.is_empty() {
        return Err(Error::Validation("svd: empty matrix".into()));
    }
    // Orthogonalize columns; transpose first if the matrix is wide.
    let transposed = a.rows() < a.cols();
    let mut u = if transposed { a.transpose() } else { a.clone() };
    let n = u.cols();
    let mut v = Matrix::identity(n);

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = column_moments(&u, p, q);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= ORTHO_EPS * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut u, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "one-sided jacobi svd did not settle after {MAX_SWEEPS} sweeps"
        )));
    }

    // Singular values are column norms; sort descending with stable ties.
    let norms: Vec<f64> = (0..n)
        .map(|j| (0..u.rows()).map(|i| u[(i, j)] * u[(i, j)]).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let m = u.rows();
    let mut u_sorted = Matrix::zeros(m, n);
    let mut v_sorted = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    for (new_col, &old_col) in order.iter().enumerate() {
        let sigma = norms[old_col];
        singular_values.push(sigma);
        if sigma > 0.0 {
            for r in 0..m {
                u_sorted[(r, new_col)] = u[(r, old_col)] / sigma;
            }
        }
        for r in 0..n {
            v_sorted[(r, new_col)] = v[(r, old_col)];
        }
    }
    complete_zero_columns(&mut u_sorted, &singular_values);
    canonical_signs(&mut u_sorted, &mut v_sorted);

    if transposed {
        Ok(SvdResult {
            u: v_sorted,
            singular_values,
            v: u_sorted,
        })
    } else {
        Ok(SvdResult {
            u: u_sorted,
            singular_values,
            v: v_sorted,
        })
    }
}

fn column_moments(u: &Matrix, p: usize, q: usize) -> (f64, f64, f64) {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for i in 0..u.rows() {
        let a = u[(i, p)];
        let b = u[(i, q)];
        alpha += a * a;
        beta += b * b;
        gamma += a * b;
    }
    (alpha, beta, gamma)
}

fn rotate_cols(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.rows() {
        let a = m[(i, p)];
        let b = m[(i, q)];
        m[(i, p)] = c * a - s * b;
        m[(i, q)] = s * a + c * b;
    }
}

/// Replace zero columns of `u` (sigma = 0) by a deterministic orthonormal
/// completion so U stays column-orthonormal even for rank-deficient input.
fn complete_zero_columns(u: &mut Matrix, singular_values: &[f64]) {
    let m = u.rows();
    for (j, &sigma) in singular_values.iter().enumerate() {
        if sigma > 0.0 {
            continue;
        }
        'basis: for k in 0..m {
            let mut w = vec![0.0; m];
            w[k] = 1.0;
            // Columns not yet completed are all-zero and project to nothing.
            for other in 0..singular_values.len() {
                if other == j {
                    continue;
                }
                let proj = (0..m).map(|r| u[(r, other)] * w[r]).sum::<f64>();
                for r in 0..m {
                    w[r] -= proj * u[(r, other)];
                }
            }
            let norm = dot(&w, &w).sqrt();
            if norm > 0.5 {
                for r in 0..m {
                    u[(r, j)] = w[r] / norm;
                }
                break 'basis;
            }
        }
    }
}

/// Flip (u_k, v_k) pairs so the largest-magnitude entry of each u column is
/// positive; keeps U S V^T unchanged and output deterministic.
fn canonical_signs(u: &mut Matrix, v: &mut Matrix) {
    for j in 0..u.cols() {
        let mut pivot = 0;
        let mut best = 0.0;
        for r in 0..u.rows() {
            if u[(r, j)].abs() > best {
                best = u[(r, j)].abs();
                pivot = r;
            }
        }
        if u[(pivot, j)] < 0.0 {
            for r in 0..u.rows() {
                u[(r, j)] = -u[(r, j)];
            }
            for r in 0..v.rows() {
                v[(r, j)] = -v[(r, j)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sym_eig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn check_invariants(a: &Matrix, s: &SvdResult) {
        let k = a.rows().min(a.cols());
        assert_eq!(s.u.cols(), k);
        assert_eq!(s.v.cols(), k);
        // Column orthonormality within 1e-8.
        for (m, lbl) in [(&s.u, "U"), (&s.v, "V")] {
            let g = m.transpose().matmul(m);
            for i in 0..k {
                for j in 0..k {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (g[(i, j)] - want).abs() < 1e-8,
                        "{lbl}^T {lbl} [{i},{j}] = {}",
                        g[(i, j)]
                    );
                }
            }
        }
        // Reconstruction within 1e-6 relative Frobenius.
        let rec = s.truncated(k);
        let denom = a.frob_norm().max(1e-300);
        assert!(a.sub(&rec).frob_norm() / denom < 1e-6);
        // Descending order.
        for w in s.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn identity_singular_values() {
        let s = svd(&Matrix::identity(4)).unwrap();
        for &sv in &s.singular_values {
            assert!((sv - 1.0).abs() < 1e-12);
        }
        check_invariants(&Matrix::identity(4), &s);
    }

    #[test]
    fn rank_one_outer_product() {
        // u has norm 2, v has norm 3 -> singular values (6, 0, ...).
        let u = [2.0, 0.0, 0.0];
        let v = [0.0, 3.0, 0.0, 0.0];
        let a = Matrix::from_fn(3, 4, |i, j| u[i] * v[j]);
        let s = svd(&a).unwrap();
        assert!((s.singular_values[0] - 6.0).abs() < 1e-10);
        for &sv in &s.singular_values[1..] {
            assert!(sv.abs() < 1e-10);
        }
        check_invariants(&a, &s);
    }

    #[test]
    fn cross_check_against_sym_eig() {
        // Singular values of A equal sqrt of eigenvalues of A^T A.
        let a = random_matrix(5, 7, 7);
        let s = svd(&a).unwrap();
        let ata = a.transpose().matmul(&a);
        let eig = sym_eig(&ata).unwrap();
        for (sv, l) in s.singular_values.iter().zip(&eig.eigenvalues) {
            assert!((sv - l.max(0.0).sqrt()).abs() < 1e-8);
        }
        check_invariants(&a, &s);
    }

    #[test]
    fn tall_and_wide_shapes() {
        for (r, c, seed) in [(6, 3, 1), (3, 6, 2), (1, 5, 3), (5, 1, 4)] {
            let a = random_matrix(r, c, seed);
            let s = svd(&a).unwrap();
            check_invariants(&a, &s);
        }
    }

    #[test]
    fn rank_deficient_keeps_orthonormal_u() {
        // 4x3 with two identical columns -> rank 2.
        let base = random_matrix(4, 2, 9);
        let a = Matrix::from_fn(4, 3, |i, j| base[(i, j.min(1))]);
        let s = svd(&a).unwrap();
        assert!(s.singular_values[2] < 1e-10);
        check_invariants(&a, &s);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(svd(&Matrix::zeros(0, 3)), Err(Error::Validation(_))));
    }
}
