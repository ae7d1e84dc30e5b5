use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted descending; `eigenvectors` holds the matching
/// eigenvectors as columns. Ties keep the order in which the values were
/// produced, so results are deterministic for golden tests.
#[derive(Debug, Clone)]
pub struct EigResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

const MAX_SWEEPS: usize = 64;
const SYMMETRY_REL_TOL: f64 = 1e-10;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Input must be square and symmetric within `1e-10` relative tolerance.
pub fn sym_eig(a: &Matrix) -> Result<EigResult> {
    if a.is_empty() {
        return Err(Error::Validation("sym_eig: empty matrix".into()));
    }
    if a.rows() != a.cols() {
        return Err(Error::Dimension(format!(
            "sym_eig: expected square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_symmetric_within(SYMMETRY_REL_TOL) {
        return Err(Error::Dimension(
            "sym_eig: matrix is not symmetric within 1e-10 relative tolerance".into(),
        ));
    }

    let d = a.rows();
    // Work on the symmetrized copy so tiny input asymmetry cannot bias sweeps.
    let mut m = Matrix::from_fn(d, d, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(d);
    let frob = m.frob_norm();

    if frob > 0.0 {
        let tol = 1e-13 * frob;
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let mut off_sq = 0.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    off_sq += 2.0 * m[(i, j)] * m[(i, j)];
                }
            }
            if off_sq.sqrt() <= tol {
                converged = true;
                break;
            }
            for p in 0..d.saturating_sub(1) {
                for q in (p + 1)..d {
                    rotate(&mut m, &mut v, p, q);
                }
            }
        }
        if !converged {
            // One last check: the final sweep may have finished the job.
            let mut off_sq = 0.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    off_sq += 2.0 * m[(i, j)] * m[(i, j)];
                }
            }
            if off_sq.sqrt() > tol {
                return Err(Error::Convergence(format!(
                    "jacobi eigensolver: off-diagonal {off_sq:e} after {MAX_SWEEPS} sweeps"
                )));
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    let diag: Vec<f64> = (0..d).map(|i| m[(i, i)]).collect();
    // Stable descending sort; index tiebreak preserves input order.
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap().then(i.cmp(&j)));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vecs = Matrix::zeros(d, d);
    for (new_col, &old_col) in order.iter().enumerate() {
        // Canonical sign: largest-magnitude entry positive.
        let mut pivot = 0;
        let mut best = 0.0;
        for r in 0..d {
            if v[(r, old_col)].abs() > best {
                best = v[(r, old_col)].abs();
                pivot = r;
            }
        }
        let sign = if v[(pivot, old_col)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            vecs[(r, new_col)] = sign * v[(r, old_col)];
        }
    }

    Ok(EigResult {
        eigenvalues,
        eigenvectors: vecs,
    })
}

/// One Jacobi rotation zeroing `m[(p, q)]`, accumulated into `v`.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = m[(p, p)];
    let aqq = m[(q, q)];
    let tau = (aqq - app) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    let d = m.rows();
    // A <- A * J
    for i in 0..d {
        let aip = m[(i, p)];
        let aiq = m[(i, q)];
        m[(i, p)] = c * aip - s * aiq;
        m[(i, q)] = s * aip + c * aiq;
    }
    // A <- J^T * A
    for j in 0..d {
        let apj = m[(p, j)];
        let aqj = m[(q, j)];
        m[(p, j)] = c * apj - s * aqj;
        m[(q, j)] = s * apj + c * aqj;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    // V <- V * J
    for i in 0..v.rows() {
        let vip = v[(i, p)];
        let viq = v[(i, q)];
        v[(i, p)] = c * vip - s * viq;
        v[(i, q)] = s * vip + c * viq;
    }
}
