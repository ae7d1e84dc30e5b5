use crate::error::{Error, Result};
use crate::numerics::{svd, sym_eig, Matrix};

/// Relative eigenvalue threshold below which YY^T counts as rank-deficient.
const RANK_TOL: f64 = 1e-12;

/// How the ridge added to YY^T is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RidgePolicy {
    /// Add exactly this value (0.0 means none; singular YY^T then errors).
    Fixed(f64),
    /// No ridge when YY^T is numerically nonsingular, otherwise
    /// `1e-6 * trace(YY^T) / d`. Keeps the subproblem an exact minimizer on
    /// healthy data while surviving degenerate sample sets.
    Auto,
}

/// Rank-constrained least squares: minimize `||Z - M Y||_F` over matrices
/// `M` with `rank(M) <= d_prime`, with `ridge * I` added to `YY^T`.
///
/// Solved by whitening: eigendecompose `C = YY^T + ridge I = E L E^T`, form
/// `T = Z Y^T C^{-1/2}`, truncate the SVD of `T` to `d_prime`, and
/// un-whiten with another `C^{-1/2}`. Algebraically this is the GSVD
/// solution of the reduced rank regression problem.
pub fn rrr(z: &Matrix, y: &Matrix, d_prime: usize, ridge: f64) -> Result<Matrix> {
    rrr_with(z, y, d_prime, RidgePolicy::Fixed(ridge))
}

pub fn rrr_with(z: &Matrix, y: &Matrix, d_prime: usize, policy: RidgePolicy) -> Result<Matrix> {
    let d = y.rows();
    let n = y.cols();
    if z.rows() != d || z.cols() != n {
        return Err(Error::Dimension(format!(
            "rrr: Z is {}x{} but Y is {d}x{n}",
            z.rows(),
            z.cols()
        )));
    }
    if d == 0 || n == 0 {
        return Err(Error::Validation("rrr: empty matrices".into()));
    }
    if d_prime == 0 || d_prime > d {
        return Err(Error::Validation(format!(
            "rrr: rank {d_prime} outside [1, {d}]"
        )));
    }
    if let RidgePolicy::Fixed(r) = policy {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::Validation(format!("rrr: ridge {r} must be >= 0")));
        }
    }
    if n < d {
        log::warn!("rrr: n = {n} samples < d = {d}; YY^T is rank-deficient");
    }

    let c = y.matmul_bt(y);
    let eig = sym_eig(&c)?;
    let lmax = eig.eigenvalues[0].max(0.0);
    let num_rank = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > RANK_TOL * lmax && l > 0.0)
        .count();
    let ridge = match policy {
        RidgePolicy::Fixed(r) => r,
        RidgePolicy::Auto => {
            if num_rank == d {
                0.0
            } else {
                1e-6 * c.trace() / d as f64
            }
        }
    };
    if ridge == 0.0 && num_rank < d {
        return Err(Error::Singular { rank: num_rank, dim: d });
    }

    // C^{-1/2} = E diag((l + ridge)^{-1/2}) E^T
    let inv_sqrt: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|l| 1.0 / (l.max(0.0) + ridge).sqrt())
        .collect();
    let e = &eig.eigenvectors;
    let whitener = e.scale_cols(&inv_sqrt).matmul_bt(e);

    let t = z.matmul_bt(y).matmul(&whitener);
    let t_svd = svd(&t)?;
    Ok(t_svd.truncated(d_prime).matmul(&whitener))
}
