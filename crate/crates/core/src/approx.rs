//! Reconstruction solvers.
//!
//! Three ways to find the rank-limited projector `M` and bias `b` that
//! approximate a layer's responses:
//!
//! - [`solve_linear`]: PCA of the centered responses; `M = U_d' U_d'^T`.
//! - [`solve_nonlinear`] in symmetric mode: minimizes the post-ReLU
//!   reconstruction error `sum_i ||r(y_i) - r(M y_i + b)||^2` through a
//!   quadratic-penalty relaxation with auxiliary variables `z` and an
//!   alternating exact solver for the two subproblems.
//! - The asymmetric variant: same objective but the projector is applied to
//!   the approximate inputs `y_hat` while the targets stay the original
//!   network's responses, which stops error from accumulating across layers.
//!
//! The penalty schedule follows a warm-up phase at a small lambda and a
//! second phase at a larger one, a fixed number of iterations each.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::io;
use crate::numerics::{rrr_with, svd, sym_eig, Matrix, RidgePolicy};
use crate::sampler::ResponseSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Linear,
    NonlinearSymmetric,
    NonlinearAsymmetric,
}

/// Solver knobs. `ridge: None` resolves per subproblem: zero when the
/// sample covariance is nonsingular, a small trace-scaled value otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda_warm: f64,
    pub lambda_final: f64,
    pub iters_per_phase: usize,
    pub ridge: Option<f64>,
    pub mode: SolverMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda_warm: 0.01,
            lambda_final: 1.0,
            iters_per_phase: 25,
            ridge: None,
            mode: SolverMode::NonlinearAsymmetric,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda_warm", self.lambda_warm), ("lambda_final", self.lambda_final)] {
            if !l.is_finite() || l <= 0.0 {
                return Err(Error::Validation(format!("{name} = {l} must be > 0")));
            }
        }
        if self.iters_per_phase == 0 {
            return Err(Error::Validation("iters_per_phase must be >= 1".into()));
        }
        if let Some(r) = self.ridge {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::Validation(format!("ridge = {r} must be >= 0")));
            }
        }
        Ok(())
    }

    fn ridge_policy(&self) -> RidgePolicy {
        match self.ridge {
            Some(r) => RidgePolicy::Fixed(r),
            None => RidgePolicy::Auto,
        }
    }
}

/// One relaxed-objective evaluation along the solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub lambda: f64,
    pub value: f64,
}

/// Output of any solver: the projector, its factors, and diagnostics.
#[derive(Debug, Clone)]
pub struct LowRankResult {
    pub m: Matrix,
    pub b: Vec<f64>,
    pub p: Matrix,
    pub q: Matrix,
    pub d_prime: usize,
    /// Relaxed-objective values: one point at each phase start, then one
    /// after every half-step. The linear solver records a single point.
    pub objective_trace: Vec<TracePoint>,
    /// Post-ReLU reconstruction error of the returned (M, b).
    pub final_nonlinear_objective: f64,
}

/// The nonlinearity. `Identity` exists as a test hook for checking that the
/// alternating solver degenerates to the linear one.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Identity => v,
        }
    }
}

// ---- linear (PCA) solver ------------------------------------------------

/// PCA solution of the linear reconstruction problem: project centered
/// responses onto the top `d_prime` eigenvectors of their covariance.
pub fn solve_linear(responses: &ResponseSet, d_prime: usize) -> Result<LowRankResult> {
    let (m, b, u, tail) = linear_projector(&responses.y, d_prime)?;
    let final_nonlinear_objective = nonlinear_objective(&m, &b, &responses.y, &responses.y);
    Ok(LowRankResult {
        p: u.clone(),
        q: u,
        m,
        b,
        d_prime,
        objective_trace: vec![TracePoint {
            lambda: 0.0,
            value: tail,
        }],
        final_nonlinear_objective,
    })
}

/// Shared PCA core: returns (M, b, U_d', linear objective = eigenvalue tail).
fn linear_projector(y: &Matrix, d_prime: usize) -> Result<(Matrix, Vec<f64>, Matrix, f64)> {
    let d = y.rows();
    if d_prime == 0 || d_prime > d {
        return Err(Error::Validation(format!(
            "rank {d_prime} outside [1, {d}]"
        )));
    }
    let mean = y.row_means();
    let centered = y.center_rows(&mean);
    let cov = centered.matmul_bt(&centered);
    let eig = sym_eig(&cov)?;
    if eig.eigenvalues[0] <= 0.0 {
        log::warn!("linear solver: responses have zero variance");
    }
    let u = eig.eigenvectors.take_cols(d_prime);
    let m = u.matmul_bt(&u);
    let b: Vec<f64> = mean
        .iter()
        .zip(m.mul_vec(&mean))
        .map(|(y_bar, my_bar)| y_bar - my_bar)
        .collect();
    let tail: f64 = eig.eigenvalues[d_prime..]
        .iter()
        .map(|l| l.max(0.0))
        .sum();
    Ok((m, b, u, tail))
}

// ---- z subproblem ---------------------------------------------------------

/// Elementwise minimizer of `(r(y) - r(z))^2 + lambda (z - y')^2` for ReLU.
///
/// Evaluates the two branch candidates `z' = min(0, y')` and
/// `z'' = max(0, (lambda y' + r(y)) / (lambda + 1))` and keeps the one with
/// the smaller objective; ties go to `z''`.
pub fn solve_z(y_target: f64, y_linear: f64, lambda: f64) -> f64 {
    let r_y = if y_target > 0.0 { y_target } else { 0.0 };
    let z_neg = y_linear.min(0.0);
    let z_pos = ((lambda * y_linear + r_y) / (lambda + 1.0)).max(0.0);
    let obj = |z: f64| {
        let r_z = if z > 0.0 { z } else { 0.0 };
        (r_y - r_z) * (r_y - r_z) + lambda * (z - y_linear) * (z - y_linear)
    };
    if obj(z_neg) < obj(z_pos) {
        z_neg
    } else {
        z_pos
    }
}

/// Identity-activation analogue: closed-form minimizer of
/// `(y - z)^2 + lambda (z - y')^2`.
fn solve_z_identity(y_target: f64, y_linear: f64, lambda: f64) -> f64 {
    (y_target + lambda * y_linear) / (1.0 + lambda)
}

// ---- objectives -----------------------------------------------------------

fn objective_with(act: Activation, m: &Matrix, b: &[f64], targets: &Matrix, inputs: &Matrix) -> f64 {
    let mapped = affine_map(m, b, inputs);
    let mut sum = 0.0;
    for i in 0..targets.rows() {
        for j in 0..targets.cols() {
            let diff = act.apply(targets[(i, j)]) - act.apply(mapped[(i, j)]);
            sum += diff * diff;
        }
    }
    sum
}

fn relaxed_objective_with(
    act: Activation,
    m: &Matrix,
    b: &[f64],
    z: &Matrix,
    targets: &Matrix,
    inputs: &Matrix,
    lambda: f64,
) -> f64 {
    let mapped = affine_map(m, b, inputs);
    let mut sum = 0.0;
    for i in 0..targets.rows() {
        for j in 0..targets.cols() {
            let diff = act.apply(targets[(i, j)]) - act.apply(z[(i, j)]);
            let gap = z[(i, j)] - mapped[(i, j)];
            sum += diff * diff + lambda * gap * gap;
        }
    }
    sum
}

/// Post-activation reconstruction error of `(M, b)` on the given matrices.
pub fn nonlinear_objective(m: &Matrix, b: &[f64], targets: &Matrix, inputs: &Matrix) -> f64 {
    objective_with(Activation::Relu, m, b, targets, inputs)
}

/// The penalty relaxation: reconstruction error of `z` plus
/// `lambda ||z - (M y_hat + b)||^2`.
pub fn relaxed_objective(
    m: &Matrix,
    b: &[f64],
    z: &Matrix,
    targets: &Matrix,
    inputs: &Matrix,
    lambda: f64,
) -> f64 {
    relaxed_objective_with(Activation::Relu, m, b, z, targets, inputs, lambda)
}

/// `M * inputs + b 1^T`.
fn affine_map(m: &Matrix, b: &[f64], inputs: &Matrix) -> Matrix {
    let mut out = m.matmul(inputs);
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            out[(i, j)] += b[i];
        }
    }
    out
}

// ---- nonlinear alternating solver ------------------------------------------

/// Minimize the post-ReLU reconstruction error under the rank constraint.
///
/// `targets` holds the linear responses whose rectified values are to be
/// reproduced; `inputs` is what the projector is applied to. Pass the same
/// matrix twice for the symmetric problem; pass approximate-network
/// responses as `inputs` for the asymmetric one.
pub fn solve_nonlinear(
    targets: &Matrix,
    inputs: &Matrix,
    d_prime: usize,
    config: &SolverConfig,
) -> Result<LowRankResult> {
    solve_nonlinear_with_activation(targets, inputs, d_prime, config, Activation::Relu)
}

#[doc(hidden)]
pub fn solve_nonlinear_with_activation(
    targets: &Matrix,
    inputs: &Matrix,
    d_prime: usize,
    config: &SolverConfig,
    act: Activation,
) -> Result<LowRankResult> {
    config.validate()?;
    let d = targets.rows();
    let n = targets.cols();
    if inputs.rows() != d || inputs.cols() != n {
        return Err(Error::Dimension(format!(
            "targets are {d}x{n} but inputs are {}x{}",
            inputs.rows(),
            inputs.cols()
        )));
    }

    // Initialize from the linear solution on the input matrix, with the
    // auxiliary variables at the projected inputs.
    let (mut m, mut b, _, _) = linear_projector(inputs, d_prime)?;
    let mut z = affine_map(&m, &b, inputs);

    let policy = config.ridge_policy();
    let input_means = inputs.row_means();
    let centered_inputs = inputs.center_rows(&input_means);

    let mut trace = Vec::with_capacity(2 * (2 * config.iters_per_phase + 1));
    for &lambda in &[config.lambda_warm, config.lambda_final] {
        let record = |trace: &mut Vec<TracePoint>, value: f64| -> Result<()> {
            if !value.is_finite() {
                return Err(Error::Divergence(format!(
                    "relaxed objective became {value} at lambda {lambda}"
                )));
            }
            trace.push(TracePoint { lambda, value });
            Ok(())
        };
        record(
            &mut trace,
            relaxed_objective_with(act, &m, &b, &z, targets, inputs, lambda),
        )?;
        for _ in 0..config.iters_per_phase {
            // (i) exact minimization over (M, b) at fixed z.
            let z_means = z.row_means();
            let centered_z = z.center_rows(&z_means);
            m = rrr_with(&centered_z, &centered_inputs, d_prime, policy)?;
            b = z_means
                .iter()
                .zip(m.mul_vec(&input_means))
                .map(|(zm, mym)| zm - mym)
                .collect();
            record(
                &mut trace,
                relaxed_objective_with(act, &m, &b, &z, targets, inputs, lambda),
            )?;

            // (ii) exact elementwise minimization over z at fixed (M, b).
            let mapped = affine_map(&m, &b, inputs);
            for i in 0..d {
                for j in 0..n {
                    z[(i, j)] = match act {
                        Activation::Relu => solve_z(targets[(i, j)], mapped[(i, j)], lambda),
                        Activation::Identity => {
                            solve_z_identity(targets[(i, j)], mapped[(i, j)], lambda)
                        }
                    };
                }
            }
            record(
                &mut trace,
                relaxed_objective_with(act, &m, &b, &z, targets, inputs, lambda),
            )?;
        }
    }

    let (p, q) = factorize(&m, d_prime)?;
    let final_nonlinear_objective = objective_with(act, &m, &b, targets, inputs);
    if !final_nonlinear_objective.is_finite() {
        return Err(Error::Divergence(
            "final reconstruction objective is not finite".into(),
        ));
    }
    Ok(LowRankResult {
        m,
        b,
        p,
        q,
        d_prime,
        objective_trace: trace,
        final_nonlinear_objective,
    })
}

// ---- factorization ----------------------------------------------------------

/// Split `M` into `P Q^T` through its SVD: `P = U_d' S_d'^{1/2}`,
/// `Q = V_d' S_d'^{1/2}`. Warns if `M` carries energy beyond `d_prime`.
pub fn factorize(m: &Matrix, d_prime: usize) -> Result<(Matrix, Matrix)> {
    let s = svd(m)?;
    let k = d_prime.min(s.singular_values.len());
    if k < s.singular_values.len() && s.singular_values[k] > 1e-8 * s.singular_values[0] {
        log::warn!(
            "factorize: numerical rank of M exceeds {d_prime} (sigma_{k} = {:.3e}); truncating",
            s.singular_values[k]
        );
    }
    let sqrt_s: Vec<f64> = s.singular_values[..k].iter().map(|v| v.sqrt()).collect();
    let p = s.u.take_cols(k).scale_cols(&sqrt_s);
    let q = s.v.take_cols(k).scale_cols(&sqrt_s);
    Ok((p, q))
}

// ---- serialization ------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ResultSidecar {
    d_prime: usize,
    config: Option<SolverConfig>,
    objective_trace: Vec<TracePoint>,
    final_nonlinear_objective: f64,
}

/// Save a solver result as a directory of LRCT blobs plus a JSON sidecar.
pub fn save_low_rank_result(
    result: &LowRankResult,
    config: Option<&SolverConfig>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_tensor_blob(&dir.join("m.bin"), &[result.m.rows(), result.m.cols()], result.m.data())?;
    io::write_tensor_blob(&dir.join("p.bin"), &[result.p.rows(), result.p.cols()], result.p.data())?;
    io::write_tensor_blob(&dir.join("q.bin"), &[result.q.rows(), result.q.cols()], result.q.data())?;
    io::write_tensor_blob(&dir.join("b.bin"), &[result.b.len()], &result.b)?;
    let sidecar = ResultSidecar {
        d_prime: result.d_prime,
        config: config.cloned(),
        objective_trace: result.objective_trace.clone(),
        final_nonlinear_objective: result.final_nonlinear_objective,
    };
    std::fs::write(dir.join("sidecar.json"), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_low_rank_result(dir: &Path) -> Result<(LowRankResult, Option<SolverConfig>)> {
    let read_matrix = |name: &str| -> Result<Matrix> {
        let (dims, data) = io::read_tensor_blob(&dir.join(name))?;
        if dims.len() != 2 {
            return Err(Error::Validation(format!(
                "{name}: expected rank-2 blob, got {dims:?}"
            )));
        }
        Matrix::new(dims[0], dims[1], data)
    };
    let m = read_matrix("m.bin")?;
    let p = read_matrix("p.bin")?;
    let q = read_matrix("q.bin")?;
    let (b_dims, b) = io::read_tensor_blob(&dir.join("b.bin"))?;
    if b_dims.len() != 1 {
        return Err(Error::Validation("b.bin: expected rank-1 blob".into()));
    }
    let sidecar: ResultSidecar =
        serde_json::from_str(&std::fs::read_to_string(dir.join("sidecar.json"))?)?;
    Ok((
        LowRankResult {
            m,
            b,
            p,
            q,
            d_prime: sidecar.d_prime,
            objective_trace: sidecar.objective_trace,
            final_nonlinear_objective: sidecar.final_nonlinear_objective,
        },
        sidecar.config,
    ))
}
