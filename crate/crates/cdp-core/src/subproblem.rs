//! Direction-finding subproblem.
//!
//! At an iterate `x` with penalty `p` and proximal weight `α`, the step is
//! the minimizer of
//!
//! ```text
//!   (1/p)⟨w₀, d⟩ + max{φ₁(x) + ⟨w₁, d⟩, 0} + (α/2)‖d‖²   over  x + d ∈ X,
//! ```
//!
//! where `w₀ = ∇g₀(x) − v₀` and `w₁ = ∇g₁(x) − v₁` with sampled
//! subgradients `v᷀ᵢ ∈ ∂hᵢ(x)`. An epigraph variable carries the max term,
//! which turns the problem into a standard QP whose dual on the row
//! `s ≥ φ₁ + ⟨w₁, d⟩` is the multiplier `λ ∈ [0, 1]`; the dual of `s ≥ 0`
//! is `1 − λ`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::problem::DifferenceProgram;
use crate::qp::{qp_solve, QpProblem, QpStatus, DEFAULT_QP_MAX_ITER, DEFAULT_QP_TOL};

/// Slack allowed when clamping the recovered dual into [0, 1].
const LAMBDA_CLAMP_TOL: f64 = 1e-6;

/// Solution of one direction subproblem, with the linearization data
/// sampled at the iterate cached for reuse by the model-accuracy test and
/// the penalty update.
#[derive(Debug, Clone)]
pub struct DirectionResult {
    /// Step direction.
    pub d: DVector<f64>,
    /// Multiplier of the linearized constraint, in [0, 1].
    pub lambda: f64,
    /// `t = max{φ₁(x) + ⟨w₁, d⟩, 0}`, the linearized constraint violation.
    pub t_lin: f64,
    /// Model value of the subproblem at its minimizer, including the
    /// affine term `(1/p)φ₀(x)` that the QP itself omits.
    pub subproblem_objective: f64,
    pub qp_status: QpStatus,
    /// φ₀(x) at the iterate.
    pub phi0_x: f64,
    /// φ₁(x) at the iterate.
    pub phi1_x: f64,
    /// `φ₁(x) + ⟨w₁, d⟩` before the hinge.
    pub phi1_lin: f64,
    /// `⟨w₀, d⟩`.
    pub w0_dot_d: f64,
    /// `(1/p)⟨w₀, d⟩ + λ⟨w₁, d⟩`, the left side of the descent estimate.
    pub descent_lhs: f64,
}

impl DirectionResult {
    pub fn d_norm(&self) -> f64 {
        self.d.norm()
    }
}

/// Approximation of the constraint violation used by the penalty update.
pub fn constraint_violation_estimate(result: &DirectionResult) -> f64 {
    result.t_lin
}

/// Solves the direction subproblem at `x` and recovers the multiplier.
pub fn solve_direction(
    prog: &DifferenceProgram,
    x: &DVector<f64>,
    p: f64,
    alpha: f64,
) -> Result<DirectionResult> {
    assert!(p > 0.0 && alpha > 0.0, "p and alpha must be positive");
    let n = prog.dim();
    let w0 = prog.grad_g0(x) - prog.subgrad_h0(x);
    let w1 = prog.grad_g1(x) - prog.subgrad_h1(x);
    let phi0_x = prog.phi0(x);
    let phi1_x = prog.phi1(x);

    // Variables u = (d, s); objective (1/p)⟨w₀,d⟩ + s + (α/2)‖d‖².
    let mut hessian = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        hessian[(i, i)] = alpha;
    }
    let mut linear = DVector::zeros(n + 1);
    for i in 0..n {
        linear[i] = w0[i] / p;
    }
    linear[n] = 1.0;

    let set = prog.set();
    let (c_all, c_rhs) = set.assembled_inequalities();
    let m_set = c_all.nrows();
    let mut ineq = DMatrix::zeros(2 + m_set, n + 1);
    let mut ineq_rhs = DVector::zeros(2 + m_set);
    // Row 0: −s ≤ 0.
    ineq[(0, n)] = -1.0;
    // Row 1: ⟨w₁, d⟩ − s ≤ −φ₁(x).
    for i in 0..n {
        ineq[(1, i)] = w1[i];
    }
    ineq[(1, n)] = -1.0;
    ineq_rhs[1] = -phi1_x;
    // Set rows shifted to the step: C(x + d) ≤ c0.
    if m_set > 0 {
        ineq.view_mut((2, 0), (m_set, n)).copy_from(&c_all);
        ineq_rhs.rows_mut(2, m_set).copy_from(&(&c_rhs - &c_all * x));
    }

    let (eq_mat_set, e0) = set.equality_rows();
    let p_eq = eq_mat_set.nrows();
    let mut eq_mat = DMatrix::zeros(p_eq, n + 1);
    let mut eq_rhs = DVector::zeros(p_eq);
    if p_eq > 0 {
        eq_mat.view_mut((0, 0), (p_eq, n)).copy_from(eq_mat_set);
        eq_rhs.copy_from(&(e0 - eq_mat_set * x));
    }

    let problem = QpProblem::new(hessian, linear, ineq, ineq_rhs, eq_mat, eq_rhs)?;
    let sol = qp_solve(&problem, DEFAULT_QP_TOL, DEFAULT_QP_MAX_ITER)
        .into_optimal("direction subproblem")?;

    let d = DVector::from(sol.primal.rows(0, n).into_owned());
    let raw_lambda = sol.ineq_duals[1];
    debug_assert!(
        (sol.ineq_duals[0] + raw_lambda - 1.0).abs() <= LAMBDA_CLAMP_TOL,
        "epigraph duals should sum to one, got {} + {}",
        sol.ineq_duals[0],
        raw_lambda
    );
    debug_assert!(
        raw_lambda >= -LAMBDA_CLAMP_TOL && raw_lambda <= 1.0 + LAMBDA_CLAMP_TOL,
        "multiplier {raw_lambda} outside [0,1] beyond dual noise"
    );
    let lambda = raw_lambda.clamp(0.0, 1.0);

    let w0_dot_d = w0.dot(&d);
    let w1_dot_d = w1.dot(&d);
    let phi1_lin = phi1_x + w1_dot_d;
    let t_lin = phi1_lin.max(0.0);
    let subproblem_objective =
        (phi0_x + w0_dot_d) / p + t_lin + 0.5 * alpha * d.norm_squared();

    Ok(DirectionResult {
        lambda,
        t_lin,
        subproblem_objective,
        qp_status: sol.status,
        phi0_x,
        phi1_x,
        phi1_lin,
        w0_dot_d,
        descent_lhs: w0_dot_d / p + lambda * w1_dot_d,
        d,
    })
}
