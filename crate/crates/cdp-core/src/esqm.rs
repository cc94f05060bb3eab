//! Penalty-managed SQP loop with a fixed proximal parameter.
//!
//! Each iteration solves the direction subproblem, backtracks on the
//! penalized merit `φ_p`, updates the iterate, and raises the penalty
//! whenever the linearized constraint violation `t = max{φ₁ + ⟨w₁,d⟩, 0}`
//! reaches `c_p‖d‖`. The loop stops at an exactly stationary feasible
//! point, or once `‖d‖` falls under the configured direction tolerance.

use nalgebra::DVector;

use crate::driver::{run_loop, AlphaRule, LoopParams};
use crate::error::{Error, Result};
use crate::problem::{DifferenceProgram, KktCertificate};

/// Directions below this norm are treated as an exact zero of the
/// subproblem (the QP kernel resolves them to about its own tolerance).
pub(crate) const STATIONARY_D_TOL: f64 = 1e-8;

/// Parameters of the fixed-α solver.
#[derive(Debug, Clone)]
pub struct EsqmConfig {
    /// Backtracking factor β ∈ (0,1).
    pub beta: f64,
    /// Sufficient-decrease factor σ ∈ (0,1).
    pub sigma: f64,
    /// Fixed proximal parameter α > 0.
    pub alpha: f64,
    /// Initial penalty p₀ > 0.
    pub p0: f64,
    /// Penalty increment ϱ_p > 0.
    pub rho_p: f64,
    /// Penalty trigger c_p > 0.
    pub c_p: f64,
    /// Stop when ‖d‖ falls to this level at a feasible iterate.
    pub d_tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
}

impl Default for EsqmConfig {
    fn default() -> Self {
        Self {
            beta: 0.7,
            sigma: 0.5,
            alpha: 1.0,
            p0: 1.0,
            rho_p: 0.05,
            c_p: 50.0,
            d_tol: 1e-4,
            max_iter: 500,
            max_backtracks: 60,
        }
    }
}

impl EsqmConfig {
    pub fn validate(&self) -> Result<()> {
        validate_common(
            self.beta,
            self.sigma,
            self.p0,
            self.rho_p,
            self.c_p,
            self.d_tol,
        )?;
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must satisfy alpha > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

pub(crate) fn validate_common(
    beta: f64,
    sigma: f64,
    p0: f64,
    rho_p: f64,
    c_p: f64,
    d_tol: f64,
) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidInput(format!(
            "beta must satisfy beta in (0,1), got {beta}"
        )));
    }
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidInput(format!(
            "sigma must satisfy sigma in (0,1), got {sigma}"
        )));
    }
    if !(p0 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "p0 must satisfy p0 > 0, got {p0}"
        )));
    }
    if !(rho_p > 0.0) {
        return Err(Error::InvalidInput(format!(
            "rho_p must satisfy rho_p > 0, got {rho_p}"
        )));
    }
    if !(c_p > 0.0) {
        return Err(Error::InvalidInput(format!(
            "c_p must satisfy c_p > 0, got {c_p}"
        )));
    }
    if !(d_tol >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "d_tol must satisfy d_tol >= 0, got {d_tol}"
        )));
    }
    Ok(())
}

/// One iteration of either solver, as recorded in the run trace.
#[derive(Debug, Clone)]
pub struct IterateTrace {
    pub k: usize,
    /// Iterate at the start of the iteration.
    pub x: DVector<f64>,
    pub d_norm: f64,
    pub tau: f64,
    pub p: f64,
    /// Proximal parameter in force at this iteration (constant for the
    /// fixed-α solver).
    pub alpha: f64,
    pub lambda: f64,
    pub t_k: f64,
    pub phi0: f64,
    pub phi1: f64,
    /// φ_{p_k}(x^k).
    pub merit: f64,
    /// `A_k = (1/p_k)(φ₀(x^k) − m_{φ₀}) + max{φ₁(x^k), 0}` — the penalty
    /// Lyapunov quantity; nonnegative by construction.
    pub a_k: f64,
    pub backtracks: usize,
    /// φ_{p_k}(x^{k+1}) as accepted by the line search.
    pub merit_next: f64,
    /// `φ₁(x^k) + ⟨w₁, d^k⟩` before the hinge.
    pub phi1_lin: f64,
    /// `(1/p_k)⟨w₀,d⟩ + λ⟨w₁,d⟩`.
    pub descent_lhs: f64,
    /// `τ_k ‖d^k‖`.
    pub step_norm: f64,
    pub wall_time_s: f64,
    /// Set when the direction vanished at an infeasible point; the loop
    /// keeps iterating and lets the penalty rule raise `p`.
    pub infeasible_stationary: bool,
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Zero direction at a feasible iterate.
    StationaryStop,
    /// ‖d‖ at or below the configured tolerance at a feasible iterate.
    DirectionTolStop,
    /// Iteration budget exhausted.
    MaxIterStop,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveStatus::StationaryStop => write!(f, "stationary"),
            SolveStatus::DirectionTolStop => write!(f, "direction-tolerance"),
            SolveStatus::MaxIterStop => write!(f, "max-iterations"),
        }
    }
}

/// Full outcome of a solver run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x_final: DVector<f64>,
    pub status: SolveStatus,
    pub trace: Vec<IterateTrace>,
    /// KKT residuals at the final point with the effective multiplier.
    pub certificate: KktCertificate,
    /// Effective constraint multiplier `p_k λ_k` of the original problem.
    pub multiplier: f64,
    pub final_p: f64,
    pub final_alpha: f64,
    pub iterations: usize,
}

/// Line search outcome.
#[derive(Debug, Clone)]
pub struct Backtrack {
    pub tau: f64,
    pub x_new: DVector<f64>,
    pub backtracks: usize,
    /// φ_p at the accepted point.
    pub merit_new: f64,
}

/// Backtracking line search on the penalized merit: the largest `τ = β^q`
/// with `φ_p(x + τd) ≤ φ_p(x) − στα‖d‖²`.
pub fn backtrack(
    prog: &DifferenceProgram,
    x: &DVector<f64>,
    d: &DVector<f64>,
    p: f64,
    alpha: f64,
    beta: f64,
    sigma: f64,
    max_backtracks: usize,
) -> Result<Backtrack> {
    let merit_x = prog.merit_value(x, p)?;
    let d_sq = d.norm_squared();
    for q in 0..=max_backtracks {
        let tau = beta.powi(q as i32);
        let x_new = x + tau * d;
        let merit_new = prog.merit_value(&x_new, p)?;
        if merit_new <= merit_x - sigma * tau * alpha * d_sq {
            return Ok(Backtrack {
                tau,
                x_new,
                backtracks: q,
                merit_new,
            });
        }
    }
    Err(Error::LineSearchFailure {
        backtracks: max_backtracks,
        tau: beta.powi(max_backtracks as i32),
        d_norm: d_sq.sqrt(),
    })
}

/// Penalty update rule: raise `p` by `rho_p` when the linearized violation
/// reaches `c_p ‖d‖` (non-strict, so a zero direction at a violated
/// constraint still triggers the increase).
pub fn update_penalty(p: f64, t_k: f64, d_norm: f64, c_p: f64, rho_p: f64) -> f64 {
    if t_k >= c_p * d_norm {
        p + rho_p
    } else {
        p
    }
}

/// Runs the fixed-α solver from `x0 ∈ X`.
pub fn run_esqm(
    prog: &DifferenceProgram,
    x0: &DVector<f64>,
    config: &EsqmConfig,
) -> Result<SolveReport> {
    config.validate()?;
    run_loop(
        prog,
        x0,
        &LoopParams {
            beta: config.beta,
            sigma: config.sigma,
            p0: config.p0,
            rho_p: config.rho_p,
            c_p: config.c_p,
            d_tol: config.d_tol,
            max_iter: config.max_iter,
            max_backtracks: config.max_backtracks,
            alpha_rule: AlphaRule::Fixed(config.alpha),
        },
    )
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders a trace as CSV. Floats carry 17 significant digits; the
/// adaptive solver inserts its `alpha` column after `p`.
pub fn trace_to_csv(trace: &[IterateTrace], with_alpha: bool) -> String {
    let mut out = String::new();
    if with_alpha {
        out.push_str("k,d_norm,tau,p,alpha,lambda,t_k,phi0,phi1,merit,A_k,backtracks\n");
    } else {
        out.push_str("k,d_norm,tau,p,lambda,t_k,phi0,phi1,merit,A_k,backtracks\n");
    }
    for row in trace {
        let mut fields = vec![row.k.to_string(), fmt17(row.d_norm), fmt17(row.tau), fmt17(row.p)];
        if with_alpha {
            fields.push(fmt17(row.alpha));
        }
        fields.extend([
            fmt17(row.lambda),
            fmt17(row.t_k),
            fmt17(row.phi0),
            fmt17(row.phi1),
            fmt17(row.merit),
            fmt17(row.a_k),
            row.backtracks.to_string(),
        ]);
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
