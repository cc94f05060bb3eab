//! Penalty-managed SQP loop with an adaptive proximal parameter.
//!
//! Identical outer loop to the fixed-α solver, except that the subproblem
//! uses the current `α_k` and, after the penalty update, `α` is raised by
//! `ϱ_α` whenever the accepted step was short of unit length or the full
//! step broke the model-accuracy bound
//! `φ_p(x + d) ≤ φ̃(x + d) + (σ_α α/2)‖d‖²`. Once `α` is large enough the
//! unit step always passes and the parameter freezes.

use nalgebra::DVector;

use crate::driver::{run_loop, AlphaRule, LoopParams};
use crate::error::{Error, Result};
use crate::esqm::{validate_common, SolveReport};
use crate::problem::DifferenceProgram;

/// Parameters of the adaptive-α solver.
#[derive(Debug, Clone)]
pub struct AesqmConfig {
    pub beta: f64,
    pub sigma: f64,
    /// Initial proximal parameter α₀ > 0.
    pub alpha0: f64,
    /// Proximal increment ϱ_α > 0.
    pub rho_alpha: f64,
    /// Model-accuracy factor σ_α ∈ (0,1).
    pub sigma_alpha: f64,
    pub p0: f64,
    pub rho_p: f64,
    pub c_p: f64,
    pub d_tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
}

impl Default for AesqmConfig {
    fn default() -> Self {
        Self {
            beta: 0.7,
            sigma: 0.5,
            alpha0: 1.0,
            rho_alpha: 1.0,
            sigma_alpha: 0.5,
            p0: 1.0,
            rho_p: 0.05,
            c_p: 50.0,
            d_tol: 1e-4,
            max_iter: 500,
            max_backtracks: 60,
        }
    }
}

impl AesqmConfig {
    pub fn validate(&self) -> Result<()> {
        validate_common(
            self.beta,
            self.sigma,
            self.p0,
            self.rho_p,
            self.c_p,
            self.d_tol,
        )?;
        if !(self.alpha0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "alpha0 must satisfy alpha0 > 0, got {}",
                self.alpha0
            )));
        }
        if !(self.rho_alpha > 0.0) {
            return Err(Error::InvalidInput(format!(
                "rho_alpha must satisfy rho_alpha > 0, got {}",
                self.rho_alpha
            )));
        }
        if !(self.sigma_alpha > 0.0 && self.sigma_alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "sigma_alpha must satisfy sigma_alpha in (0,1), got {}",
                self.sigma_alpha
            )));
        }
        Ok(())
    }
}

/// Value of the linear model `φ̃(x + d)` of the penalized merit at the
/// iterate `x`, with subgradients sampled at `x` — the same elements the
/// direction solve uses, since the oracles are deterministic.
pub fn model_value(prog: &DifferenceProgram, x: &DVector<f64>, d: &DVector<f64>, p: f64) -> f64 {
    let w0 = prog.grad_g0(x) - prog.subgrad_h0(x);
    let w1 = prog.grad_g1(x) - prog.subgrad_h1(x);
    (prog.phi0(x) + w0.dot(d)) / p + (prog.phi1(x) + w1.dot(d)).max(0.0)
}

/// Adaptive rule: raise `α` by `rho_alpha` when either the step fell short
/// of unit length or the full-step merit `lhs` exceeded the model bound
/// `rhs`.
pub fn update_alpha(alpha: f64, tau: f64, lhs: f64, rhs: f64, rho_alpha: f64) -> f64 {
    if tau < 1.0 || lhs > rhs {
        alpha + rho_alpha
    } else {
        alpha
    }
}

/// Runs the adaptive-α solver from `x0 ∈ X`.
pub fn run_aesqm(
    prog: &DifferenceProgram,
    x0: &DVector<f64>,
    config: &AesqmConfig,
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
            alpha_rule: AlphaRule::Adaptive {
                alpha0: config.alpha0,
                rho_alpha: config.rho_alpha,
                sigma_alpha: config.sigma_alpha,
            },
        },
    )
}
