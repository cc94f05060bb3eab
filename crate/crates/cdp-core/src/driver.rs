//! Shared iteration loop behind both solvers.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::esqm::{
    backtrack, update_penalty, IterateTrace, SolveReport, SolveStatus, STATIONARY_D_TOL,
};
use crate::problem::{DifferenceProgram, PHI1_FEAS_TOL, SET_FEAS_TOL};
use crate::subproblem::solve_direction;

#[derive(Debug, Clone, Copy)]
pub(crate) enum AlphaRule {
    Fixed(f64),
    Adaptive {
        alpha0: f64,
        rho_alpha: f64,
        sigma_alpha: f64,
    },
}

impl AlphaRule {
    fn initial(&self) -> f64 {
        match *self {
            AlphaRule::Fixed(alpha) => alpha,
            AlphaRule::Adaptive { alpha0, .. } => alpha0,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LoopParams {
    pub beta: f64,
    pub sigma: f64,
    pub p0: f64,
    pub rho_p: f64,
    pub c_p: f64,
    pub d_tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub alpha_rule: AlphaRule,
}

pub(crate) fn run_loop(
    prog: &DifferenceProgram,
    x0: &DVector<f64>,
    params: &LoopParams,
) -> Result<SolveReport> {
    if x0.len() != prog.dim() {
        return Err(Error::InvalidInput(format!(
            "x0 has length {}, problem dimension is {}",
            x0.len(),
            prog.dim()
        )));
    }
    if !prog.set().contains(x0, 1e-6) {
        return Err(Error::InvalidInput(format!(
            "x0 violates the feasible set by {:.3e}",
            prog.set().violation(x0)
        )));
    }

    let start = Instant::now();
    let mut x = x0.clone();
    let mut p = params.p0;
    let mut alpha = params.alpha_rule.initial();
    let m_phi0 = prog.phi0_lower_bound();

    let mut trace: Vec<IterateTrace> = Vec::new();
    let mut status = SolveStatus::MaxIterStop;
    let mut multiplier = 0.0;

    for k in 0..params.max_iter {
        let dir = solve_direction(prog, &x, p, alpha)?;
        let d_norm = dir.d_norm();
        let merit_x = dir.phi0_x / p + dir.phi1_x.max(0.0);
        let a_k = (dir.phi0_x - m_phi0) / p + dir.phi1_x.max(0.0);
        multiplier = p * dir.lambda;

        debug_assert!(
            dir.descent_lhs
                <= -alpha * d_norm * d_norm + 1e-6 * (1.0 + dir.descent_lhs.abs()),
            "descent estimate violated at k={k}: lhs {} vs {}",
            dir.descent_lhs,
            -alpha * d_norm * d_norm
        );

        let feasible = dir.phi1_x <= PHI1_FEAS_TOL && prog.set().contains(&x, SET_FEAS_TOL);
        let stationary = d_norm <= STATIONARY_D_TOL;

        let mut row = IterateTrace {
            k,
            x: x.clone(),
            d_norm,
            tau: 0.0,
            p,
            alpha,
            lambda: dir.lambda,
            t_k: dir.t_lin,
            phi0: dir.phi0_x,
            phi1: dir.phi1_x,
            merit: merit_x,
            a_k,
            backtracks: 0,
            merit_next: merit_x,
            phi1_lin: dir.phi1_lin,
            descent_lhs: dir.descent_lhs,
            step_norm: 0.0,
            wall_time_s: start.elapsed().as_secs_f64(),
            infeasible_stationary: stationary && !feasible,
        };

        if stationary && feasible {
            trace.push(row);
            status = SolveStatus::StationaryStop;
            break;
        }
        if d_norm <= params.d_tol && feasible {
            trace.push(row);
            status = SolveStatus::DirectionTolStop;
            break;
        }

        let (tau, x_new, backtracks, merit_next) = if stationary {
            // Vanishing direction at an infeasible point: take the (tiny)
            // full step and let the penalty rule act; a line search this
            // close to machine noise proves nothing.
            let x_new = &x + &dir.d;
            let merit_next = prog.merit_value(&x_new, p)?;
            (1.0, x_new, 0, merit_next)
        } else {
            let ls = backtrack(
                prog,
                &x,
                &dir.d,
                p,
                alpha,
                params.beta,
                params.sigma,
                params.max_backtracks,
            )?;
            (ls.tau, ls.x_new, ls.backtracks, ls.merit_new)
        };

        let p_next = update_penalty(p, dir.t_lin, d_norm, params.c_p, params.rho_p);
        let alpha_next = match params.alpha_rule {
            AlphaRule::Fixed(_) => alpha,
            AlphaRule::Adaptive {
                rho_alpha,
                sigma_alpha,
                ..
            } => {
                if tau < 1.0 {
                    alpha + rho_alpha
                } else {
                    // Unit step: x_new = x + d, so the accepted merit is the
                    // left side of the model-accuracy test. The bound gets a
                    // rounding-level slack so that instances sitting exactly
                    // on the boundary of the test do not retrigger on noise.
                    let model = (dir.phi0_x + dir.w0_dot_d) / p + dir.t_lin;
                    let rhs = model
                        + 0.5 * sigma_alpha * alpha * d_norm * d_norm
                        + 1e-12 * (1.0 + merit_next.abs());
                    crate::aesqm::update_alpha(alpha, tau, merit_next, rhs, rho_alpha)
                }
            }
        };

        row.tau = tau;
        row.backtracks = backtracks;
        row.merit_next = merit_next;
        row.step_norm = tau * d_norm;
        row.wall_time_s = start.elapsed().as_secs_f64();
        trace.push(row);

        x = x_new;
        p = p_next;
        alpha = alpha_next;
    }

    let certificate = prog.kkt_residual(&x, multiplier)?;
    Ok(SolveReport {
        x_final: x,
        status,
        iterations: trace.len(),
        trace,
        certificate,
        multiplier,
        final_p: p,
        final_alpha: alpha,
    })
}
