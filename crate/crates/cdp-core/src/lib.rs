//! Solvers for constrained difference programming: minimize `g₀ − h₀`
//! subject to `g₁ − h₁ ≤ 0` over a polyhedron, where the `g` parts are
//! smooth and the `h` parts are handled through subgradients.
//!
//! Two solvers share one outer loop: a penalty-managed SQP iteration with
//! a fixed proximal parameter ([`run_esqm`]) and a variant that adapts the
//! proximal parameter until unit steps pass a model-accuracy test
//! ([`run_aesqm`]). Both build each step from a strongly convex QP solved
//! by the dense interior-point kernel in [`qp`].
//!
//! The [`vi`] module reduces programs with variational-inequality
//! constraints to this form through a regularized gap function, and
//! [`cndp`] applies the reduction to continuous network design.

mod driver;

pub mod aesqm;
pub mod builtins;
pub mod cndp;
pub mod error;
pub mod esqm;
pub mod problem;
pub mod qp;
pub mod subproblem;
pub mod vi;

pub use aesqm::{model_value, run_aesqm, update_alpha, AesqmConfig};
pub use error::{Error, Result};
pub use esqm::{
    backtrack, run_esqm, trace_to_csv, update_penalty, Backtrack, EsqmConfig, IterateTrace,
    SolveReport, SolveStatus,
};
pub use problem::{DifferenceProgram, KktCertificate, Polyhedron};
pub use qp::{project_polyhedron, qp_solve, QpProblem, QpSolution, QpStatus};
pub use subproblem::{constraint_violation_estimate, solve_direction, DirectionResult};
pub use vi::{
    evaluate_gap, gap_value, mu_gamma, mu_subgradient, theta_star, to_difference_program,
    GapEvaluation, ParametricPolyhedron, ViProblem, DEFAULT_EPSILON, DEFAULT_GAMMA,
};
