//! Regularized gap functions for variational-inequality constraints.
//!
//! For a VI `find z ∈ Γ(y) with ⟨F(y,z), θ − z⟩ ≥ 0 ∀θ ∈ Γ(y)` over an
//! affinely parameterized polyhedron, the regularized value
//!
//! ```text
//!   μ_γ(y,z) = min_{θ ∈ Γ(y)} ⟨F(y,z), θ⟩ + (1/2γ)‖θ − z‖²
//! ```
//!
//! has the closed-form minimizer `θ* = Proj_{Γ(y)}(z − γF(y,z))`, and
//! `⟨F(y,z), z⟩ − μ_γ(y,z)` is nonnegative on Γ(y) and vanishes exactly at
//! VI solutions. Treating `⟨F,z⟩` as the smooth part and `μ_γ` as the
//! concave part turns a VI-constrained program into a constrained
//! difference program over `x = (y, z)`, which is what
//! [`to_difference_program`] builds (with an ε slack on the constraint so
//! that a qualification condition can hold at feasible points).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{DifferenceProgram, Polyhedron};
use crate::qp::{qp_solve, QpProblem, QpStatus};

/// Default regularization weight.
pub const DEFAULT_GAMMA: f64 = 0.1;
/// Default constraint relaxation.
pub const DEFAULT_EPSILON: f64 = 1.0;

/// Target and fallback tolerances for the projection/minimization QPs;
/// the gap equivalence checks need values resolved well below 1e-10.
const GAP_QP_TOL: f64 = 1e-11;
const GAP_QP_ACCEPT: f64 = 1e-8;
const GAP_QP_MAX_ITER: usize = 200;

pub type ViMapFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ViJacFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ViValueFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type ViGradFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Polyhedron-valued mapping `Γ(y) = {z : C z ≤ c0 + C_y y, E z = e0 + E_y y}`
/// with affine dependence on the parameter.
#[derive(Debug, Clone)]
pub struct ParametricPolyhedron {
    pub c_mat: DMatrix<f64>,
    pub c0: DVector<f64>,
    pub c_y: DMatrix<f64>,
    pub eq_mat: DMatrix<f64>,
    pub e0: DVector<f64>,
    pub e_y: DMatrix<f64>,
}

impl ParametricPolyhedron {
    /// Mapping independent of the parameter: `{z : C z ≤ c0, E z = e0}`.
    pub fn constant(
        c_mat: DMatrix<f64>,
        c0: DVector<f64>,
        eq_mat: DMatrix<f64>,
        e0: DVector<f64>,
        m1: usize,
    ) -> Self {
        let s = c_mat.nrows();
        let t = eq_mat.nrows();
        Self {
            c_mat,
            c0,
            c_y: DMatrix::zeros(s, m1),
            eq_mat,
            e0,
            e_y: DMatrix::zeros(t, m1),
        }
    }

    pub fn z_dim(&self) -> usize {
        if self.c_mat.nrows() > 0 {
            self.c_mat.ncols()
        } else {
            self.eq_mat.ncols()
        }
    }

    /// Right-hand sides of the rows at a fixed parameter value.
    pub fn rhs_at(&self, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let c_rhs = &self.c0 + &self.c_y * y;
        let e_rhs = &self.e0 + &self.e_y * y;
        (c_rhs, e_rhs)
    }
}

/// Oracle bundle for one VI-constrained difference program.
///
/// The objective is `Ψ = Ψ₁ − Ψ₂` over `(y, z)`; `F` is the VI mapping on
/// the `z` block with analytic partial Jacobians.
pub struct ViProblem {
    m1: usize,
    m2: usize,
    psi1_value: ViValueFn,
    psi1_grad: ViGradFn,
    psi2_value: ViValueFn,
    psi2_subgrad: ViGradFn,
    f_value: ViMapFn,
    f_jac_y: ViJacFn,
    f_jac_z: ViJacFn,
    gamma_set: ParametricPolyhedron,
    y_set: Polyhedron,
    psi_lower_bound: f64,
}

impl ViProblem {
    pub fn new(
        y_set: Polyhedron,
        gamma_set: ParametricPolyhedron,
        psi_lower_bound: f64,
    ) -> Result<Self> {
        let m1 = y_set.dim();
        let m2 = gamma_set.z_dim();
        if m2 == 0 {
            return Err(Error::InvalidInput("Γ has no rows to infer z-dimension".into()));
        }
        if gamma_set.c_mat.nrows() != gamma_set.c0.len()
            || gamma_set.c_mat.nrows() != gamma_set.c_y.nrows()
            || gamma_set.eq_mat.nrows() != gamma_set.e0.len()
            || gamma_set.eq_mat.nrows() != gamma_set.e_y.nrows()
        {
            return Err(Error::InvalidInput("Γ row-count mismatch".into()));
        }
        if (gamma_set.c_y.ncols() != m1 && gamma_set.c_y.nrows() > 0)
            || (gamma_set.e_y.ncols() != m1 && gamma_set.e_y.nrows() > 0)
        {
            return Err(Error::InvalidInput("Γ parameter-block width mismatch".into()));
        }
        let zeros2 = move |_: &DVector<f64>, _: &DVector<f64>| 0.0;
        Ok(Self {
            m1,
            m2,
            psi1_value: Box::new(zeros2),
            psi1_grad: Box::new(move |_, _| DVector::zeros(m1 + m2)),
            psi2_value: Box::new(zeros2),
            psi2_subgrad: Box::new(move |_, _| DVector::zeros(m1 + m2)),
            f_value: Box::new(move |_, _| DVector::zeros(m2)),
            f_jac_y: Box::new(move |_, _| DMatrix::zeros(m2, m1)),
            f_jac_z: Box::new(move |_, _| DMatrix::zeros(m2, m2)),
            gamma_set,
            y_set,
            psi_lower_bound,
        })
    }

    /// Smooth objective part Ψ₁ with its gradient over stacked `(y, z)`.
    pub fn with_objective(
        mut self,
        value: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.psi1_value = Box::new(value);
        self.psi1_grad = Box::new(grad);
        self
    }

    /// Concave objective part Ψ₂ with one subgradient over stacked `(y, z)`.
    pub fn with_concave_part(
        mut self,
        value: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        subgrad: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.psi2_value = Box::new(value);
        self.psi2_subgrad = Box::new(subgrad);
        self
    }

    /// VI mapping `F(y, z)` with partial Jacobians in `y` and `z`.
    pub fn with_mapping(
        mut self,
        value: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jac_y: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        jac_z: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.f_value = Box::new(value);
        self.f_jac_y = Box::new(jac_y);
        self.f_jac_z = Box::new(jac_z);
        self
    }

    pub fn y_dim(&self) -> usize {
        self.m1
    }

    pub fn z_dim(&self) -> usize {
        self.m2
    }

    pub fn y_set(&self) -> &Polyhedron {
        &self.y_set
    }

    pub fn gamma_set(&self) -> &ParametricPolyhedron {
        &self.gamma_set
    }

    pub fn mapping(&self, y: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        (self.f_value)(y, z)
    }

    pub fn jacobian_y(&self, y: &DVector<f64>, z: &DVector<f64>) -> DMatrix<f64> {
        (self.f_jac_y)(y, z)
    }

    pub fn jacobian_z(&self, y: &DVector<f64>, z: &DVector<f64>) -> DMatrix<f64> {
        (self.f_jac_z)(y, z)
    }

    pub fn objective(&self, y: &DVector<f64>, z: &DVector<f64>) -> f64 {
        (self.psi1_value)(y, z) - (self.psi2_value)(y, z)
    }

    pub fn split<'a>(&self, x: &'a DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from(x.rows(0, self.m1).into_owned()),
            DVector::from(x.rows(self.m1, self.m2).into_owned()),
        )
    }
}

impl std::fmt::Debug for ViProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ViProblem")
            .field("m1", &self.m1)
            .field("m2", &self.m2)
            .finish()
    }
}

/// All gap quantities at one point.
#[derive(Debug, Clone)]
pub struct GapEvaluation {
    pub theta_star: DVector<f64>,
    /// μ_γ(y, z).
    pub mu: f64,
    /// ⟨F(y,z), z⟩ − μ_γ(y,z); nonnegative for z ∈ Γ(y).
    pub gap: f64,
    pub subgrad_y: DVector<f64>,
    pub subgrad_z: DVector<f64>,
    /// Inequality duals of the projection QP (unscaled).
    pub ineq_duals: DVector<f64>,
}

fn solve_gap_qp(problem: &QpProblem, context: &str) -> Result<crate::qp::QpSolution> {
    let sol = qp_solve(problem, GAP_QP_TOL, GAP_QP_MAX_ITER);
    match sol.status {
        QpStatus::Optimal => Ok(sol),
        QpStatus::MaxIterations if sol.kkt_residual <= GAP_QP_ACCEPT => Ok(sol),
        QpStatus::Infeasible => Err(Error::Infeasible(format!(
            "{context}: Γ(y) is empty, violating the nonemptiness assumption"
        ))),
        _ => Err(Error::MaxIterations(context.to_string())),
    }
}

/// Minimizer `θ* = Proj_{Γ(y)}(z − γF(y,z))` with the projection-QP duals.
pub fn theta_star(
    vi: &ViProblem,
    y: &DVector<f64>,
    z: &DVector<f64>,
    gamma: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    assert!(gamma > 0.0, "gamma must be positive");
    let f = vi.mapping(y, z);
    let target = z - gamma * &f;
    let (c_rhs, e_rhs) = vi.gamma_set.rhs_at(y);
    let problem = QpProblem::new(
        DMatrix::identity(vi.m2, vi.m2),
        -target,
        vi.gamma_set.c_mat.clone(),
        c_rhs,
        vi.gamma_set.eq_mat.clone(),
        e_rhs,
    )?;
    let sol = solve_gap_qp(&problem, "theta_star projection")?;
    Ok((sol.primal, sol.ineq_duals, sol.eq_duals))
}

/// Regularized value function μ_γ(y, z).
pub fn mu_gamma(vi: &ViProblem, y: &DVector<f64>, z: &DVector<f64>, gamma: f64) -> Result<f64> {
    let (theta, _, _) = theta_star(vi, y, z, gamma)?;
    let f = vi.mapping(y, z);
    Ok(f.dot(&theta) + (&theta - z).norm_squared() / (2.0 * gamma))
}

/// Regularized gap `⟨F(y,z), z⟩ − μ_γ(y,z)`.
pub fn gap_value(vi: &ViProblem, y: &DVector<f64>, z: &DVector<f64>, gamma: f64) -> Result<f64> {
    let f = vi.mapping(y, z);
    Ok(f.dot(z) - mu_gamma(vi, y, z, gamma)?)
}

/// One subgradient of μ_γ at `(y, z)`:
///
/// ```text
///   g_y = ∇_yF(y,z)ᵀθ* + Σᵢ νᵢ ∇_y ζᵢ(y, θ*),
///   g_z = ∇_zF(y,z)ᵀθ* + (z − θ*)/γ,
/// ```
///
/// where the multipliers ν of the μ_γ minimization are the projection-QP
/// duals divided by γ (the projection minimizes `½‖θ − (z − γF)‖²`, whose
/// stationarity is the μ_γ system scaled by γ). With affine rows
/// `ζ = Cz − c0 − C_y y`, the parameter gradients are `∇_yζᵢ = −(C_y)ᵢ`.
pub fn mu_subgradient(
    vi: &ViProblem,
    y: &DVector<f64>,
    z: &DVector<f64>,
    gamma: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (theta, nu_ineq, nu_eq) = theta_star(vi, y, z, gamma)?;
    let nu_ineq = nu_ineq / gamma;
    let nu_eq = nu_eq / gamma;
    let g_y = vi.jacobian_y(y, z).transpose() * &theta
        - vi.gamma_set.c_y.transpose() * &nu_ineq
        - vi.gamma_set.e_y.transpose() * &nu_eq;
    let g_z = vi.jacobian_z(y, z).transpose() * &theta + (z - &theta) / gamma;
    Ok((g_y, g_z))
}

/// Everything at once; used by the difference-program oracles.
pub fn evaluate_gap(
    vi: &ViProblem,
    y: &DVector<f64>,
    z: &DVector<f64>,
    gamma: f64,
) -> Result<GapEvaluation> {
    let (theta, nu_ineq_raw, nu_eq_raw) = theta_star(vi, y, z, gamma)?;
    let f = vi.mapping(y, z);
    let mu = f.dot(&theta) + (&theta - z).norm_squared() / (2.0 * gamma);
    let gap = f.dot(z) - mu;
    let nu_ineq = &nu_ineq_raw / gamma;
    let nu_eq = nu_eq_raw / gamma;
    let subgrad_y = vi.jacobian_y(y, z).transpose() * &theta
        - vi.gamma_set.c_y.transpose() * &nu_ineq
        - vi.gamma_set.e_y.transpose() * &nu_eq;
    let subgrad_z = vi.jacobian_z(y, z).transpose() * &theta + (z - &theta) / gamma;
    Ok(GapEvaluation {
        theta_star: theta,
        mu,
        gap,
        subgrad_y,
        subgrad_z,
        ineq_duals: nu_ineq_raw,
    })
}

/// Combined feasible set over `x = (y, z)`: `y ∈ Y` and `(y, z) ∈ gph Γ`.
fn combined_set(vi: &ViProblem) -> Result<Polyhedron> {
    let m1 = vi.m1;
    let m2 = vi.m2;
    let dim = m1 + m2;
    let y_set = &vi.y_set;
    let (yc, yc0) = y_set.inequality_rows();
    let (ye, ye0) = y_set.equality_rows();
    let gs = &vi.gamma_set;

    let n_ineq = yc.nrows() + gs.c_mat.nrows();
    let mut c_mat = DMatrix::zeros(n_ineq, dim);
    let mut c0 = DVector::zeros(n_ineq);
    c_mat.view_mut((0, 0), (yc.nrows(), m1)).copy_from(yc);
    c0.rows_mut(0, yc0.len()).copy_from(yc0);
    // C z − C_y y ≤ c0.
    c_mat
        .view_mut((yc.nrows(), 0), (gs.c_mat.nrows(), m1))
        .copy_from(&(-&gs.c_y));
    c_mat
        .view_mut((yc.nrows(), m1), (gs.c_mat.nrows(), m2))
        .copy_from(&gs.c_mat);
    c0.rows_mut(yc0.len(), gs.c0.len()).copy_from(&gs.c0);

    let n_eq = ye.nrows() + gs.eq_mat.nrows();
    let mut eq_mat = DMatrix::zeros(n_eq, dim);
    let mut e0 = DVector::zeros(n_eq);
    eq_mat.view_mut((0, 0), (ye.nrows(), m1)).copy_from(ye);
    e0.rows_mut(0, ye0.len()).copy_from(ye0);
    eq_mat
        .view_mut((ye.nrows(), 0), (gs.eq_mat.nrows(), m1))
        .copy_from(&(-&gs.e_y));
    eq_mat
        .view_mut((ye.nrows(), m1), (gs.eq_mat.nrows(), m2))
        .copy_from(&gs.eq_mat);
    e0.rows_mut(ye0.len(), gs.e0.len()).copy_from(&gs.e0);

    let (yl, yu) = y_set.bounds();
    let mut lower = DVector::from_element(dim, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(dim, f64::INFINITY);
    lower.rows_mut(0, m1).copy_from(yl);
    upper.rows_mut(0, m1).copy_from(yu);

    Polyhedron::new(c_mat, c0, eq_mat, e0, lower, upper)
}

/// Reduction of the VI-constrained program to a constrained difference
/// program over `x = (y, z)`:
///
/// * `g₀ = Ψ₁`, `h₀ = Ψ₂`;
/// * `g₁ = ⟨F(y,z), z⟩ − ε` with gradient `[∇_yFᵀz; ∇_zFᵀz + F]`;
/// * `h₁ = μ_γ` with subgradients from [`mu_subgradient`];
/// * feasible set `{(y,z) : y ∈ Y, z ∈ Γ(y)}`.
///
/// With `ε = 0` the feasible points are exactly the VI solutions, but the
/// usual qualification condition fails everywhere; callers should keep
/// `ε > 0` (the front end warns when it is zero).
pub fn to_difference_program(
    vi: Arc<ViProblem>,
    gamma: f64,
    epsilon: f64,
) -> Result<DifferenceProgram> {
    if gamma <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "gamma must satisfy gamma > 0, got {gamma}"
        )));
    }
    if epsilon < 0.0 {
        return Err(Error::InvalidInput(format!(
            "epsilon must satisfy epsilon >= 0, got {epsilon}"
        )));
    }
    let set = combined_set(&vi)?;
    let lower_bound = vi.psi_lower_bound;

    let vi_g0 = Arc::clone(&vi);
    let vi_g0g = Arc::clone(&vi);
    let vi_h0 = Arc::clone(&vi);
    let vi_h0g = Arc::clone(&vi);
    let vi_g1 = Arc::clone(&vi);
    let vi_g1g = Arc::clone(&vi);
    let vi_h1 = Arc::clone(&vi);
    let vi_h1g = Arc::clone(&vi);

    Ok(DifferenceProgram::new(set, lower_bound)
        .with_g0(
            move |x| {
                let (y, z) = vi_g0.split(x);
                (vi_g0.psi1_value)(&y, &z)
            },
            move |x| {
                let (y, z) = vi_g0g.split(x);
                (vi_g0g.psi1_grad)(&y, &z)
            },
        )
        .with_h0(
            move |x| {
                let (y, z) = vi_h0.split(x);
                (vi_h0.psi2_value)(&y, &z)
            },
            move |x| {
                let (y, z) = vi_h0g.split(x);
                (vi_h0g.psi2_subgrad)(&y, &z)
            },
        )
        .with_g1(
            move |x| {
                let (y, z) = vi_g1.split(x);
                vi_g1.mapping(&y, &z).dot(&z) - epsilon
            },
            move |x| {
                let (y, z) = vi_g1g.split(x);
                let f = vi_g1g.mapping(&y, &z);
                let top = vi_g1g.jacobian_y(&y, &z).transpose() * &z;
                let bottom = vi_g1g.jacobian_z(&y, &z).transpose() * &z + f;
                let mut out = DVector::zeros(vi_g1g.m1 + vi_g1g.m2);
                out.rows_mut(0, vi_g1g.m1).copy_from(&top);
                out.rows_mut(vi_g1g.m1, vi_g1g.m2).copy_from(&bottom);
                out
            },
        )
        .with_h1(
            move |x| {
                let (y, z) = vi_h1.split(x);
                mu_gamma(&vi_h1, &y, &z, gamma)
                    .expect("mu_gamma oracle failed: Γ(y) empty or projection did not converge")
            },
            move |x| {
                let (y, z) = vi_h1g.split(x);
                let (g_y, g_z) = mu_subgradient(&vi_h1g, &y, &z, gamma)
                    .expect("mu_gamma subgradient failed: Γ(y) empty or projection did not converge");
                let mut out = DVector::zeros(vi_h1g.m1 + vi_h1g.m2);
                out.rows_mut(0, vi_h1g.m1).copy_from(&g_y);
                out.rows_mut(vi_h1g.m1, vi_h1g.m2).copy_from(&g_z);
                out
            },
        ))
}
