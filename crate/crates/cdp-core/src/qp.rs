//! Dense convex quadratic programming kernel.
//!
//! Solves `min ½ dᵀQd + qᵀd  s.t.  G d ≤ g, E d = e` with a primal-dual
//! interior point method (Mehrotra predictor-corrector on dense
//! factorizations) and returns both the primal point and the dual
//! multipliers. Every other module sits on top of this kernel: the
//! direction-finding subproblems, polyhedral projections, and the gap
//! function evaluations are all instances of this problem class.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default KKT tolerance. Subproblem accuracy has to exceed the outer
/// stopping tolerance (1e-4 on the direction norm) by several orders.
pub const DEFAULT_QP_TOL: f64 = 1e-9;
/// Default interior-point iteration budget.
pub const DEFAULT_QP_MAX_ITER: usize = 100;

/// Scaled primal residual level below which stalling is never declared.
const STALL_LEVEL: f64 = 1e-6;
/// Consecutive non-improving iterations above `STALL_LEVEL` before the
/// problem is declared infeasible.
const STALL_LIMIT: usize = 30;
/// Fraction-to-boundary factor for the combined corrector step.
const STEP_FRACTION: f64 = 0.995;

/// Termination status of a QP solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

/// Strongly or weakly convex quadratic program in standard form.
///
/// `hessian` must be symmetric positive semidefinite; strict convexity,
/// where needed, is supplied by callers through an `α·I` block.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub ineq_mat: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq_mat: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

impl QpProblem {
    /// Validates dimensions, symmetry (1e-12 relative) and, for n ≤ 50,
    /// positive semidefiniteness (eigenvalues ≥ −1e-10). Larger problems
    /// are symmetry-enforced and indefiniteness surfaces in the
    /// factorization.
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        ineq_mat: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
        eq_mat: DMatrix<f64>,
        eq_rhs: DVector<f64>,
    ) -> Result<Self> {
        let n = linear.len();
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "hessian is {}x{}, expected {n}x{n}",
                hessian.nrows(),
                hessian.ncols()
            )));
        }
        if ineq_mat.ncols() != n && ineq_mat.nrows() > 0 {
            return Err(Error::InvalidInput(format!(
                "inequality matrix has {} columns, expected {n}",
                ineq_mat.ncols()
            )));
        }
        if ineq_mat.nrows() != ineq_rhs.len() {
            return Err(Error::InvalidInput(
                "inequality matrix/rhs row mismatch".into(),
            ));
        }
        if eq_mat.ncols() != n && eq_mat.nrows() > 0 {
            return Err(Error::InvalidInput(format!(
                "equality matrix has {} columns, expected {n}",
                eq_mat.ncols()
            )));
        }
        if eq_mat.nrows() != eq_rhs.len() {
            return Err(Error::InvalidInput("equality matrix/rhs row mismatch".into()));
        }
        let scale = hessian.amax().max(1.0);
        let asym = (&hessian - hessian.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "hessian asymmetry {asym:.3e} exceeds 1e-12 relative"
            )));
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        if n <= 50 && n > 0 {
            let eigs = hessian.clone().symmetric_eigenvalues();
            let min_eig = eigs.min();
            if min_eig < -1e-10 * scale {
                return Err(Error::InvalidInput(format!(
                    "hessian has negative eigenvalue {min_eig:.3e}"
                )));
            }
        }
        for (name, finite) in [
            ("hessian", hessian.iter().all(|v| v.is_finite())),
            ("linear", linear.iter().all(|v| v.is_finite())),
            ("ineq_mat", ineq_mat.iter().all(|v| v.is_finite())),
            ("ineq_rhs", ineq_rhs.iter().all(|v| v.is_finite())),
            ("eq_mat", eq_mat.iter().all(|v| v.is_finite())),
            ("eq_rhs", eq_rhs.iter().all(|v| v.is_finite())),
        ] {
            if !finite {
                return Err(Error::NonFinite(format!("QP field {name}")));
            }
        }
        Ok(Self {
            hessian,
            linear,
            ineq_mat,
            ineq_rhs,
            eq_mat,
            eq_rhs,
        })
    }

    /// Problem without inequality or equality constraints.
    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let n = linear.len();
        Self::new(
            hessian,
            linear,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, d: &DVector<f64>) -> f64 {
        0.5 * (&self.hessian * d).dot(d) + self.linear.dot(d)
    }
}

/// Primal-dual solution of a [`QpProblem`].
#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Primal minimizer.
    pub primal: DVector<f64>,
    /// Inequality multipliers, nonnegative at optimality.
    pub ineq_duals: DVector<f64>,
    /// Equality multipliers, sign-free.
    pub eq_duals: DVector<f64>,
    pub status: QpStatus,
    /// ∞-norm of the stationarity, feasibility and complementarity
    /// residuals at the returned point.
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpSolution {
    /// Converts a non-optimal status into the corresponding error.
    pub fn into_optimal(self, context: &str) -> Result<Self> {
        match self.status {
            QpStatus::Optimal => Ok(self),
            QpStatus::Infeasible => Err(Error::Infeasible(context.to_string())),
            QpStatus::MaxIterations => Err(Error::MaxIterations(format!(
                "QP solve in {context} (kkt residual {:.3e})",
                self.kkt_residual
            ))),
        }
    }
}

fn kkt_residual_at(
    problem: &QpProblem,
    d: &DVector<f64>,
    mu: &DVector<f64>,
    nu: &DVector<f64>,
) -> f64 {
    let stat = (&problem.hessian * d
        + &problem.linear
        + problem.ineq_mat.transpose() * mu
        + problem.eq_mat.transpose() * nu)
        .amax();
    let mut worst = stat;
    if problem.ineq_mat.nrows() > 0 {
        let slack_violation = &problem.ineq_mat * d - &problem.ineq_rhs;
        for i in 0..slack_violation.len() {
            worst = worst.max(slack_violation[i]); // positive = violated
            worst = worst.max((mu[i] * slack_violation[i]).abs());
            worst = worst.max(-mu[i]);
        }
    }
    if problem.eq_mat.nrows() > 0 {
        worst = worst.max((&problem.eq_mat * d - &problem.eq_rhs).amax());
    }
    worst
}

/// Solves the saddle system `[M Eᵀ; E -δI] [x; y] = rhs` by dense LU,
/// escalating the regularization if the factorization is singular, and
/// refining the solution against the unregularized system.
fn solve_kkt_system(
    m_block: &DMatrix<f64>,
    eq_mat: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = m_block.nrows();
    let p = eq_mat.nrows();
    let dim = n + p;
    let scale = m_block.amax().max(eq_mat.amax()).max(1.0);

    let apply = |sol: &DVector<f64>| -> DVector<f64> {
        let x = sol.rows(0, n);
        let mut out = DVector::zeros(dim);
        let mut top = m_block * x;
        if p > 0 {
            let y = sol.rows(n, p);
            top += eq_mat.transpose() * y;
            out.rows_mut(n, p).copy_from(&(eq_mat * x));
        }
        out.rows_mut(0, n).copy_from(&top);
        out
    };

    let mut reg = 1e-12 * scale;
    for _ in 0..4 {
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (n, n)).copy_from(m_block);
        if p > 0 {
            k.view_mut((0, n), (n, p)).copy_from(&eq_mat.transpose());
            k.view_mut((n, 0), (p, n)).copy_from(eq_mat);
        }
        for i in 0..n {
            k[(i, i)] += reg;
        }
        for i in n..dim {
            k[(i, i)] -= reg;
        }
        let lu = k.lu();
        if let Some(mut sol) = lu.solve(rhs) {
            for _ in 0..2 {
                let residual = rhs - apply(&sol);
                let Some(correction) = lu.solve(&residual) else {
                    break;
                };
                sol += correction;
            }
            if sol.iter().all(|v| v.is_finite()) {
                return Some(sol);
            }
        }
        reg *= 1e4;
    }
    None
}

/// Largest step in `[0, 1]` keeping `v + α Δv` nonnegative, scaled by `frac`.
fn step_length(v: &DVector<f64>, dv: &DVector<f64>, frac: f64) -> f64 {
    let mut alpha = 1.0_f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i] * frac);
        }
    }
    alpha.min(1.0)
}

/// Equality-constrained re-solve with a fixed guess of the active rows.
fn polish_with_active(
    problem: &QpProblem,
    active: &[usize],
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = problem.num_vars();
    let m = problem.ineq_mat.nrows();
    let p = problem.eq_mat.nrows();
    let n_active = active.len();

    let mut combined = DMatrix::zeros(n_active + p, n);
    let mut rhs_rows = DVector::zeros(n_active + p);
    for (row, &i) in active.iter().enumerate() {
        combined.row_mut(row).copy_from(&problem.ineq_mat.row(i));
        rhs_rows[row] = problem.ineq_rhs[i];
    }
    if p > 0 {
        combined
            .view_mut((n_active, 0), (p, n))
            .copy_from(&problem.eq_mat);
        rhs_rows.rows_mut(n_active, p).copy_from(&problem.eq_rhs);
    }
    let mut rhs = DVector::zeros(n + n_active + p);
    rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
    rhs.rows_mut(n, n_active + p).copy_from(&rhs_rows);
    let sol = solve_kkt_system(&problem.hessian, &combined, &rhs)?;

    let d_new = DVector::from(sol.rows(0, n).into_owned());
    let mut mu_new = DVector::zeros(m);
    for (row, &i) in active.iter().enumerate() {
        mu_new[i] = sol[n + row];
    }
    let nu_new = DVector::from(sol.rows(n + n_active, p).into_owned());
    Some((d_new, mu_new, nu_new))
}

/// Active-set polish: re-solves the KKT system with the rows the interior
/// point ended on treated as equalities. Recovers full primal accuracy on
/// degenerate problems, where the central path alone only reaches the
/// square root of the complementarity tolerance. Several activity guesses
/// are tried; the caller keeps the best by residual.
fn polish(
    problem: &QpProblem,
    s: &DVector<f64>,
    mu: &DVector<f64>,
) -> Vec<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let m = problem.ineq_mat.nrows();
    let slack_scale = 1e-7 * (1.0 + problem.ineq_rhs.amax());
    let candidates: [Vec<usize>; 3] = [
        (0..m).filter(|&i| s[i] <= mu[i]).collect(),
        (0..m).filter(|&i| s[i] <= slack_scale).collect(),
        (0..m).filter(|&i| mu[i] > s[i].max(1e-9)).collect(),
    ];
    let mut seen: Vec<&Vec<usize>> = Vec::new();
    let mut results = Vec::new();
    for candidate in &candidates {
        if seen.iter().any(|prev| *prev == candidate) {
            continue;
        }
        seen.push(candidate);
        if let Some(result) = polish_with_active(problem, candidate) {
            results.push(result);
        }
    }
    results
}

/// Solves a dense convex QP, returning the primal point together with the
/// inequality and equality multipliers.
pub fn qp_solve(problem: &QpProblem, tol: f64, max_iter: usize) -> QpSolution {
    let n = problem.num_vars();
    let m = problem.ineq_mat.nrows();
    let p = problem.eq_mat.nrows();

    // Without inequalities the KKT conditions are a single linear system.
    if m == 0 {
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
        if p > 0 {
            rhs.rows_mut(n, p).copy_from(&problem.eq_rhs);
        }
        let sol = solve_kkt_system(&problem.hessian, &problem.eq_mat, &rhs);
        let (d, nu) = match sol {
            Some(sol) => (
                DVector::from(sol.rows(0, n).into_owned()),
                DVector::from(sol.rows(n, p).into_owned()),
            ),
            None => (DVector::zeros(n), DVector::zeros(p)),
        };
        let mu = DVector::zeros(0);
        let res = kkt_residual_at(problem, &d, &mu, &nu);
        let scale = 1.0_f64
            .max(problem.linear.amax())
            .max(if p > 0 { problem.eq_rhs.amax() } else { 0.0 });
        let status = if res <= tol.max(1e-10 * scale) {
            QpStatus::Optimal
        } else if p > 0 && (&problem.eq_mat * &d - &problem.eq_rhs).amax() > tol.max(1e-8 * scale) {
            QpStatus::Infeasible
        } else {
            QpStatus::MaxIterations
        };
        return QpSolution {
            primal: d,
            ineq_duals: mu,
            eq_duals: nu,
            status,
            kkt_residual: res,
            iterations: 1,
        };
    }

    // Analytic-center style start: equality-regularized Newton point with
    // slacks shifted to at least one.
    let mut d = {
        let mut h_reg = problem.hessian.clone();
        for i in 0..n {
            h_reg[(i, i)] += 1.0;
        }
        let mut rhs = DVector::zeros(n + p);
        rhs.rows_mut(0, n).copy_from(&(-&problem.linear));
        if p > 0 {
            rhs.rows_mut(n, p).copy_from(&problem.eq_rhs);
        }
        match solve_kkt_system(&h_reg, &problem.eq_mat, &rhs) {
            Some(sol) => DVector::from(sol.rows(0, n).into_owned()),
            None => DVector::zeros(n),
        }
    };
    let mut s = {
        let slack = &problem.ineq_rhs - &problem.ineq_mat * &d;
        slack.map(|v| v.max(1.0))
    };
    let mut mu = DVector::from_element(m, 1.0);
    let mut nu = DVector::zeros(p);

    let rhs_scale = 1.0_f64
        .max(problem.ineq_rhs.amax())
        .max(if p > 0 { problem.eq_rhs.amax() } else { 0.0 });

    let mut iterations = max_iter;
    let mut best_primal = f64::INFINITY;
    let mut declared_infeasible = false;
    let mut stall = 0usize;
    let mut best_residual = f64::INFINITY;
    let mut no_progress = 0usize;

    for iter in 0..max_iter {
        let r_d = &problem.hessian * &d
            + &problem.linear
            + problem.ineq_mat.transpose() * &mu
            + problem.eq_mat.transpose() * &nu;
        let r_p = &problem.ineq_mat * &d + &s - &problem.ineq_rhs;
        let r_e = &problem.eq_mat * &d - &problem.eq_rhs;
        let comp = s.component_mul(&mu);

        let residual = r_d
            .amax()
            .max(r_p.amax())
            .max(if p > 0 { r_e.amax() } else { 0.0 })
            .max(comp.amax());
        if std::env::var_os("CDP_QP_TRACE").is_some() {
            eprintln!(
                "ipm iter {iter}: r_d {:.3e} r_p {:.3e} r_e {:.3e} comp {:.3e}",
                r_d.amax(),
                r_p.amax(),
                if p > 0 { r_e.amax() } else { 0.0 },
                comp.amax()
            );
        }
        if residual <= tol || !residual.is_finite() {
            iterations = iter;
            break;
        }
        // Degenerate geometries can freeze the central path above the
        // tolerance; bail out and let the polish finish the job.
        if residual > 0.99 * best_residual {
            no_progress += 1;
            if no_progress >= 15 {
                iterations = iter;
                break;
            }
        } else {
            no_progress = 0;
        }
        best_residual = best_residual.min(residual);

        let primal_scaled = r_p.amax().max(if p > 0 { r_e.amax() } else { 0.0 }) / rhs_scale;
        if primal_scaled > STALL_LEVEL && primal_scaled > 0.9 * best_primal {
            stall += 1;
            if stall >= STALL_LIMIT {
                declared_infeasible = true;
                iterations = iter;
                break;
            }
        } else {
            stall = 0;
        }
        best_primal = best_primal.min(primal_scaled);

        // Reduced system matrix Q + Gᵀ diag(μ/s) G.
        let mut m_block = problem.hessian.clone();
        for row in 0..m {
            let w = mu[row] / s[row];
            for i in 0..n {
                let gi = problem.ineq_mat[(row, i)];
                if gi == 0.0 {
                    continue;
                }
                for j in 0..n {
                    m_block[(i, j)] += w * gi * problem.ineq_mat[(row, j)];
                }
            }
        }

        let solve_direction = |rc: &DVector<f64>| -> Option<(
            DVector<f64>,
            DVector<f64>,
            DVector<f64>,
            DVector<f64>,
        )> {
            let mut top = -&r_d;
            let mut weighted = DVector::zeros(m);
            for i in 0..m {
                weighted[i] = (rc[i] - mu[i] * r_p[i]) / s[i];
            }
            top += problem.ineq_mat.transpose() * &weighted;
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&top);
            if p > 0 {
                rhs.rows_mut(n, p).copy_from(&(-&r_e));
            }
            let sol = solve_kkt_system(&m_block, &problem.eq_mat, &rhs)?;
            let dd = DVector::from(sol.rows(0, n).into_owned());
            let dnu = DVector::from(sol.rows(n, p).into_owned());
            let ds = -&r_p - &problem.ineq_mat * &dd;
            let mut dmu = DVector::zeros(m);
            for i in 0..m {
                dmu[i] = (-rc[i] - mu[i] * ds[i]) / s[i];
            }
            Some((dd, dnu, ds, dmu))
        };

        // Affine predictor.
        let Some((_, _, ds_aff, dmu_aff)) = solve_direction(&comp) else {
            iterations = iter;
            break;
        };
        let alpha_p_aff = step_length(&s, &ds_aff, 1.0);
        let alpha_d_aff = step_length(&mu, &dmu_aff, 1.0);
        let mu_meas = comp.sum() / m as f64;
        let mut mu_aff = 0.0;
        for i in 0..m {
            mu_aff += (s[i] + alpha_p_aff * ds_aff[i]) * (mu[i] + alpha_d_aff * dmu_aff[i]);
        }
        mu_aff /= m as f64;
        let sigma = (mu_aff / mu_meas).clamp(0.0, 1.0).powi(3);

        // Centering-corrector step.
        let mut rc = comp.clone();
        for i in 0..m {
            rc[i] += ds_aff[i] * dmu_aff[i] - sigma * mu_meas;
        }
        let Some((dd, dnu, ds, dmu)) = solve_direction(&rc) else {
            iterations = iter;
            break;
        };
        // Step closer to the boundary as the barrier weight vanishes.
        let frac = STEP_FRACTION.max(1.0 - mu_meas).min(0.99999);
        let alpha_p = step_length(&s, &ds, frac);
        let alpha_d = step_length(&mu, &dmu, frac);
        d += alpha_p * &dd;
        s += alpha_p * &ds;
        mu += alpha_d * &dmu;
        nu += alpha_d * &dnu;

        if !d.iter().all(|v| v.is_finite()) || !mu.iter().all(|v| v.is_finite()) {
            iterations = iter;
            break;
        }
    }

    let mut kkt_residual = kkt_residual_at(problem, &d, &mu, &nu);
    // Active-set polish; keep the best candidate and only when it helps.
    if d.iter().all(|v| v.is_finite()) && mu.iter().all(|v| v.is_finite()) {
        for (d_new, mu_new, nu_new) in polish(problem, &s, &mu) {
            let polished_residual = kkt_residual_at(problem, &d_new, &mu_new, &nu_new);
            if polished_residual < kkt_residual {
                d = d_new;
                mu = mu_new;
                nu = nu_new;
                kkt_residual = polished_residual;
            }
        }
    }
    let status = if kkt_residual <= tol {
        QpStatus::Optimal
    } else if declared_infeasible || best_primal > STALL_LEVEL {
        // The iteration never came close to primal feasibility.
        QpStatus::Infeasible
    } else {
        QpStatus::MaxIterations
    };
    QpSolution {
        primal: d,
        ineq_duals: mu,
        eq_duals: nu,
        status,
        kkt_residual,
        iterations,
    }
}

/// Euclidean projection of `target` onto `{x : C x ≤ c0, Eq x = e0}`.
///
/// Solved as the QP `min ½‖x − target‖²`; the returned duals satisfy
/// `target − point = Cᵀ·ineq_duals + Eqᵀ·eq_duals` with nonnegative
/// inequality duals and complementarity.
pub fn project_polyhedron(
    target: &DVector<f64>,
    c_mat: &DMatrix<f64>,
    c0: &DVector<f64>,
    eq_mat: &DMatrix<f64>,
    e0: &DVector<f64>,
    tol: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = target.len();
    let problem = QpProblem::new(
        DMatrix::identity(n, n),
        -target.clone(),
        c_mat.clone(),
        c0.clone(),
        eq_mat.clone(),
        e0.clone(),
    )?;
    let sol = qp_solve(&problem, tol, DEFAULT_QP_MAX_ITER).into_optimal("polyhedral projection")?;
    Ok((sol.primal, sol.ineq_duals, sol.eq_duals))
}
