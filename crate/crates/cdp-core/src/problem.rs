//! Constrained difference programs and their stationarity measures.
//!
//! A difference program minimizes `φ₀ = g₀ − h₀` over a polyhedron subject
//! to `φ₁ = g₁ − h₁ ≤ 0`, where the `g` parts are smooth and the `h` parts
//! are supplied through subgradient oracles. The module holds the
//! polyhedral feasible-set type, the oracle bundle, the penalized merit
//! function `φ_p = (1/p)φ₀ + max{φ₁, 0}` and the KKT residual used by the
//! solvers' stopping certificates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::project_polyhedron;

/// Default tolerance on membership in the polyhedral set.
pub const SET_FEAS_TOL: f64 = 1e-8;
/// Default tolerance on the difference constraint φ₁ ≤ 0.
pub const PHI1_FEAS_TOL: f64 = 1e-6;

pub type ValueFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type GradFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Closed convex polyhedron `{x : C x ≤ c0, Eq x = e0, l ≤ x ≤ u}`.
///
/// Nonemptiness is verified on construction with one feasibility QP;
/// box bounds may contain ±∞ entries.
#[derive(Debug, Clone)]
pub struct Polyhedron {
    dim: usize,
    c_mat: DMatrix<f64>,
    c0: DVector<f64>,
    eq_mat: DMatrix<f64>,
    e0: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl Polyhedron {
    pub fn new(
        c_mat: DMatrix<f64>,
        c0: DVector<f64>,
        eq_mat: DMatrix<f64>,
        e0: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let dim = lower.len();
        if upper.len() != dim {
            return Err(Error::InvalidInput("bound length mismatch".into()));
        }
        if (c_mat.nrows() > 0 && c_mat.ncols() != dim) || c_mat.nrows() != c0.len() {
            return Err(Error::InvalidInput("inequality block shape mismatch".into()));
        }
        if (eq_mat.nrows() > 0 && eq_mat.ncols() != dim) || eq_mat.nrows() != e0.len() {
            return Err(Error::InvalidInput("equality block shape mismatch".into()));
        }
        for i in 0..dim {
            if lower[i] > upper[i] {
                return Err(Error::Infeasible(format!(
                    "empty box: component {i} has lower {} > upper {}",
                    lower[i], upper[i]
                )));
            }
        }
        let set = Self {
            dim,
            c_mat,
            c0,
            eq_mat,
            e0,
            lower,
            upper,
        };
        if set.c_mat.nrows() > 0 || set.eq_mat.nrows() > 0 {
            // One feasibility QP: project the origin onto the set.
            set.project(&DVector::zeros(dim)).map_err(|e| match e {
                Error::Infeasible(_) => Error::Infeasible("polyhedron is empty".into()),
                other => other,
            })?;
        }
        Ok(set)
    }

    /// The whole space, no constraints.
    pub fn whole_space(dim: usize) -> Self {
        Self {
            dim,
            c_mat: DMatrix::zeros(0, dim),
            c0: DVector::zeros(0),
            eq_mat: DMatrix::zeros(0, dim),
            e0: DVector::zeros(0),
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }

    /// Box `l ≤ x ≤ u` with ±∞ entries allowed.
    pub fn from_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let dim = lower.len();
        Self::new(
            DMatrix::zeros(0, dim),
            DVector::zeros(0),
            DMatrix::zeros(0, dim),
            DVector::zeros(0),
            lower,
            upper,
        )
    }

    /// Polyhedron from inequality rows only.
    pub fn from_inequalities(c_mat: DMatrix<f64>, c0: DVector<f64>) -> Result<Self> {
        let dim = c_mat.ncols();
        Self::new(
            c_mat,
            c0,
            DMatrix::zeros(0, dim),
            DVector::zeros(0),
            DVector::from_element(dim, f64::NEG_INFINITY),
            DVector::from_element(dim, f64::INFINITY),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inequality_rows(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.c_mat, &self.c0)
    }

    pub fn equality_rows(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.eq_mat, &self.e0)
    }

    pub fn bounds(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.lower, &self.upper)
    }

    /// All inequalities including finite box bounds, as explicit rows.
    pub fn assembled_inequalities(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for r in 0..self.c_mat.nrows() {
            rows.push(self.c_mat.row(r).transpose());
            rhs.push(self.c0[r]);
        }
        for i in 0..self.dim {
            if self.lower[i].is_finite() {
                let mut row = DVector::zeros(self.dim);
                row[i] = -1.0;
                rows.push(row);
                rhs.push(-self.lower[i]);
            }
            if self.upper[i].is_finite() {
                let mut row = DVector::zeros(self.dim);
                row[i] = 1.0;
                rows.push(row);
                rhs.push(self.upper[i]);
            }
        }
        let mut mat = DMatrix::zeros(rows.len(), self.dim);
        for (r, row) in rows.iter().enumerate() {
            mat.row_mut(r).copy_from(&row.transpose());
        }
        (mat, DVector::from_vec(rhs))
    }

    /// Worst constraint violation at `x` (zero inside the set).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0_f64;
        if self.c_mat.nrows() > 0 {
            let r = &self.c_mat * x - &self.c0;
            worst = worst.max(r.max());
        }
        if self.eq_mat.nrows() > 0 {
            worst = worst.max((&self.eq_mat * x - &self.e0).amax());
        }
        for i in 0..self.dim {
            if self.lower[i].is_finite() {
                worst = worst.max(self.lower[i] - x[i]);
            }
            if self.upper[i].is_finite() {
                worst = worst.max(x[i] - self.upper[i]);
            }
        }
        worst
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.violation(x) <= tol
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, target: &DVector<f64>) -> Result<DVector<f64>> {
        if self.c_mat.nrows() == 0
            && self.eq_mat.nrows() == 0
            && self.lower.iter().all(|v| !v.is_finite())
            && self.upper.iter().all(|v| !v.is_finite())
        {
            return Ok(target.clone());
        }
        // Pure box: clamp componentwise, no QP needed.
        if self.c_mat.nrows() == 0 && self.eq_mat.nrows() == 0 {
            let mut out = target.clone();
            for i in 0..self.dim {
                out[i] = out[i].clamp(self.lower[i], self.upper[i]);
            }
            return Ok(out);
        }
        let (c_all, rhs_all) = self.assembled_inequalities();
        let (point, _, _) =
            project_polyhedron(target, &c_all, &rhs_all, &self.eq_mat, &self.e0, 1e-10)?;
        Ok(point)
    }

    /// Product set `self × other` on stacked coordinates.
    pub fn cartesian_product(&self, other: &Polyhedron) -> Polyhedron {
        let dim = self.dim + other.dim;
        let mut c_mat = DMatrix::zeros(self.c_mat.nrows() + other.c_mat.nrows(), dim);
        c_mat
            .view_mut((0, 0), (self.c_mat.nrows(), self.dim))
            .copy_from(&self.c_mat);
        c_mat
            .view_mut((self.c_mat.nrows(), self.dim), (other.c_mat.nrows(), other.dim))
            .copy_from(&other.c_mat);
        let mut c0 = DVector::zeros(self.c0.len() + other.c0.len());
        c0.rows_mut(0, self.c0.len()).copy_from(&self.c0);
        c0.rows_mut(self.c0.len(), other.c0.len()).copy_from(&other.c0);

        let mut eq_mat = DMatrix::zeros(self.eq_mat.nrows() + other.eq_mat.nrows(), dim);
        eq_mat
            .view_mut((0, 0), (self.eq_mat.nrows(), self.dim))
            .copy_from(&self.eq_mat);
        eq_mat
            .view_mut(
                (self.eq_mat.nrows(), self.dim),
                (other.eq_mat.nrows(), other.dim),
            )
            .copy_from(&other.eq_mat);
        let mut e0 = DVector::zeros(self.e0.len() + other.e0.len());
        e0.rows_mut(0, self.e0.len()).copy_from(&self.e0);
        e0.rows_mut(self.e0.len(), other.e0.len()).copy_from(&other.e0);

        let mut lower = DVector::from_element(dim, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(dim, f64::INFINITY);
        lower.rows_mut(0, self.dim).copy_from(&self.lower);
        upper.rows_mut(0, self.dim).copy_from(&self.upper);
        lower.rows_mut(self.dim, other.dim).copy_from(&other.lower);
        upper.rows_mut(self.dim, other.dim).copy_from(&other.upper);

        Polyhedron {
            dim,
            c_mat,
            c0,
            eq_mat,
            e0,
            lower,
            upper,
        }
    }

    /// A feasible point, via projection of the origin.
    pub fn any_point(&self) -> Result<DVector<f64>> {
        let mut origin: DVector<f64> = DVector::zeros(self.dim);
        // Keep the seed inside finite bounds so the pure-box path works too.
        for i in 0..self.dim {
            origin[i] = origin[i].clamp(
                if self.lower[i].is_finite() { self.lower[i] } else { 0.0 },
                if self.upper[i].is_finite() { self.upper[i] } else { 0.0 },
            );
        }
        self.project(&origin)
    }
}

/// Stationarity certificate for a candidate point, per the KKT system of
/// the difference program with a sampled subgradient pair.
#[derive(Debug, Clone)]
pub struct KktCertificate {
    /// Multiplier of the difference constraint, ≥ 0.
    pub lambda: f64,
    /// ∞-norm of `x − Proj_X(x − r)` with `r = ∇g₀ − v₀ + λ(∇g₁ − v₁)`.
    pub stationarity_residual: f64,
    /// |λ · φ₁(x)|.
    pub complementarity_residual: f64,
    /// max of the positive part of φ₁ and the set violation.
    pub feasibility_residual: f64,
}

/// Oracle bundle for one constrained difference program.
///
/// Subgradient oracles return a single element of the subdifferential at
/// the query point; the algorithms never need the full set. The oracles
/// must be pure so that evaluations can run concurrently.
pub struct DifferenceProgram {
    n: usize,
    set: Polyhedron,
    m_phi0: f64,
    g0_value: ValueFn,
    g0_grad: GradFn,
    h0_value: ValueFn,
    h0_subgrad: GradFn,
    g1_value: ValueFn,
    g1_grad: GradFn,
    h1_value: ValueFn,
    h1_subgrad: GradFn,
}

fn zero_value() -> ValueFn {
    Box::new(|_| 0.0)
}

fn zero_grad(n: usize) -> GradFn {
    Box::new(move |_| DVector::zeros(n))
}

impl DifferenceProgram {
    /// Program with zero objective and the always-satisfied constraint
    /// `−1 ≤ 0`; install the actual oracles with the `with_*` builders.
    pub fn new(set: Polyhedron, m_phi0: f64) -> Self {
        let n = set.dim();
        Self {
            n,
            set,
            m_phi0,
            g0_value: zero_value(),
            g0_grad: zero_grad(n),
            h0_value: zero_value(),
            h0_subgrad: zero_grad(n),
            g1_value: Box::new(|_| -1.0),
            g1_grad: zero_grad(n),
            h1_value: zero_value(),
            h1_subgrad: zero_grad(n),
        }
    }

    pub fn with_g0(
        mut self,
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.g0_value = Box::new(value);
        self.g0_grad = Box::new(grad);
        self
    }

    pub fn with_h0(
        mut self,
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        subgrad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.h0_value = Box::new(value);
        self.h0_subgrad = Box::new(subgrad);
        self
    }

    pub fn with_g1(
        mut self,
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.g1_value = Box::new(value);
        self.g1_grad = Box::new(grad);
        self
    }

    pub fn with_h1(
        mut self,
        value: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        subgrad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.h1_value = Box::new(value);
        self.h1_subgrad = Box::new(subgrad);
        self
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn set(&self) -> &Polyhedron {
        &self.set
    }

    /// Lower bound of φ₀ over the set; diagnostics only, never used by
    /// the iteration itself.
    pub fn phi0_lower_bound(&self) -> f64 {
        self.m_phi0
    }

    pub fn g0(&self, x: &DVector<f64>) -> f64 {
        (self.g0_value)(x)
    }

    pub fn h0(&self, x: &DVector<f64>) -> f64 {
        (self.h0_value)(x)
    }

    pub fn g1(&self, x: &DVector<f64>) -> f64 {
        (self.g1_value)(x)
    }

    pub fn h1(&self, x: &DVector<f64>) -> f64 {
        (self.h1_value)(x)
    }

    pub fn grad_g0(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.g0_grad)(x)
    }

    pub fn subgrad_h0(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.h0_subgrad)(x)
    }

    pub fn grad_g1(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.g1_grad)(x)
    }

    pub fn subgrad_h1(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.h1_subgrad)(x)
    }

    pub fn phi0(&self, x: &DVector<f64>) -> f64 {
        let value = self.g0(x) - self.h0(x);
        debug_assert!(
            !self.set.contains(x, SET_FEAS_TOL) || value >= self.m_phi0 - 1e-9 * (1.0 + self.m_phi0.abs()),
            "phi0 {value} dips below its declared lower bound {}",
            self.m_phi0
        );
        value
    }

    pub fn phi1(&self, x: &DVector<f64>) -> f64 {
        self.g1(x) - self.h1(x)
    }

    /// Penalized merit `φ_p(x) = (1/p)φ₀(x) + max{φ₁(x), 0}`.
    pub fn merit_value(&self, x: &DVector<f64>, p: f64) -> Result<f64> {
        debug_assert!(p > 0.0, "penalty parameter must be positive");
        let value = self.phi0(x) / p + self.phi1(x).max(0.0);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("merit value at p = {p}")));
        }
        Ok(value)
    }

    /// True iff `x` lies in the set within `tol` and φ₁(x) ≤ tol.
    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.set.contains(x, tol) && self.phi1(x) <= tol
    }

    /// KKT residual with multiplier `lambda`, using the oracles' sampled
    /// subgradients. Normal-cone membership is measured with the
    /// projected-gradient residual `‖x − Proj_X(x − r)‖∞`, which is exact
    /// for convex sets.
    pub fn kkt_residual(&self, x: &DVector<f64>, lambda: f64) -> Result<KktCertificate> {
        let r = self.grad_g0(x) - self.subgrad_h0(x)
            + lambda * (self.grad_g1(x) - self.subgrad_h1(x));
        let projected = self.set.project(&(x - &r))?;
        let stationarity_residual = (x - projected).amax();
        let phi1 = self.phi1(x);
        Ok(KktCertificate {
            lambda,
            stationarity_residual,
            complementarity_residual: (lambda * phi1).abs(),
            feasibility_residual: phi1.max(0.0).max(self.set.violation(x)),
        })
    }
}

impl std::fmt::Debug for DifferenceProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DifferenceProgram")
            .field("n", &self.n)
            .field("m_phi0", &self.m_phi0)
            .finish()
    }
}
