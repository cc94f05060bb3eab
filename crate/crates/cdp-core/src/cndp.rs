//! Continuous network design: pick link capacity expansions minimizing
//! total travel plus expansion cost, with link flows at user equilibrium.
//!
//! The equilibrium condition is the VI `v ∈ S(y)` over the flow polytope
//! `Ω = {v = Δh : Λh = r, h ≥ 0}`; paths are kept as explicit variables so
//! that the constraint set stays affine and projections stay exact. Travel
//! times follow the quartic congestion law
//! `t_a(y_a, v_a) = A_a + B_a (v_a/(K_a+y_a))⁴` with linear expansion cost
//! `D_a y_a`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{DifferenceProgram, Polyhedron};
use crate::qp::{project_polyhedron, qp_solve, QpProblem, QpStatus};
use crate::vi::{gap_value, to_difference_program, ParametricPolyhedron, ViProblem, DEFAULT_GAMMA};

/// Default lower-level equilibrium tolerance; objective values reported to
/// two decimals need the equilibrium error far below 1e-2.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

const EQUILIBRIUM_MAX_ITER: usize = 20_000;

/// One road network: per-link cost parameters and the path structure.
#[derive(Debug, Clone)]
pub struct NetworkInstance {
    /// Free-flow travel times A.
    free_flow: DVector<f64>,
    /// Congestion coefficients B.
    congestion: DVector<f64>,
    /// Base capacities K, strictly positive.
    capacity: DVector<f64>,
    /// Expansion cost rates D.
    expansion_cost: DVector<f64>,
    /// Link-path incidence Δ (n_links × n_paths, entries 0/1).
    link_path: DMatrix<f64>,
    /// OD-path incidence Λ (n_od × n_paths, entries 0/1, column sums 1).
    od_path: DMatrix<f64>,
    /// OD demands r.
    demands: DVector<f64>,
}

impl NetworkInstance {
    pub fn new(
        free_flow: DVector<f64>,
        congestion: DVector<f64>,
        capacity: DVector<f64>,
        expansion_cost: DVector<f64>,
        link_path: DMatrix<f64>,
        od_path: DMatrix<f64>,
        demands: DVector<f64>,
    ) -> Result<Self> {
        let n_links = free_flow.len();
        let n_paths = link_path.ncols();
        let n_od = od_path.nrows();
        if congestion.len() != n_links
            || capacity.len() != n_links
            || expansion_cost.len() != n_links
        {
            return Err(Error::InvalidInput("link parameter length mismatch".into()));
        }
        if link_path.nrows() != n_links {
            return Err(Error::InvalidInput(format!(
                "link-path incidence has {} rows, expected {n_links}",
                link_path.nrows()
            )));
        }
        if od_path.ncols() != n_paths {
            return Err(Error::InvalidInput(format!(
                "od-path incidence has {} columns, expected {n_paths}",
                od_path.ncols()
            )));
        }
        if demands.len() != n_od {
            return Err(Error::InvalidInput("demand length mismatch".into()));
        }
        for a in 0..n_links {
            if free_flow[a] < 0.0
                || congestion[a] < 0.0
                || capacity[a] <= 0.0
                || expansion_cost[a] < 0.0
            {
                return Err(Error::InvalidInput(format!(
                    "link {} must have A,B,D >= 0 and K > 0",
                    a + 1
                )));
            }
        }
        for mat in [&link_path, &od_path] {
            if mat.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidInput("incidence entries must be 0 or 1".into()));
            }
        }
        for j in 0..n_paths {
            if link_path.column(j).sum() < 1.0 {
                return Err(Error::InvalidInput(format!(
                    "path {} uses no links",
                    j + 1
                )));
            }
            if (od_path.column(j).sum() - 1.0).abs() > 0.0 {
                return Err(Error::InvalidInput(format!(
                    "path {} must belong to exactly one OD pair",
                    j + 1
                )));
            }
        }
        if demands.iter().any(|&r| r < 0.0) {
            return Err(Error::InvalidInput("demands must be nonnegative".into()));
        }
        Ok(Self {
            free_flow,
            congestion,
            capacity,
            expansion_cost,
            link_path,
            od_path,
            demands,
        })
    }

    pub fn n_links(&self) -> usize {
        self.free_flow.len()
    }

    pub fn n_paths(&self) -> usize {
        self.link_path.ncols()
    }

    pub fn n_od(&self) -> usize {
        self.od_path.nrows()
    }

    pub fn free_flow(&self) -> &DVector<f64> {
        &self.free_flow
    }

    pub fn congestion(&self) -> &DVector<f64> {
        &self.congestion
    }

    pub fn capacity(&self) -> &DVector<f64> {
        &self.capacity
    }

    pub fn expansion_cost(&self) -> &DVector<f64> {
        &self.expansion_cost
    }

    pub fn link_path(&self) -> &DMatrix<f64> {
        &self.link_path
    }

    pub fn od_path(&self) -> &DMatrix<f64> {
        &self.od_path
    }

    pub fn demands(&self) -> &DVector<f64> {
        &self.demands
    }

    /// Same network with a replacement demand vector.
    pub fn with_demands(&self, demands: DVector<f64>) -> Result<Self> {
        let mut out = self.clone();
        if demands.len() != self.n_od() {
            return Err(Error::InvalidInput(format!(
                "demand vector has {} entries, network has {} OD pairs",
                demands.len(),
                self.n_od()
            )));
        }
        if demands.iter().any(|&r| r < 0.0) {
            return Err(Error::InvalidInput("demands must be nonnegative".into()));
        }
        out.demands = demands;
        Ok(out)
    }
}

/// The three built-in demand presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemandScenario {
    Low,
    Mid,
    High,
}

impl DemandScenario {
    pub fn demands(&self) -> [f64; 2] {
        match self {
            DemandScenario::Low => [2.5, 5.0],
            DemandScenario::Mid => [5.0, 10.0],
            DemandScenario::High => [10.0, 20.0],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DemandScenario::Low => "low",
            DemandScenario::Mid => "mid",
            DemandScenario::High => "high",
        }
    }

    /// Applies the preset to a two-OD network.
    pub fn apply(&self, inst: &NetworkInstance) -> Result<NetworkInstance> {
        if inst.n_od() != 2 {
            return Err(Error::InvalidInput(format!(
                "demand scenarios assume 2 OD pairs, network has {}",
                inst.n_od()
            )));
        }
        let [r1, r2] = self.demands();
        inst.with_demands(DVector::from_vec(vec![r1, r2]))
    }
}

impl std::str::FromStr for DemandScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(DemandScenario::Low),
            "mid" => Ok(DemandScenario::Mid),
            "high" => Ok(DemandScenario::High),
            other => Err(Error::InvalidInput(format!(
                "unknown scenario '{other}', expected low|mid|high"
            ))),
        }
    }
}

/// Design state: expansions, link flows and the path flows carrying them.
#[derive(Debug, Clone)]
pub struct CndpState {
    pub y: DVector<f64>,
    pub v: DVector<f64>,
    pub h: DVector<f64>,
}

impl CndpState {
    pub fn new(
        inst: &NetworkInstance,
        y: DVector<f64>,
        v: DVector<f64>,
        h: DVector<f64>,
    ) -> Result<Self> {
        if y.len() != inst.n_links() || v.len() != inst.n_links() || h.len() != inst.n_paths() {
            return Err(Error::InvalidInput("state dimension mismatch".into()));
        }
        if y.iter().any(|&c| c < -1e-9) || h.iter().any(|&c| c < -1e-9) {
            return Err(Error::InvalidInput("y and h must be nonnegative".into()));
        }
        if (inst.link_path() * &h - &v).amax() > 1e-8 {
            return Err(Error::InvalidInput("v does not match Δh".into()));
        }
        if (inst.od_path() * &h - inst.demands()).amax() > 1e-8 {
            return Err(Error::InvalidInput("h does not meet the demands".into()));
        }
        Ok(Self { y, v, h })
    }

    /// Stacked VI variable `z = (v, h)`.
    pub fn z(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.v.len() + self.h.len());
        z.rows_mut(0, self.v.len()).copy_from(&self.v);
        z.rows_mut(self.v.len(), self.h.len()).copy_from(&self.h);
        z
    }
}

/// Componentwise travel times `t_a = A_a + B_a (v_a/(K_a+y_a))⁴`.
pub fn travel_time(
    inst: &NetworkInstance,
    y: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = inst.n_links();
    let mut t = DVector::zeros(n);
    for a in 0..n {
        let cap = inst.capacity[a] + y[a];
        if cap <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "nonpositive effective capacity K+y = {cap} on link {}",
                a + 1
            )));
        }
        let ratio = v[a] / cap;
        t[a] = inst.free_flow[a] + inst.congestion[a] * ratio.powi(4);
    }
    Ok(t)
}

/// Diagonal partials of the travel time: `(∂t/∂v, ∂t/∂y)` with
/// `∂t_a/∂v_a = 4B_a v_a³/(K_a+y_a)⁴` and
/// `∂t_a/∂y_a = −4B_a v_a⁴/(K_a+y_a)⁵`.
pub fn travel_time_partials(
    inst: &NetworkInstance,
    y: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = inst.n_links();
    let mut dv = DVector::zeros(n);
    let mut dy = DVector::zeros(n);
    for a in 0..n {
        let cap = inst.capacity[a] + y[a];
        if cap <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "nonpositive effective capacity on link {}",
                a + 1
            )));
        }
        dv[a] = 4.0 * inst.congestion[a] * v[a].powi(3) / cap.powi(4);
        dy[a] = -4.0 * inst.congestion[a] * v[a].powi(4) / cap.powi(5);
    }
    Ok((dv, dy))
}

/// Design objective `Σ_a t_a(y_a,v_a) v_a + D_a y_a`.
pub fn cndp_objective(inst: &NetworkInstance, y: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let t = travel_time(inst, y, v)?;
    Ok(t.dot(v) + inst.expansion_cost.dot(y))
}

/// Convex potential whose gradient in `v` is the travel-time map:
/// `Σ_a A_a v_a + B_a v_a⁵ / (5 (K_a+y_a)⁴)`. Its minimum over Ω is the
/// user equilibrium, since `t` is separable and integrable.
pub fn beckmann_potential(inst: &NetworkInstance, y: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let mut total = 0.0;
    for a in 0..inst.n_links() {
        let cap = inst.capacity[a] + y[a];
        total += inst.free_flow[a] * v[a]
            + inst.congestion[a] * v[a].powi(5) / (5.0 * cap.powi(4));
    }
    total
}

/// VI form of the design problem over `x = (y, (v, h))`: `Y = {y ≥ 0}`,
/// `Γ = {(v,h) : v = Δh, Λh = r, h ≥ 0}` (independent of `y`), `F = (t, 0)`.
pub fn build_vi(inst: &NetworkInstance) -> Result<ViProblem> {
    let n_links = inst.n_links();
    let n_paths = inst.n_paths();
    let n_od = inst.n_od();
    let m2 = n_links + n_paths;

    let y_set = Polyhedron::from_box(
        DVector::from_element(n_links, 0.0),
        DVector::from_element(n_links, f64::INFINITY),
    )?;

    // Inequalities: −h ≤ 0.
    let mut c_mat = DMatrix::zeros(n_paths, m2);
    for j in 0..n_paths {
        c_mat[(j, n_links + j)] = -1.0;
    }
    // Equalities: v − Δh = 0 and Λh = r.
    let mut eq_mat = DMatrix::zeros(n_links + n_od, m2);
    let mut e0 = DVector::zeros(n_links + n_od);
    for a in 0..n_links {
        eq_mat[(a, a)] = 1.0;
        for j in 0..n_paths {
            eq_mat[(a, n_links + j)] = -inst.link_path[(a, j)];
        }
    }
    for w in 0..n_od {
        for j in 0..n_paths {
            eq_mat[(n_links + w, n_links + j)] = inst.od_path[(w, j)];
        }
        e0[n_links + w] = inst.demands[w];
    }
    let gamma_set = ParametricPolyhedron::constant(
        c_mat,
        DVector::zeros(n_paths),
        eq_mat,
        e0,
        n_links,
    );

    let inst_f = Arc::new(inst.clone());
    let inst_jy = Arc::clone(&inst_f);
    let inst_jz = Arc::clone(&inst_f);
    let inst_obj = Arc::clone(&inst_f);
    let inst_grad = Arc::clone(&inst_f);

    Ok(ViProblem::new(y_set, gamma_set, 0.0)?
        .with_mapping(
            move |y, z| {
                let v = z.rows(0, inst_f.n_links()).into_owned();
                let t = travel_time(&inst_f, y, &v.clone().into())
                    .expect("travel time undefined: y must keep K + y positive");
                let mut f = DVector::zeros(inst_f.n_links() + inst_f.n_paths());
                f.rows_mut(0, inst_f.n_links()).copy_from(&t);
                f
            },
            move |y, z| {
                let n_links = inst_jy.n_links();
                let v = DVector::from(z.rows(0, n_links).into_owned());
                let (_, dy) = travel_time_partials(&inst_jy, y, &v)
                    .expect("travel time partials undefined");
                let mut jac = DMatrix::zeros(n_links + inst_jy.n_paths(), n_links);
                for a in 0..n_links {
                    jac[(a, a)] = dy[a];
                }
                jac
            },
            move |y, z| {
                let n_links = inst_jz.n_links();
                let m2 = n_links + inst_jz.n_paths();
                let v = DVector::from(z.rows(0, n_links).into_owned());
                let (dv, _) = travel_time_partials(&inst_jz, y, &v)
                    .expect("travel time partials undefined");
                let mut jac = DMatrix::zeros(m2, m2);
                for a in 0..n_links {
                    jac[(a, a)] = dv[a];
                }
                jac
            },
        )
        .with_objective(
            move |y, z| {
                let v = DVector::from(z.rows(0, inst_obj.n_links()).into_owned());
                cndp_objective(&inst_obj, y, &v).expect("objective undefined")
            },
            move |y, z| {
                let n_links = inst_grad.n_links();
                let v = DVector::from(z.rows(0, n_links).into_owned());
                let t = travel_time(&inst_grad, y, &v).expect("travel time undefined");
                let (dv, dy) = travel_time_partials(&inst_grad, y, &v)
                    .expect("travel time partials undefined");
                let mut grad = DVector::zeros(n_links + n_links + inst_grad.n_paths());
                for a in 0..n_links {
                    grad[a] = dy[a] * v[a] + inst_grad.expansion_cost[a];
                    grad[n_links + a] = t[a] + dv[a] * v[a];
                }
                grad
            },
        ))
}

/// The design problem as a constrained difference program, together with
/// the VI handle and the standard starting point.
pub fn cndp_program(
    inst: &NetworkInstance,
    gamma: f64,
    epsilon: f64,
) -> Result<(Arc<ViProblem>, DifferenceProgram, DVector<f64>)> {
    let vi = Arc::new(build_vi(inst)?);
    let prog = to_difference_program(Arc::clone(&vi), gamma, epsilon)?;
    let state = initial_point(inst);
    let mut x0 = DVector::zeros(inst.n_links() + inst.n_links() + inst.n_paths());
    x0.rows_mut(0, inst.n_links()).copy_from(&state.y);
    x0.rows_mut(inst.n_links(), inst.n_links() + inst.n_paths())
        .copy_from(&state.z());
    Ok((vi, prog, x0))
}

/// Standard start: zero expansion, each OD demand split evenly over its
/// paths.
pub fn initial_point(inst: &NetworkInstance) -> CndpState {
    let n_paths = inst.n_paths();
    let mut h = DVector::zeros(n_paths);
    for w in 0..inst.n_od() {
        let count = inst.od_path.row(w).sum();
        if count == 0.0 {
            continue;
        }
        for j in 0..n_paths {
            if inst.od_path[(w, j)] == 1.0 {
                h[j] = inst.demands[w] / count;
            }
        }
    }
    let v = &inst.link_path * &h;
    CndpState {
        y: DVector::zeros(inst.n_links()),
        v,
        h,
    }
}

/// Minimum-norm path decomposition of a link flow: the unique minimizer of
/// `½‖h‖²` over `{Δh = v, Λh = r, h ≥ 0}`. Used to lift a bare link-flow
/// vector to the stacked VI state.
pub fn min_norm_path_flows(inst: &NetworkInstance, v: &DVector<f64>) -> Result<DVector<f64>> {
    let n_paths = inst.n_paths();
    let mut neg_identity = DMatrix::zeros(n_paths, n_paths);
    for j in 0..n_paths {
        neg_identity[(j, j)] = -1.0;
    }
    let mut eq_mat = DMatrix::zeros(inst.n_links() + inst.n_od(), n_paths);
    eq_mat
        .view_mut((0, 0), (inst.n_links(), n_paths))
        .copy_from(&inst.link_path);
    eq_mat
        .view_mut((inst.n_links(), 0), (inst.n_od(), n_paths))
        .copy_from(&inst.od_path);
    let mut e0 = DVector::zeros(inst.n_links() + inst.n_od());
    e0.rows_mut(0, inst.n_links()).copy_from(v);
    e0.rows_mut(inst.n_links(), inst.n_od())
        .copy_from(&inst.demands);
    let (h, _, _) = project_polyhedron(
        &DVector::zeros(n_paths),
        &neg_identity,
        &DVector::zeros(n_paths),
        &eq_mat,
        &e0,
        1e-10,
    )
    .map_err(|e| match e {
        Error::Infeasible(_) => {
            Error::Infeasible("link flow is not decomposable over the path set".into())
        }
        other => other,
    })?;
    Ok(h)
}

/// VI residual at `(y, v)`: the regularized gap of the path-embedded VI,
/// evaluated at the minimum-norm decomposition of `v` and computed here by
/// assembling the value-function QP directly (an independent route from
/// the projection-based `gap_value`).
pub fn kappa_measure(
    inst: &NetworkInstance,
    y: &DVector<f64>,
    v: &DVector<f64>,
    gamma: f64,
) -> Result<f64> {
    let h = min_norm_path_flows(inst, v)?;
    let state = CndpState::new(inst, y.clone(), v.clone(), h)?;
    kappa_at_state(inst, &state, gamma)
}

/// Same residual evaluated at an explicit state, skipping the
/// decomposition.
pub fn kappa_at_state(inst: &NetworkInstance, state: &CndpState, gamma: f64) -> Result<f64> {
    let n_links = inst.n_links();
    let n_paths = inst.n_paths();
    let n_od = inst.n_od();
    let m2 = n_links + n_paths;
    let z = state.z();
    let t = travel_time(inst, &state.y, &state.v)?;
    let mut f = DVector::zeros(m2);
    f.rows_mut(0, n_links).copy_from(&t);

    // min over θ ∈ Γ of ⟨F, θ⟩ + (1/2γ)‖θ − z‖², assembled as
    // ½θᵀ(I/γ)θ + (F − z/γ)ᵀθ plus the constant ‖z‖²/(2γ).
    let mut hessian = DMatrix::zeros(m2, m2);
    for i in 0..m2 {
        hessian[(i, i)] = 1.0 / gamma;
    }
    let linear = &f - &z / gamma;
    let mut c_mat = DMatrix::zeros(n_paths, m2);
    for j in 0..n_paths {
        c_mat[(j, n_links + j)] = -1.0;
    }
    let mut eq_mat = DMatrix::zeros(n_links + n_od, m2);
    let mut e0 = DVector::zeros(n_links + n_od);
    for a in 0..n_links {
        eq_mat[(a, a)] = 1.0;
        for j in 0..n_paths {
            eq_mat[(a, n_links + j)] = -inst.link_path[(a, j)];
        }
    }
    for w in 0..n_od {
        for j in 0..n_paths {
            eq_mat[(n_links + w, n_links + j)] = inst.od_path[(w, j)];
        }
        e0[n_links + w] = inst.demands[w];
    }
    let problem = QpProblem::new(
        hessian,
        linear,
        c_mat,
        DVector::zeros(n_paths),
        eq_mat,
        e0,
    )?;
    let sol = qp_solve(&problem, 1e-11, 200);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::MaxIterations if sol.kkt_residual <= 1e-8 => {}
        QpStatus::Infeasible => {
            return Err(Error::Infeasible("flow polytope is empty".into()));
        }
        _ => return Err(Error::MaxIterations("kappa value QP".into())),
    }
    let mu = problem.objective(&sol.primal) + z.norm_squared() / (2.0 * gamma);
    Ok(f.dot(&z) - mu)
}

/// Solves the lower-level user equilibrium at fixed `y` by projected
/// gradient with backtracking on the Beckmann potential in path space,
/// until the VI residual drops to `tol`.
pub fn solve_lower_equilibrium(
    inst: &NetworkInstance,
    y: &DVector<f64>,
    tol: f64,
) -> Result<CndpState> {
    let n_paths = inst.n_paths();
    let vi = build_vi(inst)?;
    let gamma = DEFAULT_GAMMA;

    // Projection data for {Λh = r, h ≥ 0}.
    let mut neg_identity = DMatrix::zeros(n_paths, n_paths);
    for j in 0..n_paths {
        neg_identity[(j, j)] = -1.0;
    }
    let zeros = DVector::zeros(n_paths);

    let mut h = initial_point(inst).h;
    let mut step = 1.0;
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;

    for iter in 0..EQUILIBRIUM_MAX_ITER {
        let v = &inst.link_path * &h;
        let t = travel_time(inst, y, &v)?;
        let grad = inst.link_path.transpose() * &t;

        if iter % 5 == 0 {
            let state = CndpState {
                y: y.clone(),
                v: v.clone(),
                h: h.clone(),
            };
            let gap = gap_value(&vi, y, &state.z(), gamma)?;
            if gap <= tol {
                return Ok(state);
            }
        }

        // Barzilai-Borwein step seed, safeguarded.
        if let Some((h_prev, grad_prev)) = &prev {
            let dh = &h - h_prev;
            let dg = &grad - grad_prev;
            let denom = dh.dot(&dg);
            if denom > 1e-14 * dh.norm() * dg.norm() {
                step = (dh.dot(&dh) / denom).clamp(1e-8, 1e8);
            }
        }
        prev = Some((h.clone(), grad.clone()));

        let value = beckmann_potential(inst, y, &v);
        let mut accepted = None;
        for _ in 0..60 {
            let target = &h - step * &grad;
            let (h_new, _, _) = project_polyhedron(
                &target,
                &neg_identity,
                &zeros,
                &inst.od_path,
                &inst.demands,
                1e-10,
            )?;
            let diff = &h_new - &h;
            let value_new = beckmann_potential(inst, y, &(&inst.link_path * &h_new));
            let bound =
                value + grad.dot(&diff) + diff.norm_squared() / (2.0 * step) + 1e-12 * (1.0 + value.abs());
            if value_new <= bound {
                accepted = Some(h_new);
                break;
            }
            step *= 0.5;
        }
        let Some(h_new) = accepted else {
            return Err(Error::MaxIterations(
                "equilibrium line search stalled".into(),
            ));
        };
        h = h_new;
    }
    Err(Error::MaxIterations(format!(
        "equilibrium solve did not reach tol {tol} within {EQUILIBRIUM_MAX_ITER} iterations"
    )))
}

/// Built-in four-link test network: two OD pairs, each served by two
/// parallel links with one path per link.
pub fn synthetic_four_link() -> NetworkInstance {
    let mut link_path = DMatrix::zeros(4, 4);
    for j in 0..4 {
        link_path[(j, j)] = 1.0;
    }
    let od_path = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    NetworkInstance::new(
        DVector::from_vec(vec![1.0, 2.0, 1.5, 3.0]),
        DVector::from_vec(vec![10.0, 5.0, 8.0, 6.0]),
        DVector::from_vec(vec![2.0, 3.0, 2.5, 2.0]),
        DVector::from_vec(vec![2.0, 3.0, 2.5, 4.0]),
        link_path,
        od_path,
        DVector::from_vec(vec![2.5, 5.0]),
    )
    .expect("built-in network data is valid")
}

// ---------------------------------------------------------------------
// Network file format
// ---------------------------------------------------------------------

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_float(line: usize, text: &str, key: &str) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| parse_err(line, format!("invalid {key} value '{text}'")))
}

fn key_value<'a>(line: usize, token: &'a str, key: &str) -> Result<&'a str> {
    token
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| parse_err(line, format!("expected {key}=<value>, found '{token}'")))
}

/// Parses the line-oriented network format:
///
/// ```text
/// cndp-network v1
/// links <n>
/// link <id> A=<f> B=<f> K=<f> D=<f>
/// paths <m>
/// path <id> od=<w> links=<id,id,...>
/// demands <q>
/// od <w> r=<f>
/// ```
///
/// `#` starts a comment. Duplicate ids and dangling link references are
/// rejected with the offending line number.
pub fn parse_network(text: &str) -> Result<NetworkInstance> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(idx, raw)| {
            let content = raw.split('#').next().unwrap_or("").trim();
            (idx + 1, content)
        })
        .filter(|(_, content)| !content.is_empty());

    let mut next = |expect: &str| -> Result<(usize, String)> {
        lines
            .next()
            .map(|(n, s)| (n, s.to_string()))
            .ok_or_else(|| parse_err(0, format!("unexpected end of file, expected {expect}")))
    };

    let (line, header) = next("header")?;
    if header != "cndp-network v1" {
        return Err(parse_err(line, "expected header 'cndp-network v1'"));
    }

    let (line, links_decl) = next("'links <n>'")?;
    let n_links: usize = links_decl
        .strip_prefix("links ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(line, "expected 'links <n>'"))?;

    let mut link_index: BTreeMap<u64, usize> = BTreeMap::new();
    let mut free_flow = DVector::zeros(n_links);
    let mut congestion = DVector::zeros(n_links);
    let mut capacity = DVector::zeros(n_links);
    let mut expansion = DVector::zeros(n_links);
    for row in 0..n_links {
        let (line, decl) = next("a 'link' line")?;
        let tokens: Vec<&str> = decl.split_whitespace().collect();
        if tokens.len() != 6 || tokens[0] != "link" {
            return Err(parse_err(line, "expected 'link <id> A=<f> B=<f> K=<f> D=<f>'"));
        }
        let id: u64 = tokens[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid link id '{}'", tokens[1])))?;
        if link_index.insert(id, row).is_some() {
            return Err(parse_err(line, format!("duplicate link id {id}")));
        }
        free_flow[row] = parse_float(line, key_value(line, tokens[2], "A")?, "A")?;
        congestion[row] = parse_float(line, key_value(line, tokens[3], "B")?, "B")?;
        capacity[row] = parse_float(line, key_value(line, tokens[4], "K")?, "K")?;
        expansion[row] = parse_float(line, key_value(line, tokens[5], "D")?, "D")?;
    }

    let (line, paths_decl) = next("'paths <m>'")?;
    let n_paths: usize = paths_decl
        .strip_prefix("paths ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(line, "expected 'paths <m>'"))?;

    let mut path_ids: BTreeMap<u64, usize> = BTreeMap::new();
    let mut link_path = DMatrix::zeros(n_links, n_paths);
    let mut path_od: Vec<(usize, u64)> = Vec::with_capacity(n_paths);
    for col in 0..n_paths {
        let (line, decl) = next("a 'path' line")?;
        let tokens: Vec<&str> = decl.split_whitespace().collect();
        if tokens.len() != 4 || tokens[0] != "path" {
            return Err(parse_err(line, "expected 'path <id> od=<w> links=<id,...>'"));
        }
        let id: u64 = tokens[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid path id '{}'", tokens[1])))?;
        if path_ids.insert(id, col).is_some() {
            return Err(parse_err(line, format!("duplicate path id {id}")));
        }
        let od: u64 = key_value(line, tokens[2], "od")?
            .parse()
            .map_err(|_| parse_err(line, "invalid od index"))?;
        path_od.push((line, od));
        let link_list = key_value(line, tokens[3], "links")?;
        for piece in link_list.split(',') {
            let link_id: u64 = piece
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("invalid link reference '{piece}'")))?;
            let Some(&row) = link_index.get(&link_id) else {
                return Err(parse_err(
                    line,
                    format!("path {id} references undeclared link {link_id}"),
                ));
            };
            link_path[(row, col)] = 1.0;
        }
    }

    let (line, demands_decl) = next("'demands <q>'")?;
    let n_od: usize = demands_decl
        .strip_prefix("demands ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(line, "expected 'demands <q>'"))?;

    let mut demands = DVector::zeros(n_od);
    let mut seen = vec![false; n_od];
    for _ in 0..n_od {
        let (line, decl) = next("an 'od' line")?;
        let tokens: Vec<&str> = decl.split_whitespace().collect();
        if tokens.len() != 3 || tokens[0] != "od" {
            return Err(parse_err(line, "expected 'od <w> r=<f>'"));
        }
        let w: usize = tokens[1]
            .parse()
            .map_err(|_| parse_err(line, "invalid od index"))?;
        if w == 0 || w > n_od {
            return Err(parse_err(line, format!("od index {w} out of range 1..={n_od}")));
        }
        if seen[w - 1] {
            return Err(parse_err(line, format!("duplicate demand for od {w}")));
        }
        seen[w - 1] = true;
        demands[w - 1] = parse_float(line, key_value(line, tokens[2], "r")?, "r")?;
    }

    if let Some((extra_line, _)) = lines.next() {
        return Err(parse_err(extra_line, "trailing content after demands"));
    }

    let mut od_path = DMatrix::zeros(n_od, n_paths);
    for (col, &(line, od)) in path_od.iter().enumerate() {
        if od == 0 || od as usize > n_od {
            return Err(parse_err(
                line,
                format!("path references od {od} outside 1..={n_od}"),
            ));
        }
        od_path[(od as usize - 1, col)] = 1.0;
    }

    NetworkInstance::new(
        free_flow, congestion, capacity, expansion, link_path, od_path, demands,
    )
}

/// Loads a network from a file path.
pub fn load_network(path: &std::path::Path) -> Result<NetworkInstance> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::InvalidInput(format!("cannot read {}: {e}", path.display()))
    })?;
    parse_network(&text)
}
