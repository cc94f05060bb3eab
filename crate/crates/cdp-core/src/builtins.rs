//! Built-in analytic test instances used by the test suite and the CLI.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::problem::{DifferenceProgram, Polyhedron};
use crate::vi::{to_difference_program, ParametricPolyhedron, ViProblem};

/// `min x² − |x|` over `[−2, 2]`; minimizers at ±0.5 with value −0.25.
pub fn dc_abs() -> DifferenceProgram {
    let set = Polyhedron::from_box(
        DVector::from_vec(vec![-2.0]),
        DVector::from_vec(vec![2.0]),
    )
    .expect("box is nonempty");
    DifferenceProgram::new(set, -0.25)
        .with_g0(|x| x[0] * x[0], |x| DVector::from_vec(vec![2.0 * x[0]]))
        .with_h0(
            |x| x[0].abs(),
            |x| DVector::from_vec(vec![x[0].signum() * f64::from(x[0] != 0.0)]),
        )
}

/// Standard start for [`dc_abs`].
pub fn dc_abs_start() -> DVector<f64> {
    DVector::from_vec(vec![0.3])
}

/// `min x` subject to `x² − 1 ≤ 0` over `[−3, 3]`; optimum −1 with
/// multiplier 0.5.
pub fn dc_constrained() -> DifferenceProgram {
    let set = Polyhedron::from_box(
        DVector::from_vec(vec![-3.0]),
        DVector::from_vec(vec![3.0]),
    )
    .expect("box is nonempty");
    DifferenceProgram::new(set, -3.0)
        .with_g0(|x| x[0], |_| DVector::from_vec(vec![1.0]))
        .with_g1(
            |x| x[0] * x[0] - 1.0,
            |x| DVector::from_vec(vec![2.0 * x[0]]),
        )
}

/// Standard start for [`dc_constrained`].
pub fn dc_constrained_start() -> DVector<f64> {
    DVector::zeros(1)
}

/// Toy bilevel design problem: `min (z−1)²` over `y ∈ [−1,1]` subject to
/// `z` solving the VI with `F(y,z) = z − y` on `Γ = [0, 2]`. The exact
/// lower-level map is `z = clamp(y, 0, 2)`, so the true optimum is (1, 1)
/// with objective 0.
pub fn toy_bilevel(
    gamma: f64,
    epsilon: f64,
) -> Result<(Arc<ViProblem>, DifferenceProgram, DVector<f64>)> {
    let y_set = Polyhedron::from_box(
        DVector::from_vec(vec![-1.0]),
        DVector::from_vec(vec![1.0]),
    )?;
    let gamma_set = ParametricPolyhedron::constant(
        DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]),
        DVector::from_vec(vec![0.0, 2.0]),
        DMatrix::zeros(0, 1),
        DVector::zeros(0),
        1,
    );
    let vi = Arc::new(
        ViProblem::new(y_set, gamma_set, 0.0)?
            .with_objective(
                |_, z| (z[0] - 1.0) * (z[0] - 1.0),
                |_, z| DVector::from_vec(vec![0.0, 2.0 * (z[0] - 1.0)]),
            )
            .with_mapping(
                |y, z| DVector::from_vec(vec![z[0] - y[0]]),
                |_, _| DMatrix::from_row_slice(1, 1, &[-1.0]),
                |_, _| DMatrix::identity(1, 1),
            ),
    );
    let prog = to_difference_program(Arc::clone(&vi), gamma, epsilon)?;
    Ok((vi, prog, DVector::zeros(2)))
}
