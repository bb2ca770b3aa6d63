//! Dense linear solves with a conditioning guard.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition estimates above this are treated as a singular system.
pub const MAX_CONDITION: f64 = 1e12;

/// Solves `a x = b` by partial-pivot LU.
///
/// The 1-norm condition number is computed from the explicit inverse; the
/// systems assembled here have at most a few hundred unknowns.
pub(crate) fn solve_guarded(a: DMatrix<f64>, b: &DVector<f64>, system: &'static str) -> Result<DVector<f64>> {
    let norm_a = one_norm(&a);
    let lu = a.lu();
    let inverse = lu.try_inverse().ok_or(Error::SingularSystem {
        system,
        condition: f64::INFINITY,
    })?;
    let condition = norm_a * one_norm(&inverse);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::SingularSystem { system, condition });
    }
    lu.solve(b).ok_or(Error::SingularSystem { system, condition })
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
