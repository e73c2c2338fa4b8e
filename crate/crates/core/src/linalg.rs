use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Matrices whose condition estimate exceeds this are treated as singular.
pub(crate) const CONDITION_LIMIT: f64 = 1e12;

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()))
}

/// Solves `a * z = b` by partial-pivot LU.
///
/// The condition estimate is the ratio of the largest to smallest pivot
/// magnitude, which is a cheap lower bound on the 2-norm condition number.
pub(crate) fn solve_dense(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let lu = a.lu();
    let u = lu.u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for p in u.diagonal().iter() {
        lo = lo.min(p.abs());
        hi = hi.max(p.abs());
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularJacobian { condition });
    }
    lu.solve(b)
        .ok_or(Error::SingularJacobian { condition: f64::INFINITY })
}
