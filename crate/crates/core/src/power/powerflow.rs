//! Newton–Raphson power flow in polar coordinates.

use nalgebra::{Complex, DMatrix, DVector};

use super::data::BusKind;
use crate::error::{Error, Result};
use crate::linalg::solve_dense;

pub const POWER_FLOW_TOL: f64 = 1e-10;
pub const POWER_FLOW_MAX_ITERS: usize = 30;

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub voltages: Vec<Complex<f64>>,
    /// Net complex power injected into the network at each bus.
    pub injections: Vec<Complex<f64>>,
    pub iterations: usize,
    pub mismatch: f64,
}

/// Net injections `S_i = V_i conj((Y V)_i)`.
pub fn injections(ybus: &DMatrix<Complex<f64>>, v: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let nb = v.len();
    (0..nb)
        .map(|i| {
            let current: Complex<f64> = (0..nb).map(|j| ybus[(i, j)] * v[j]).sum();
            v[i] * current.conj()
        })
        .collect()
}

/// Solves for bus voltages given scheduled net injections.
///
/// `v_mag`/`theta` hold set points for reference and PV buses and the
/// initial guess elsewhere. `p_spec` is used on every non-reference bus and
/// `q_spec` on PQ buses.
pub fn solve_power_flow(
    ybus: &DMatrix<Complex<f64>>,
    kinds: &[BusKind],
    v_mag: &[f64],
    theta: &[f64],
    p_spec: &[f64],
    q_spec: &[f64],
) -> Result<PowerFlowSolution> {
    let nb = kinds.len();
    let angle_buses: Vec<usize> = (0..nb).filter(|&i| !kinds[i].is_reference()).collect();
    let mag_buses: Vec<usize> = (0..nb).filter(|&i| kinds[i] == BusKind::Pq).collect();
    let (na, nv) = (angle_buses.len(), mag_buses.len());
    let mut vm = v_mag.to_vec();
    let mut va = theta.to_vec();

    let voltages = |vm: &[f64], va: &[f64]| -> Vec<Complex<f64>> {
        vm.iter().zip(va).map(|(m, a)| Complex::from_polar(*m, *a)).collect()
    };

    for iter in 0..=POWER_FLOW_MAX_ITERS {
        let v = voltages(&vm, &va);
        let s = injections(ybus, &v);
        let mut mismatch = DVector::zeros(na + nv);
        for (r, &i) in angle_buses.iter().enumerate() {
            mismatch[r] = p_spec[i] - s[i].re;
        }
        for (r, &i) in mag_buses.iter().enumerate() {
            mismatch[na + r] = q_spec[i] - s[i].im;
        }
        let worst = mismatch.amax();
        if !worst.is_finite() {
            return Err(Error::PowerFlowError("mismatch became non-finite".into()));
        }
        if worst <= POWER_FLOW_TOL {
            return Ok(PowerFlowSolution {
                voltages: v,
                injections: s,
                iterations: iter,
                mismatch: worst,
            });
        }
        if iter == POWER_FLOW_MAX_ITERS {
            return Err(Error::PowerFlowError(format!(
                "no convergence after {iter} iterations (mismatch {worst:.3e})"
            )));
        }

        // d(P, Q)/d(theta, |V|) for the unknown angles and magnitudes.
        let dp_dtheta = |i: usize, j: usize| {
            let (g, b) = (ybus[(i, j)].re, ybus[(i, j)].im);
            if i == j {
                -s[i].im - b * vm[i] * vm[i]
            } else {
                let t = va[i] - va[j];
                vm[i] * vm[j] * (g * t.sin() - b * t.cos())
            }
        };
        let dp_dv = |i: usize, j: usize| {
            let (g, b) = (ybus[(i, j)].re, ybus[(i, j)].im);
            if i == j {
                s[i].re / vm[i] + g * vm[i]
            } else {
                let t = va[i] - va[j];
                vm[i] * (g * t.cos() + b * t.sin())
            }
        };
        let dq_dtheta = |i: usize, j: usize| {
            let (g, b) = (ybus[(i, j)].re, ybus[(i, j)].im);
            if i == j {
                s[i].re - g * vm[i] * vm[i]
            } else {
                let t = va[i] - va[j];
                -vm[i] * vm[j] * (g * t.cos() + b * t.sin())
            }
        };
        let dq_dv = |i: usize, j: usize| {
            let (g, b) = (ybus[(i, j)].re, ybus[(i, j)].im);
            if i == j {
                s[i].im / vm[i] - b * vm[i]
            } else {
                let t = va[i] - va[j];
                vm[i] * (g * t.sin() - b * t.cos())
            }
        };

        let mut jac = DMatrix::zeros(na + nv, na + nv);
        for (r, &i) in angle_buses.iter().enumerate() {
            for (c, &j) in angle_buses.iter().enumerate() {
                jac[(r, c)] = dp_dtheta(i, j);
            }
            for (c, &j) in mag_buses.iter().enumerate() {
                jac[(r, na + c)] = dp_dv(i, j);
            }
        }
        for (r, &i) in mag_buses.iter().enumerate() {
            for (c, &j) in angle_buses.iter().enumerate() {
                jac[(na + r, c)] = dq_dtheta(i, j);
            }
            for (c, &j) in mag_buses.iter().enumerate() {
                jac[(na + r, na + c)] = dq_dv(i, j);
            }
        }
        let step = solve_dense(jac, &mismatch).map_err(|e| Error::PowerFlowError(e.to_string()))?;
        for (r, &i) in angle_buses.iter().enumerate() {
            va[i] += step[r];
        }
        for (r, &i) in mag_buses.iter().enumerate() {
            vm[i] += step[na + r];
            if !(vm[i] > 0.0) {
                return Err(Error::PowerFlowError(format!("voltage collapse at bus index {i}")));
            }
        }
    }
    unreachable!("loop returns on the last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lossless two-bus system: slack at 1∠0, PQ load P + jQ over reactance x.
    #[test]
    fn two_bus_lossless() {
        let x = 0.2;
        let y = Complex::new(0.0, -1.0 / x);
        let ybus = DMatrix::from_row_slice(2, 2, &[y, -y, -y, y]);
        let kinds = [BusKind::Slack, BusKind::Pq];
        let sol = solve_power_flow(&ybus, &kinds, &[1.0, 1.0], &[0.0, 0.0], &[0.0, -0.5], &[0.0, -0.2]).unwrap();
        let v2 = sol.voltages[1];
        // closed form: the slack delivers exactly the load over a lossless line
        let current = (sol.voltages[0] - v2) / Complex::new(0.0, x);
        let delivered = v2 * current.conj();
        assert!((delivered - Complex::new(0.5, 0.2)).norm() < 1e-9);
        assert!((sol.injections[0].re - 0.5).abs() < 1e-9);
        assert!(sol.iterations <= 6);
    }

    #[test]
    fn infeasible_transfer_fails() {
        let y = Complex::new(0.0, -1.0);
        let ybus = DMatrix::from_row_slice(2, 2, &[y, -y, -y, y]);
        let kinds = [BusKind::Slack, BusKind::Pq];
        let res = solve_power_flow(&ybus, &kinds, &[1.0, 1.0], &[0.0, 0.0], &[0.0, -5.0], &[0.0, 0.0]);
        assert!(matches!(res, Err(Error::PowerFlowError(_))));
    }
}
