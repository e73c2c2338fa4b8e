//! Error metrics against a reference trajectory.

use super::model::MultiMachineModel;
use crate::error::{Error, Result};
use crate::tm::Trajectory;

/// Horizons are considered equal within this absolute tolerance (s).
const HORIZON_TOL: f64 = 1e-9;

/// Piecewise-linear interpolation of `(ts, vs)` at `t`. `ts` must be
/// non-decreasing; `t` is clamped to its range.
pub fn interpolate(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let hi = ts.partition_point(|&s| s < t);
    if hi == 0 {
        return vs[0];
    }
    if hi == ts.len() {
        return vs[ts.len() - 1];
    }
    let (t0, t1) = (ts[hi - 1], ts[hi]);
    if t1 == t0 {
        return vs[hi];
    }
    let w = (t - t0) / (t1 - t0);
    vs[hi - 1] + w * (vs[hi] - vs[hi - 1])
}

/// Mean of `|x_c(t) - x_ref(t)|` over the reference time grid for state
/// `index`, with the candidate interpolated linearly.
pub fn avg_state_error(candidate: &Trajectory, reference: &Trajectory, index: usize) -> Result<f64> {
    if candidate.n != reference.n || index >= reference.n {
        return Err(Error::GridError(format!(
            "state {index} not comparable ({} vs {} states)",
            candidate.n, reference.n
        )));
    }
    let (c0, c1) = (candidate.points[0].t, candidate.final_point().t);
    let (r0, r1) = (reference.points[0].t, reference.final_point().t);
    if (c0 - r0).abs() > HORIZON_TOL || (c1 - r1).abs() > HORIZON_TOL {
        return Err(Error::GridError(format!(
            "horizons differ: [{c0}, {c1}] vs reference [{r0}, {r1}]"
        )));
    }
    let ts = candidate.times();
    let vs = candidate.state_series(index);
    let total: f64 = reference
        .points
        .iter()
        .map(|p| (interpolate(&ts, &vs, p.t) - p.x[index]).abs())
        .sum();
    Ok(total / reference.points.len() as f64)
}

/// Mean absolute rotor-speed error (pu) of `machine` (position in the model).
pub fn avg_error(candidate: &Trajectory, reference: &Trajectory, machine: usize) -> Result<f64> {
    avg_state_error(candidate, reference, MultiMachineModel::omega_index(machine))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tm::TrajectoryPoint;

    fn traj(ts: &[f64], f: impl Fn(f64) -> f64) -> Trajectory {
        Trajectory {
            n: 2,
            m: 0,
            adaptive: false,
            points: ts
                .iter()
                .map(|&t| TrajectoryPoint {
                    t,
                    dt: 0.0,
                    quantum: None,
                    sigma: None,
                    binding: None,
                    x: vec![0.0, f(t)],
                    y: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn self_comparison_is_zero() {
        let t = traj(&[0.0, 0.5, 1.0], |t| 1.0 + t);
        assert_eq!(avg_error(&t, &t, 0).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        let r = traj(&grid, |t| t.sin());
        let c = traj(&grid, |t| t.sin() + 1e-4);
        assert!((avg_error(&c, &r, 0).unwrap() - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn horizon_mismatch() {
        let r = traj(&[0.0, 1.0], |_| 1.0);
        let c = traj(&[0.0, 0.9], |_| 1.0);
        assert!(matches!(avg_error(&c, &r, 0), Err(Error::GridError(_))));
    }

    #[test]
    fn interpolation_handles_duplicate_times() {
        let ts = [0.0, 1.0, 1.0, 2.0];
        let vs = [0.0, 1.0, 5.0, 6.0];
        assert_eq!(interpolate(&ts, &vs, 0.5), 0.5);
        assert_eq!(interpolate(&ts, &vs, 1.5), 5.5);
        assert_eq!(interpolate(&ts, &vs, 3.0), 6.0);
    }
}
