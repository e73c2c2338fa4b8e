//! Explicit differential-algebraic systems `x' = f(x, y)`, `0 = g(x, y)`.
//!
//! Every solver in the crate talks to models through [`ExplicitDaeSystem`].
//! Discrete disturbances are parameter mutations ([`EventAction`]) followed by
//! an algebraic re-solve with the states held fixed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, solve_dense};

/// Default ∞-norm tolerance on `g` for consistent states.
pub const ALGEBRAIC_TOL: f64 = 1e-8;

/// Newton iteration cap for algebraic solves.
pub const ALGEBRAIC_MAX_ITERS: usize = 50;

/// Relative perturbation used by [`fd_jacobian`].
pub const FD_PERTURBATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SystemState {
    pub fn new(t: f64, x: Vec<f64>, y: Vec<f64>) -> Self {
        SystemState { t, x, y }
    }
}

/// Dense partial derivatives of `f` and `g`.
#[derive(Debug, Clone)]
pub struct DaeJacobians {
    pub fx: DMatrix<f64>,
    pub fy: DMatrix<f64>,
    pub gx: DMatrix<f64>,
    pub gy: DMatrix<f64>,
}

/// Parameter mutations a disturbance can apply.
#[derive(Debug, Clone, PartialEq)]
pub enum EventAction {
    /// Connect a shunt admittance `conductance + j susceptance` (per-unit) at a bus.
    ApplyFault {
        bus: u32,
        conductance: f64,
        susceptance: f64,
    },
    /// Remove any fault shunt at `bus`, then take `trip_line` out of service.
    ClearFault { bus: u32, trip_line: Option<u32> },
    /// Reduce the constant-impedance loads at `buses` by a total of
    /// `p_mw` / `q_mvar`, shared in proportion to the connected load.
    LoadChange {
        buses: Vec<u32>,
        p_mw: f64,
        q_mvar: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceEvent {
    pub time: f64,
    pub action: EventAction,
}

impl DisturbanceEvent {
    pub fn new(time: f64, action: EventAction) -> Self {
        DisturbanceEvent { time, action }
    }
}

/// Orders events by time. The sort is stable, so ties keep declaration order.
pub fn sort_events(events: &mut [DisturbanceEvent]) {
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
}

/// Checks that every event lies in `[0, horizon]`.
pub fn validate_schedule(events: &[DisturbanceEvent], horizon: f64) -> Result<()> {
    for ev in events {
        if !(ev.time >= 0.0 && ev.time <= horizon) {
            return Err(Error::ScheduleError(format!(
                "event at t = {} outside [0, {}]",
                ev.time, horizon
            )));
        }
    }
    Ok(())
}

/// A semi-explicit DAE with identity mass matrix on the states and a zero
/// block on the algebraic variables.
pub trait ExplicitDaeSystem {
    /// Number of differential states `n` (at least one).
    fn n_states(&self) -> usize;

    /// Number of algebraic variables `m`.
    fn n_algebraic(&self) -> usize;

    fn eval_f(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    fn eval_g(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// Partial derivatives at `(x, y)`. Falls back to central differences.
    fn jacobians(&self, x: &[f64], y: &[f64]) -> Result<DaeJacobians> {
        fd_dae_jacobians(self, x, y)
    }

    /// Mutates parameters for a discrete disturbance. Systems without
    /// event support reject every action.
    fn apply_action(&mut self, action: &EventAction) -> Result<()> {
        Err(Error::Unsupported(format!("{action:?}")))
    }
}

impl<S: ExplicitDaeSystem + ?Sized> ExplicitDaeSystem for Box<S> {
    fn n_states(&self) -> usize {
        (**self).n_states()
    }
    fn n_algebraic(&self) -> usize {
        (**self).n_algebraic()
    }
    fn eval_f(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (**self).eval_f(x, y, out)
    }
    fn eval_g(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (**self).eval_g(x, y, out)
    }
    fn jacobians(&self, x: &[f64], y: &[f64]) -> Result<DaeJacobians> {
        (**self).jacobians(x, y)
    }
    fn apply_action(&mut self, action: &EventAction) -> Result<()> {
        (**self).apply_action(action)
    }
}

/// Convenience evaluators returning owned vectors.
pub fn f_values<S: ExplicitDaeSystem + ?Sized>(system: &S, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; system.n_states()];
    system.eval_f(x, y, &mut out);
    out
}

pub fn g_values<S: ExplicitDaeSystem + ?Sized>(system: &S, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; system.n_algebraic()];
    system.eval_g(x, y, &mut out);
    out
}

/// Central-difference Jacobian of `eval: ℝᵏ → ℝʳ` at `point`.
///
/// Column `j` uses the step `max(|point[j]|, 1) * scale`.
pub fn fd_jacobian<F>(eval: F, point: &[f64], rows: usize, scale: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let cols = point.len();
    let mut jac = DMatrix::zeros(rows, cols);
    let mut work = point.to_vec();
    let mut plus = vec![0.0; rows];
    let mut minus = vec![0.0; rows];
    for j in 0..cols {
        let h = point[j].abs().max(1.0) * scale;
        work[j] = point[j] + h;
        eval(&work, &mut plus);
        work[j] = point[j] - h;
        eval(&work, &mut minus);
        work[j] = point[j];
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(format!(
                "evaluator returned a non-finite value while perturbing component {j}"
            )));
        }
        // Use the realised step so rounding in `point ± h` cancels.
        let span = (point[j] + h) - (point[j] - h);
        for i in 0..rows {
            jac[(i, j)] = (plus[i] - minus[i]) / span;
        }
    }
    Ok(jac)
}

/// Finite-difference fallback for all four DAE Jacobian blocks.
pub fn fd_dae_jacobians<S: ExplicitDaeSystem + ?Sized>(
    system: &S,
    x: &[f64],
    y: &[f64],
) -> Result<DaeJacobians> {
    let (n, m) = (system.n_states(), system.n_algebraic());
    let fx = fd_jacobian(|p, out| system.eval_f(p, y, out), x, n, FD_PERTURBATION)?;
    let fy = fd_jacobian(|p, out| system.eval_f(x, p, out), y, n, FD_PERTURBATION)?;
    let gx = fd_jacobian(|p, out| system.eval_g(p, y, out), x, m, FD_PERTURBATION)?;
    let gy = fd_jacobian(|p, out| system.eval_g(x, p, out), y, m, FD_PERTURBATION)?;
    Ok(DaeJacobians { fx, fy, gx, gy })
}

/// Solves `g(x, y) = 0` for `y` by Newton's method with `x` held fixed.
pub fn solve_algebraic<S: ExplicitDaeSystem + ?Sized>(
    system: &S,
    x: &[f64],
    y_guess: &[f64],
) -> Result<Vec<f64>> {
    let m = system.n_algebraic();
    if y_guess.len() != m {
        return Err(Error::InvalidConfig(format!(
            "algebraic guess has length {}, system expects {m}",
            y_guess.len()
        )));
    }
    let mut y = y_guess.to_vec();
    if m == 0 {
        return Ok(y);
    }
    let mut g = vec![0.0; m];
    let mut residual = f64::INFINITY;
    for _ in 0..=ALGEBRAIC_MAX_ITERS {
        system.eval_g(x, &y, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("algebraic residual".into()));
        }
        residual = inf_norm(&g);
        if residual <= ALGEBRAIC_TOL {
            return Ok(y);
        }
        let jac = system.jacobians(x, &y)?;
        let rhs = DVector::from_iterator(m, g.iter().map(|v| -v));
        let step = solve_dense(jac.gy, &rhs)?;
        for (yi, di) in y.iter_mut().zip(step.iter()) {
            *yi += di;
        }
    }
    Err(Error::NonConvergence {
        iterations: ALGEBRAIC_MAX_ITERS,
        residual,
    })
}

/// Builds a consistent state at `t = 0`: `x0` is kept and `y` solves `g = 0`.
pub fn consistent_init<S: ExplicitDaeSystem + ?Sized>(
    system: &S,
    x0: &[f64],
    y_guess: &[f64],
) -> Result<SystemState> {
    if x0.len() != system.n_states() {
        return Err(Error::InvalidConfig(format!(
            "state vector has length {}, system expects {}",
            x0.len(),
            system.n_states()
        )));
    }
    let y = solve_algebraic(system, x0, y_guess)?;
    Ok(SystemState::new(0.0, x0.to_vec(), y))
}

/// Applies a disturbance and re-solves the algebraic variables at fixed `x`.
pub fn apply_event<S: ExplicitDaeSystem + ?Sized>(
    system: &mut S,
    event: &DisturbanceEvent,
    state: &SystemState,
) -> Result<SystemState> {
    system.apply_action(&event.action)?;
    let y = solve_algebraic(system, &state.x, &state.y)?;
    Ok(SystemState::new(state.t, state.x.clone(), y))
}

/// The scalar linear test equation `x' = rate * x` (no algebraic part).
#[derive(Debug, Clone, Copy)]
pub struct TestEquation {
    pub rate: f64,
}

impl ExplicitDaeSystem for TestEquation {
    fn n_states(&self) -> usize {
        1
    }
    fn n_algebraic(&self) -> usize {
        0
    }
    fn eval_f(&self, x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = self.rate * x[0];
    }
    fn eval_g(&self, _x: &[f64], _y: &[f64], _out: &mut [f64]) {}
    fn jacobians(&self, _x: &[f64], _y: &[f64]) -> Result<DaeJacobians> {
        Ok(DaeJacobians {
            fx: DMatrix::from_element(1, 1, self.rate),
            fy: DMatrix::zeros(1, 0),
            gx: DMatrix::zeros(0, 1),
            gy: DMatrix::zeros(0, 0),
        })
    }
}
