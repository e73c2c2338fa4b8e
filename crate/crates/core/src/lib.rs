//! Quantized-state step control for implicit DAE solvers.
//!
//! Quantized-state (QSS) integration advances a state by a fixed quantum and
//! derives the time increment from it. Read the other way round, the step rule
//! `t_{k+1} = t_k + dq / |f(x_k)|` is forward Euler applied to a dual system
//! in which time is a function of the state, `t'(x) = 1 / |f|`. This crate
//! builds on that reading:
//!
//! * [`scalar`] implements classic QSS1 and the Adams–Bashforth (AB2) dual
//!   step for scalar ODEs, together with the analytic event-timing oracle of
//!   the linear test equation.
//! * [`dual`] turns per-equation dual steps into a global time step for
//!   a DAE system (QSS1-Sync and QSS-AB2).
//! * [`quantum`] adapts the quantum with a PI rule driven by an event-timing
//!   error estimate (QSS-AB2-Ad).
//! * [`tm`] is the implicit trapezoidal solver that consumes those steps.
//! * [`power`] provides classical multi-machine power-system models.
//! * [`bench`] regenerates runtime/accuracy comparisons.

pub mod bench;
pub mod dae;
pub mod dual;
pub mod error;
mod linalg;
pub mod power;
pub mod quantum;
pub mod scalar;
pub mod tm;

pub use dae::{DisturbanceEvent, EventAction, ExplicitDaeSystem, SystemState};
pub use error::{Error, Result};
