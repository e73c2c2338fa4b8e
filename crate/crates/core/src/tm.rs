//! Implicit trapezoidal integration of explicit DAEs and the simulation loop
//! that couples it to the dual step sources.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dae::{self, DisturbanceEvent, ExplicitDaeSystem, SystemState};
use crate::dual::{compute_phi, propose_step, DualHistory, StepControlConfig, StepMode};
use crate::error::{Error, Result};
use crate::linalg::{inf_norm, solve_dense};
use crate::quantum::{step_sigma, PiGains, QuantumController, QuantumRecord, SigmaEstimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianRefresh {
    #[default]
    EveryIteration,
    FirstIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmConfig {
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub jacobian_refresh: JacobianRefresh,
    /// Step halvings attempted after a failed Newton solve.
    pub max_retries: usize,
}

impl Default for TmConfig {
    fn default() -> Self {
        TmConfig {
            newton_tol: 1e-8,
            max_newton_iters: 20,
            jacobian_refresh: JacobianRefresh::EveryIteration,
            max_retries: 5,
        }
    }
}

/// One trapezoidal step of length `dt` from `state`.
///
/// Solves `x⁺ - x - dt/2 (f(x, y) + f(x⁺, y⁺)) = 0`, `g(x⁺, y⁺) = 0` by Newton,
/// starting from a forward-Euler predictor for `x` and the previous `y`.
pub fn tm_step<S: ExplicitDaeSystem + ?Sized>(
    system: &S,
    state: &SystemState,
    dt: f64,
    config: &TmConfig,
) -> Result<SystemState> {
    let (n, m) = (system.n_states(), system.n_algebraic());
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("step {dt} must be > 0")));
    }
    let half = 0.5 * dt;
    let f0 = dae::f_values(system, &state.x, &state.y);
    let mut x: Vec<f64> = state.x.iter().zip(&f0).map(|(xi, fi)| xi + dt * fi).collect();
    let mut y = state.y.clone();
    let mut fz = vec![0.0; n];
    let mut gz = vec![0.0; m];
    let mut residual = vec![0.0; n + m];
    let mut jac: Option<DMatrix<f64>> = None;

    for iter in 0..=config.max_newton_iters {
        system.eval_f(&x, &y, &mut fz);
        system.eval_g(&x, &y, &mut gz);
        for i in 0..n {
            residual[i] = x[i] - state.x[i] - half * (f0[i] + fz[i]);
        }
        residual[n..].copy_from_slice(&gz);
        if residual.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFiniteValue("trapezoidal residual".into()));
        }
        let norm = inf_norm(&residual);
        if norm <= config.newton_tol {
            return Ok(SystemState::new(state.t + dt, x, y));
        }
        if iter == config.max_newton_iters {
            return Err(Error::NonConvergence {
                iterations: iter,
                residual: norm,
            });
        }
        if jac.is_none() || config.jacobian_refresh == JacobianRefresh::EveryIteration {
            let j = system.jacobians(&x, &y)?;
            let mut a = DMatrix::zeros(n + m, n + m);
            for r in 0..n {
                for c in 0..n {
                    a[(r, c)] = -half * j.fx[(r, c)];
                }
                a[(r, r)] += 1.0;
                for c in 0..m {
                    a[(r, n + c)] = -half * j.fy[(r, c)];
                }
            }
            for r in 0..m {
                for c in 0..n {
                    a[(n + r, c)] = j.gx[(r, c)];
                }
                for c in 0..m {
                    a[(n + r, n + c)] = j.gy[(r, c)];
                }
            }
            jac = Some(a);
        }
        let rhs = DVector::from_iterator(n + m, residual.iter().map(|r| -r));
        let delta = solve_dense(jac.clone().expect("jacobian assembled"), &rhs)?;
        for i in 0..n {
            x[i] += delta[i];
        }
        for i in 0..m {
            y[i] += delta[n + i];
        }
    }
    unreachable!("loop returns on the last iteration")
}

/// Parameters of the adaptive-quantum step source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveQuantum {
    pub gains: PiGains,
    pub quantum_init: f64,
    pub quantum_min: f64,
    pub quantum_max: f64,
    pub estimator: SigmaEstimator,
}

impl Default for AdaptiveQuantum {
    fn default() -> Self {
        AdaptiveQuantum {
            gains: PiGains::default(),
            quantum_init: 0.2,
            quantum_min: crate::quantum::DEFAULT_DQ_MIN,
            quantum_max: 4.0,
            estimator: SigmaEstimator::EmbeddedOrder,
        }
    }
}

/// Where the simulation loop gets its step sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSource {
    Fixed { dt: f64 },
    Qss1Sync { quantum: f64 },
    QssAb2 { quantum: f64 },
    QssAb2Adaptive(AdaptiveQuantum),
}

impl StepSource {
    pub fn is_adaptive(&self) -> bool {
        matches!(self, StepSource::QssAb2Adaptive(_))
    }

    pub fn label(&self) -> String {
        match self {
            StepSource::Fixed { dt } => format!("fixed dt={dt}"),
            StepSource::Qss1Sync { quantum } => format!("QSS1-Sync dq={quantum}"),
            StepSource::QssAb2 { quantum } => format!("QSS-AB2 dq={quantum}"),
            StepSource::QssAb2Adaptive(_) => "QSS-AB2-Ad".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSetup {
    pub source: StepSource,
    pub dt_min: f64,
    pub dt_max: f64,
    pub quantum_scale: Option<Vec<f64>>,
    pub tm: TmConfig,
}

impl SolverSetup {
    pub fn new(source: StepSource, dt_min: f64, dt_max: f64) -> Self {
        SolverSetup {
            source,
            dt_min,
            dt_max,
            quantum_scale: None,
            tm: TmConfig::default(),
        }
    }
}

/// Horizon and time-ordered disturbances of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub horizon: f64,
    pub events: Vec<DisturbanceEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    /// Length of the step that ended here (0 for the initial point).
    pub dt: f64,
    pub quantum: Option<f64>,
    pub sigma: Option<f64>,
    pub binding: Option<usize>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub m: usize,
    pub adaptive: bool,
    pub points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    /// Number of accepted steps.
    pub fn steps(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn state_series(&self, index: usize) -> Vec<f64> {
        self.points.iter().map(|p| p.x[index]).collect()
    }

    pub fn final_point(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory has an initial point")
    }

    /// Per-step `(k, t, dq, σ, dt)` rows of an adaptive run.
    pub fn quantum_records(&self) -> Result<Vec<QuantumRecord>> {
        if !self.adaptive {
            return Err(Error::NotAdaptive);
        }
        self.points
            .iter()
            .skip(1)
            .enumerate()
            .map(|(k, p)| {
                Ok(QuantumRecord {
                    k,
                    t: p.t,
                    quantum: p.quantum.ok_or(Error::NotAdaptive)?,
                    sigma: p.sigma,
                    dt: p.dt,
                })
            })
            .collect()
    }

    /// Writes `t, dt, dq, sigma, binding_index, x_0..x_{n-1}, y_0..y_{m-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "t".to_string(),
            "dt".into(),
            "dq".into(),
            "sigma".into(),
            "binding_index".into(),
        ];
        header.extend((0..self.n).map(|i| format!("x_{i}")));
        header.extend((0..self.m).map(|i| format!("y_{i}")));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        for p in &self.points {
            let mut row = vec![
                format!("{:e}", p.t),
                format!("{:e}", p.dt),
                opt(p.quantum),
                opt(p.sigma),
                p.binding.map(|b| b.to_string()).unwrap_or_default(),
            ];
            row.extend(p.x.iter().map(|v| format!("{v:e}")));
            row.extend(p.y.iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parses the layout written by [`Trajectory::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let n = header.iter().filter(|h| h.starts_with("x_")).count();
        let m = header.iter().filter(|h| h.starts_with("y_")).count();
        if header.len() != 5 + n + m || header.get(0) != Some("t") {
            return Err(Error::GridError(format!("unexpected trajectory header {header:?}")));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::GridError(format!("bad number {s:?}: {e}")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let quantum = opt(&rec[2])?;
            let binding = if rec[4].trim().is_empty() {
                None
            } else {
                Some(
                    rec[4]
                        .trim()
                        .parse::<usize>()
                        .map_err(|e| Error::GridError(format!("bad binding index: {e}")))?,
                )
            };
            let sigma = opt(&rec[3])?;
            points.push(TrajectoryPoint {
                t: num(&rec[0])?,
                dt: num(&rec[1])?,
                quantum,
                sigma,
                binding,
                x: (0..n).map(|i| num(&rec[5 + i])).collect::<Result<_>>()?,
                y: (0..m).map(|i| num(&rec[5 + n + i])).collect::<Result<_>>()?,
            });
        }
        if points.is_empty() {
            return Err(Error::GridError("trajectory has no rows".into()));
        }
        // Only adaptive runs record the quantum.
        let adaptive = points.iter().all(|p| p.quantum.is_some());
        Ok(Trajectory {
            n,
            m,
            adaptive,
            points,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Relative slack used to land exactly on event times and the horizon.
const LANDING_SLACK: f64 = 1e-9;

/// Runs `system` from the consistent `initial` state over `schedule`.
///
/// Per accepted step: evaluate `f`, update the dual history, adapt the
/// quantum (adaptive source only), propose `dt`, truncate it to the next
/// event or the horizon, and take a trapezoidal step. Events are applied on
/// landing, after which the dual history is reset. A failed step is retried
/// with half the step size up to `tm.max_retries` times.
pub fn simulate<S: ExplicitDaeSystem + ?Sized>(
    system: &mut S,
    initial: &SystemState,
    schedule: &Schedule,
    setup: &SolverSetup,
) -> Result<Trajectory> {
    let (n, m) = (system.n_states(), system.n_algebraic());
    let horizon = schedule.horizon;
    if !(horizon > initial.t) {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} must exceed the start time {}",
            initial.t
        )));
    }
    let mut events = schedule.events.clone();
    dae::sort_events(&mut events);
    dae::validate_schedule(&events, horizon)?;
    if let Some(ev) = events.iter().find(|e| e.time < initial.t) {
        return Err(Error::ScheduleError(format!(
            "event at t = {} precedes the start time {}",
            ev.time, initial.t
        )));
    }

    let mut step_cfg = StepControlConfig::new(StepMode::Qss1Sync, 1.0, setup.dt_min, setup.dt_max);
    step_cfg.quantum_scale = setup.quantum_scale.clone();
    let mut controller = None;
    match setup.source {
        StepSource::Fixed { dt } => {
            if !(dt > 0.0) {
                return Err(Error::InvalidConfig(format!("fixed step {dt} must be > 0")));
            }
        }
        StepSource::Qss1Sync { quantum } => step_cfg.quantum = quantum,
        StepSource::QssAb2 { quantum } => {
            step_cfg.mode = StepMode::QssAb2;
            step_cfg.quantum = quantum;
        }
        StepSource::QssAb2Adaptive(ad) => {
            step_cfg.mode = StepMode::QssAb2;
            let c = QuantumController::new(ad.gains, ad.quantum_init, ad.quantum_min, ad.quantum_max)?;
            step_cfg.quantum = c.quantum();
            controller = Some((c, ad.estimator));
        }
    }
    if !matches!(setup.source, StepSource::Fixed { .. }) {
        step_cfg.validate()?;
        if let Some(scale) = &step_cfg.quantum_scale {
            if scale.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "quantum scale has {} entries, system has {n} states",
                    scale.len()
                )));
            }
        }
    }

    let adaptive = controller.is_some();
    let mut state = initial.clone();
    let mut history = DualHistory::new(n);
    let mut next_event = 0;
    let mut points = vec![TrajectoryPoint {
        t: state.t,
        dt: 0.0,
        quantum: controller.map(|(c, _)| c.quantum()),
        sigma: None,
        binding: None,
        x: state.x.clone(),
        y: state.y.clone(),
    }];
    let mut f = vec![0.0; n];

    loop {
        while next_event < events.len() && events[next_event].time <= state.t {
            state = dae::apply_event(system, &events[next_event], &state)?;
            history = history.reset();
            if let Some((c, _)) = controller.as_mut() {
                *c = c.restart();
            }
            next_event += 1;
        }
        if state.t >= horizon {
            break;
        }

        let mut sigma = None;
        let mut binding = None;
        let mut clamped = false;
        let proposed = match setup.source {
            StepSource::Fixed { dt } => dt,
            _ => {
                system.eval_f(&state.x, &state.y, &mut f);
                history = history.advance(compute_phi(&f)?);
                if let Some((c, estimator)) = controller.as_mut() {
                    step_cfg.quantum = c.quantum();
                    let current = propose_step(&history, &step_cfg);
                    sigma = step_sigma(&history, current.binding, &step_cfg, *estimator);
                    if let Some(s) = sigma {
                        *c = c.pi_update(s);
                    }
                    step_cfg.quantum = c.quantum();
                }
                let p = propose_step(&history, &step_cfg);
                binding = p.binding;
                clamped = p.clamped;
                p.dt
            }
        };

        let stop = events
            .get(next_event)
            .map_or(horizon, |e| e.time.min(horizon));
        let slack = LANDING_SLACK * stop.abs().max(1.0);
        let mut dt = proposed;
        let mut lands = false;
        if state.t + dt >= stop - slack {
            dt = stop - state.t;
            lands = true;
        }

        let mut attempt = 0;
        let next = loop {
            match tm_step(system, &state, dt, &setup.tm) {
                Ok(s) => break s,
                Err(e) if e.is_step_failure() && attempt < setup.tm.max_retries => {
                    attempt += 1;
                    dt *= 0.5;
                    lands = false;
                }
                Err(e) => return Err(e),
            }
        };
        state = SystemState {
            t: if lands { stop } else { next.t },
            ..next
        };
        // AB2 assumes the previous step followed the dual rule unmodified.
        if clamped || attempt > 0 || (lands && dt < proposed) {
            history = history.reset();
        }
        points.push(TrajectoryPoint {
            t: state.t,
            dt,
            quantum: controller.map(|(c, _)| c.quantum()),
            sigma,
            binding,
            x: state.x.clone(),
            y: state.y.clone(),
        });
    }

    Ok(Trajectory {
        n,
        m,
        adaptive,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae::TestEquation;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trapezoidal_closed_form() {
        let sys = TestEquation { rate: -0.6 };
        let s = SystemState::new(0.0, vec![0.1], vec![]);
        let next = tm_step(&sys, &s, 0.1, &TmConfig::default()).unwrap();
        assert_abs_diff_eq!(next.x[0], 0.1 * (1.0 - 0.03) / (1.0 + 0.03), epsilon = 1e-12);
        assert_abs_diff_eq!(next.x[0], 0.0941748, epsilon = 1e-7);
        assert_abs_diff_eq!(next.t, 0.1);
    }

    #[test]
    fn tiny_step_is_identity() {
        let sys = TestEquation { rate: -0.6 };
        let s = SystemState::new(0.0, vec![0.1], vec![]);
        let next = tm_step(&sys, &s, 1e-12, &TmConfig::default()).unwrap();
        assert_abs_diff_eq!(next.x[0], 0.1, epsilon = 1e-8);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let sys = TestEquation { rate: -0.6 };
        let s = SystemState::new(0.0, vec![0.0], vec![]);
        for dt in [1e-3, 1.0, 100.0] {
            assert_eq!(tm_step(&sys, &s, dt, &TmConfig::default()).unwrap().x, vec![0.0]);
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let sys = TestEquation { rate: -0.6 };
        let s = SystemState::new(0.0, vec![0.1], vec![]);
        assert!(tm_step(&sys, &s, 0.0, &TmConfig::default()).is_err());
    }

    #[test]
    fn frozen_jacobian_still_converges() {
        let sys = TestEquation { rate: -3.0 };
        let s = SystemState::new(0.0, vec![1.0], vec![]);
        let cfg = TmConfig {
            jacobian_refresh: JacobianRefresh::FirstIteration,
            ..TmConfig::default()
        };
        let a = tm_step(&sys, &s, 0.2, &cfg).unwrap();
        let b = tm_step(&sys, &s, 0.2, &TmConfig::default()).unwrap();
        assert_abs_diff_eq!(a.x[0], b.x[0], epsilon = 1e-10);
    }

    #[test]
    fn fixed_run_matches_recurrence() {
        let mut sys = TestEquation { rate: -0.6 };
        let init = SystemState::new(0.0, vec![0.1], vec![]);
        let schedule = Schedule {
            horizon: 1.0,
            events: vec![],
        };
        let setup = SolverSetup::new(StepSource::Fixed { dt: 0.1 }, 1e-6, 1.0);
        let traj = simulate(&mut sys, &init, &schedule, &setup).unwrap();
        assert_eq!(traj.steps(), 10);
        let ratio = (1.0 - 0.03) / (1.0 + 0.03);
        let mut x = 0.1;
        for p in traj.points.iter().skip(1) {
            x *= ratio;
            assert!(((p.x[0] - x) / x).abs() <= 1e-12);
        }
        assert_eq!(traj.final_point().t, 1.0);
    }

    #[test]
    fn schedule_out_of_range() {
        let mut sys = TestEquation { rate: -0.6 };
        let init = SystemState::new(0.0, vec![0.1], vec![]);
        let schedule = Schedule {
            horizon: 1.0,
            events: vec![DisturbanceEvent::new(
                2.0,
                crate::dae::EventAction::ClearFault {
                    bus: 1,
                    trip_line: None,
                },
            )],
        };
        let setup = SolverSetup::new(StepSource::Fixed { dt: 0.1 }, 1e-6, 1.0);
        assert!(matches!(
            simulate(&mut sys, &init, &schedule, &setup),
            Err(Error::ScheduleError(_))
        ));
    }

    #[test]
    fn qss_sources_step_the_test_equation() {
        let init = SystemState::new(0.0, vec![0.1], vec![]);
        let schedule = Schedule {
            horizon: 5.0,
            events: vec![],
        };
        for source in [
            StepSource::Qss1Sync { quantum: 0.01 },
            StepSource::QssAb2 { quantum: 0.01 },
            StepSource::QssAb2Adaptive(AdaptiveQuantum::default()),
        ] {
            let mut sys = TestEquation { rate: -0.6 };
            let setup = SolverSetup::new(source, 1e-6, 5.0);
            let traj = simulate(&mut sys, &init, &schedule, &setup).unwrap();
            assert_eq!(traj.final_point().t, 5.0);
            assert_eq!(traj.adaptive, source.is_adaptive());
            let exact = 0.1 * (-0.6_f64 * 5.0).exp();
            assert!((traj.final_point().x[0] - exact).abs() < 0.01, "{source:?}");
        }
    }

    #[test]
    fn first_qss1_sync_step_matches_scalar_rule() {
        let mut sys = TestEquation { rate: -0.6 };
        let init = SystemState::new(0.0, vec![0.1], vec![]);
        let schedule = Schedule {
            horizon: 5.0,
            events: vec![],
        };
        let setup = SolverSetup::new(StepSource::Qss1Sync { quantum: 0.01 }, 1e-6, 5.0);
        let traj = simulate(&mut sys, &init, &schedule, &setup).unwrap();
        assert_eq!(traj.points[1].dt, 0.01 * (1.0 / (-0.6_f64 * 0.1).abs()));
        assert_eq!(traj.points[1].binding, Some(0));
    }

    #[test]
    fn csv_round_trip() {
        let mut sys = TestEquation { rate: -0.6 };
        let init = SystemState::new(0.0, vec![0.1], vec![]);
        let schedule = Schedule {
            horizon: 2.0,
            events: vec![],
        };
        let setup = SolverSetup::new(StepSource::QssAb2Adaptive(AdaptiveQuantum::default()), 1e-6, 2.0);
        let traj = simulate(&mut sys, &init, &schedule, &setup).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,dt,dq,sigma,binding_index,x_0\n"));
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn fixed_trajectory_is_not_adaptive() {
        let mut sys = TestEquation { rate: -0.6 };
        let init = SystemState::new(0.0, vec![0.1], vec![]);
        let schedule = Schedule {
            horizon: 1.0,
            events: vec![],
        };
        let setup = SolverSetup::new(StepSource::Qss1Sync { quantum: 0.01 }, 1e-6, 1.0);
        let traj = simulate(&mut sys, &init, &schedule, &setup).unwrap();
        assert!(matches!(traj.quantum_records(), Err(Error::NotAdaptive)));
    }
}
