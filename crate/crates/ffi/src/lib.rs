//! C ABI over `dualqss`: load a scenario, simulate it with a chosen step
//! source, inspect or save the trajectory.
//!
//! Every fallible call returns a [`DqStatus`]; the message of the last
//! failure on the calling thread is available from [`dq_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dualqss::power::scenario::SolverMode;
use dualqss::power::{avg_state_error, load_scenario, ScenarioSpec, SolverSpec};
use dualqss::tm::{simulate, Trajectory};
use dualqss::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Data = 5,
    PowerFlow = 6,
    Topology = 7,
    Schedule = 8,
    InvalidConfig = 9,
    NoConvergence = 10,
    Grid = 11,
    NotAdaptive = 12,
    Internal = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DqMode {
    Fixed = 0,
    Qss1 = 1,
    Ab2 = 2,
    Ab2Adaptive = 3,
}

/// Solver parameters. Fields that do not apply to `mode` are ignored; for
/// the adaptive mode a NaN field takes the library default.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DqSolverParams {
    pub mode: DqMode,
    pub dt: f64,
    pub dq: f64,
    pub tol: f64,
    pub alpha: f64,
    pub beta: f64,
    pub dq_init: f64,
    pub dq_max: f64,
}

/// Opaque scenario handle.
pub struct DqScenario(ScenarioSpec);

/// Opaque trajectory handle.
pub struct DqTrajectory(Trajectory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> DqStatus {
    match err {
        Error::Io { .. } | Error::Csv(_) => DqStatus::Io,
        Error::Parse { .. } => DqStatus::Parse,
        Error::DataError(_) => DqStatus::Data,
        Error::PowerFlowError(_) => DqStatus::PowerFlow,
        Error::TopologyError(_) => DqStatus::Topology,
        Error::ScheduleError(_) => DqStatus::Schedule,
        Error::InvalidConfig(_) | Error::Unsupported(_) => DqStatus::InvalidConfig,
        Error::NonConvergence { .. } | Error::SingularJacobian { .. } | Error::NonFiniteValue(_) => {
            DqStatus::NoConvergence
        }
        Error::GridError(_) => DqStatus::Grid,
        Error::NotAdaptive => DqStatus::NotAdaptive,
        Error::EmptySeries => DqStatus::InvalidArgument,
    }
}

enum Failure {
    Status(DqStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null() -> Failure {
    Failure::Status(DqStatus::NullPointer, "null pointer argument".into())
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DqStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            DqStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure::Status(DqStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

impl DqSolverParams {
    fn to_spec(self) -> SolverSpec {
        let mut spec = SolverSpec::new(match self.mode {
            DqMode::Fixed => SolverMode::Fixed,
            DqMode::Qss1 => SolverMode::Qss1,
            DqMode::Ab2 => SolverMode::Ab2,
            DqMode::Ab2Adaptive => SolverMode::Ab2Ad,
        });
        spec.dt = opt(self.dt);
        spec.dq = opt(self.dq);
        spec.tol = opt(self.tol);
        spec.alpha = opt(self.alpha);
        spec.beta = opt(self.beta);
        spec.dq_init = opt(self.dq_init);
        spec.dq_max = opt(self.dq_max);
        spec
    }
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parameters with every field NaN except `mode`.
#[no_mangle]
pub extern "C" fn dq_solver_params_default(mode: DqMode) -> DqSolverParams {
    DqSolverParams {
        mode,
        dt: f64::NAN,
        dq: f64::NAN,
        tol: f64::NAN,
        alpha: f64::NAN,
        beta: f64::NAN,
        dq_init: f64::NAN,
        dq_max: f64::NAN,
    }
}

/// Loads and validates a scenario TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dq_scenario_load(path: *const c_char, out: *mut *mut DqScenario) -> DqStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let spec = load_scenario(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(DqScenario(spec)));
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from [`dq_scenario_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dq_scenario_free(scenario: *mut DqScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dq_scenario_horizon(scenario: *const DqScenario) -> f64 {
    scenario.as_ref().map_or(f64::NAN, |s| s.0.horizon)
}

/// Simulates `scenario` from its initial equilibrium.
///
/// # Safety
/// `scenario` must be a live handle, `params` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dq_simulate(
    scenario: *const DqScenario,
    params: *const DqSolverParams,
    out: *mut *mut DqTrajectory,
) -> DqStatus {
    guard(|| {
        let (scenario, params) = match (scenario.as_ref(), params.as_ref()) {
            (Some(s), Some(p)) if !out.is_null() => (&s.0, *p),
            _ => return Err(null()),
        };
        let (mut model, state) = scenario.build_model()?;
        let setup = scenario.setup(&params.to_spec())?;
        let traj = simulate(&mut model, &state, &scenario.schedule(), &setup)?;
        *out = Box::into_raw(Box::new(DqTrajectory(traj)));
        Ok(())
    })
}

/// # Safety
/// `traj` must come from [`dq_simulate`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dq_trajectory_free(traj: *mut DqTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of stored points (accepted steps + 1), or 0 for NULL.
///
/// # Safety
/// `traj` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dq_trajectory_len(traj: *const DqTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.points.len())
}

/// Number of differential states, or 0 for NULL.
///
/// # Safety
/// `traj` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dq_trajectory_n_states(traj: *const DqTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.n)
}

/// Time, step length and (adaptive runs only, else NaN) quantum of point `k`.
/// Any output pointer may be NULL.
///
/// # Safety
/// `traj` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dq_trajectory_point(
    traj: *const DqTrajectory,
    k: usize,
    t: *mut f64,
    dt: *mut f64,
    quantum: *mut f64,
) -> DqStatus {
    guard(|| {
        let traj = traj.as_ref().ok_or_else(null)?;
        let p = traj.0.points.get(k).ok_or_else(|| {
            Failure::Status(DqStatus::InvalidArgument, format!("point {k} out of range"))
        })?;
        for (ptr, v) in [(t, p.t), (dt, p.dt), (quantum, p.quantum.unwrap_or(f64::NAN))] {
            if let Some(slot) = ptr.as_mut() {
                *slot = v;
            }
        }
        Ok(())
    })
}

/// Copies the `n` differential states of point `k` into `x`.
///
/// # Safety
/// `traj` must be a live handle and `x` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dq_trajectory_states(
    traj: *const DqTrajectory,
    k: usize,
    x: *mut f64,
    len: usize,
) -> DqStatus {
    guard(|| {
        let traj = traj.as_ref().ok_or_else(null)?;
        if x.is_null() {
            return Err(null());
        }
        let p = traj.0.points.get(k).ok_or_else(|| {
            Failure::Status(DqStatus::InvalidArgument, format!("point {k} out of range"))
        })?;
        if len < p.x.len() {
            return Err(Failure::Status(
                DqStatus::InvalidArgument,
                format!("buffer holds {len} values, need {}", p.x.len()),
            ));
        }
        std::slice::from_raw_parts_mut(x, p.x.len()).copy_from_slice(&p.x);
        Ok(())
    })
}

/// Writes the trajectory as CSV.
///
/// # Safety
/// `traj` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dq_trajectory_save(traj: *const DqTrajectory, path: *const c_char) -> DqStatus {
    guard(|| {
        let traj = traj.as_ref().ok_or_else(null)?;
        traj.0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Time-averaged absolute error of state `index` of `candidate` against
/// `reference`, evaluated on the reference grid.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dq_avg_state_error(
    candidate: *const DqTrajectory,
    reference: *const DqTrajectory,
    index: usize,
    out: *mut f64,
) -> DqStatus {
    guard(|| {
        let (c, r) = match (candidate.as_ref(), reference.as_ref()) {
            (Some(c), Some(r)) if !out.is_null() => (c, r),
            _ => return Err(null()),
        };
        if index >= r.0.n {
            return Err(Failure::Status(
                DqStatus::InvalidArgument,
                format!("state {index} out of range"),
            ));
        }
        *out = avg_state_error(&c.0, &r.0, index)?;
        Ok(())
    })
}
