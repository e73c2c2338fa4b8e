//! Disturbance scenarios and solver selection.
//!
//! Scenario file layout (TOML):
//!
//! ```toml
//! model = "wscc9.toml"   # relative to the scenario file
//! horizon = 20.0         # s (default 20)
//! machine = 2            # bus of the machine whose speed is compared
//! dt_min = 1e-6          # step bounds for QSS sources
//! dt_max = 20.0          # defaults: 1e-6 and the horizon
//! # quantum_scale = [...] optional per-state quantum multipliers
//!
//! [[disturbance]]
//! kind = "fault"         # three-phase fault cleared by a line trip
//! bus = 7
//! t_on = 1.0
//! duration = 0.08
//! trip_line = 3          # optional
//!
//! [[disturbance]]
//! kind = "load_loss"
//! buses = [5, 6, 8]
//! p_mw = 63.0
//! q_mvar = 23.0
//! t_on = 1.0
//!
//! [solver]               # optional default configuration for `run`
//! mode = "ab2-ad"        # fixed | qss1 | ab2 | ab2-ad
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::BusKind;
use super::model::MultiMachineModel;
use crate::dae::{DisturbanceEvent, EventAction, SystemState};
use crate::error::{Error, Result};
use crate::quantum::{PiGains, SigmaEstimator};
use crate::tm::{AdaptiveQuantum, Schedule, SolverSetup, StepSource};

/// Fault shunt conductance, pu.
pub const FAULT_CONDUCTANCE: f64 = 1e6;
pub const DEFAULT_HORIZON: f64 = 20.0;
pub const DEFAULT_DT_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    Fixed,
    Qss1,
    Ab2,
    Ab2Ad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    Embedded,
    HalfQuantum,
}

/// One solver configuration as written in scenario and matrix files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub mode: SolverMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dq_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dq_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dq_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorName>,
}

impl SolverSpec {
    pub fn new(mode: SolverMode) -> Self {
        SolverSpec {
            mode,
            dt: None,
            dq: None,
            tol: None,
            alpha: None,
            beta: None,
            dq_init: None,
            dq_min: None,
            dq_max: None,
            estimator: None,
        }
    }

    pub fn fixed(dt: f64) -> Self {
        SolverSpec {
            dt: Some(dt),
            ..Self::new(SolverMode::Fixed)
        }
    }

    pub fn qss1(dq: f64) -> Self {
        SolverSpec {
            dq: Some(dq),
            ..Self::new(SolverMode::Qss1)
        }
    }

    pub fn ab2(dq: f64) -> Self {
        SolverSpec {
            dq: Some(dq),
            ..Self::new(SolverMode::Ab2)
        }
    }

    pub fn adaptive() -> Self {
        Self::new(SolverMode::Ab2Ad)
    }

    pub fn to_source(&self) -> Result<StepSource> {
        let need = |v: Option<f64>, what: &str| {
            v.ok_or_else(|| Error::InvalidConfig(format!("mode {:?} needs `{what}`", self.mode)))
        };
        Ok(match self.mode {
            SolverMode::Fixed => StepSource::Fixed { dt: need(self.dt, "dt")? },
            SolverMode::Qss1 => StepSource::Qss1Sync { quantum: need(self.dq, "dq")? },
            SolverMode::Ab2 => StepSource::QssAb2 { quantum: need(self.dq, "dq")? },
            SolverMode::Ab2Ad => {
                let d = AdaptiveQuantum::default();
                StepSource::QssAb2Adaptive(AdaptiveQuantum {
                    gains: PiGains {
                        alpha: self.alpha.unwrap_or(d.gains.alpha),
                        beta: self.beta.unwrap_or(d.gains.beta),
                        tol: self.tol.unwrap_or(d.gains.tol),
                    },
                    quantum_init: self.dq_init.unwrap_or(d.quantum_init),
                    quantum_min: self.dq_min.unwrap_or(d.quantum_min),
                    quantum_max: self.dq_max.unwrap_or(d.quantum_max),
                    estimator: match self.estimator {
                        None | Some(EstimatorName::Embedded) => SigmaEstimator::EmbeddedOrder,
                        Some(EstimatorName::HalfQuantum) => SigmaEstimator::HalfQuantum,
                    },
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Model file, when the scenario was read from disk.
    pub model: Option<PathBuf>,
    pub horizon: f64,
    pub events: Vec<DisturbanceEvent>,
    /// Bus of the representative machine; the first machine if unset.
    pub machine: Option<u32>,
    pub dt_min: f64,
    /// Upper step bound; the horizon when unset.
    pub dt_max: Option<f64>,
    pub quantum_scale: Option<Vec<f64>>,
    pub solver: Option<SolverSpec>,
}

impl ScenarioSpec {
    pub fn new(events: Vec<DisturbanceEvent>) -> Self {
        ScenarioSpec {
            model: None,
            horizon: DEFAULT_HORIZON,
            events,
            machine: None,
            dt_min: DEFAULT_DT_MIN,
            dt_max: None,
            quantum_scale: None,
            solver: None,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            horizon: self.horizon,
            events: self.events.clone(),
        }
    }

    pub fn setup(&self, solver: &SolverSpec) -> Result<SolverSetup> {
        let mut setup = SolverSetup::new(solver.to_source()?, self.dt_min, self.dt_max());
        setup.quantum_scale = self.quantum_scale.clone();
        Ok(setup)
    }

    pub fn dt_max(&self) -> f64 {
        self.dt_max.unwrap_or(self.horizon)
    }

    /// Position of the representative machine in `model`.
    pub fn machine_index(&self, model: &MultiMachineModel) -> Result<usize> {
        match self.machine {
            Some(bus) => model.machine_at_bus(bus),
            None => Ok(0),
        }
    }

    /// Builds a fresh model instance from the referenced model file.
    pub fn build_model(&self) -> Result<(MultiMachineModel, SystemState)> {
        let path = self
            .model
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("scenario has no model file".into()))?;
        MultiMachineModel::from_file(path)
    }

    /// Merges the events of `other` into this scenario.
    pub fn with_events_from(mut self, other: ScenarioSpec) -> Self {
        self.events.extend(other.events);
        crate::dae::sort_events(&mut self.events);
        self
    }
}

/// Fault at `bus` from `t_on` for `duration` seconds, cleared by removing
/// the shunt and tripping `trip_line`.
pub fn make_fault_scenario(
    model: &MultiMachineModel,
    bus: u32,
    t_on: f64,
    duration: f64,
    trip_line: Option<u32>,
) -> Result<ScenarioSpec> {
    if model.bus_kind(bus)? == BusKind::Infinite {
        return Err(Error::DataError(format!("cannot fault infinite bus {bus}")));
    }
    if !(t_on >= 0.0 && duration >= 0.0 && (t_on + duration).is_finite()) {
        return Err(Error::ScheduleError(format!(
            "fault at t = {t_on} lasting {duration} s is not a valid window"
        )));
    }
    if let Some(line) = trip_line {
        let (from, to) = model
            .line_endpoints(line)
            .ok_or_else(|| Error::DataError(format!("unknown line {line}")))?;
        if from != bus && to != bus {
            return Err(Error::DataError(format!(
                "line {line} ({from}-{to}) is not incident to faulted bus {bus}"
            )));
        }
        if model.trip_islands_generator(line)? {
            return Err(Error::TopologyError(format!(
                "tripping line {line} islands a generator bus"
            )));
        }
    }
    Ok(ScenarioSpec::new(vec![
        DisturbanceEvent::new(
            t_on,
            EventAction::ApplyFault {
                bus,
                conductance: FAULT_CONDUCTANCE,
                susceptance: 0.0,
            },
        ),
        DisturbanceEvent::new(t_on + duration, EventAction::ClearFault { bus, trip_line }),
    ]))
}

/// Removes `p_mw` / `q_mvar` of load from `buses` at `t_on`.
pub fn make_load_loss_scenario(
    model: &MultiMachineModel,
    buses: &[u32],
    p_mw: f64,
    q_mvar: f64,
    t_on: f64,
) -> Result<ScenarioSpec> {
    if !(t_on >= 0.0 && t_on.is_finite()) {
        return Err(Error::ScheduleError(format!("load loss at invalid time {t_on}")));
    }
    if buses.is_empty() {
        return Err(Error::DataError("load loss names no buses".into()));
    }
    let (mut p, mut q) = (0.0, 0.0);
    for b in buses {
        let (bp, bq) = model.connected_load(*b)?;
        p += bp;
        q += bq;
    }
    let exceeds = |removed: f64, total: f64| {
        removed != 0.0 && (removed.signum() != total.signum() || removed.abs() > total.abs() * (1.0 + 1e-9))
    };
    if exceeds(p_mw, p) || exceeds(q_mvar, q) {
        return Err(Error::DataError(format!(
            "cannot remove {p_mw} MW / {q_mvar} MVAr from {p} MW / {q} MVAr of connected load"
        )));
    }
    Ok(ScenarioSpec::new(vec![DisturbanceEvent::new(
        t_on,
        EventAction::LoadChange {
            buses: buses.to_vec(),
            p_mw,
            q_mvar,
        },
    )]))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DisturbanceFile {
    Fault {
        bus: u32,
        t_on: f64,
        duration: f64,
        #[serde(default)]
        trip_line: Option<u32>,
    },
    LoadLoss {
        buses: Vec<u32>,
        p_mw: f64,
        #[serde(default)]
        q_mvar: f64,
        t_on: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    model: PathBuf,
    #[serde(default = "default_horizon")]
    horizon: f64,
    #[serde(default)]
    machine: Option<u32>,
    #[serde(default = "default_dt_min")]
    dt_min: f64,
    #[serde(default)]
    dt_max: Option<f64>,
    #[serde(default)]
    quantum_scale: Option<Vec<f64>>,
    #[serde(default, rename = "disturbance")]
    disturbances: Vec<DisturbanceFile>,
    #[serde(default)]
    solver: Option<SolverSpec>,
}

fn default_horizon() -> f64 {
    DEFAULT_HORIZON
}

fn default_dt_min() -> f64 {
    DEFAULT_DT_MIN
}

/// Reads a scenario file and checks its disturbances against the model.
pub fn load_scenario(path: &Path) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
    let model_path = match path.parent() {
        Some(dir) if file.model.is_relative() => dir.join(&file.model),
        _ => file.model.clone(),
    };
    let (model, _) = MultiMachineModel::from_file(&model_path)?;

    let mut spec = ScenarioSpec::new(Vec::new());
    for d in &file.disturbances {
        let part = match d {
            DisturbanceFile::Fault {
                bus,
                t_on,
                duration,
                trip_line,
            } => make_fault_scenario(&model, *bus, *t_on, *duration, *trip_line)?,
            DisturbanceFile::LoadLoss {
                buses,
                p_mw,
                q_mvar,
                t_on,
            } => make_load_loss_scenario(&model, buses, *p_mw, *q_mvar, *t_on)?,
        };
        spec = spec.with_events_from(part);
    }
    if let Some(bus) = file.machine {
        model.machine_at_bus(bus)?;
    }
    spec.model = Some(model_path);
    spec.horizon = file.horizon;
    spec.machine = file.machine;
    spec.dt_min = file.dt_min;
    spec.dt_max = file.dt_max;
    spec.quantum_scale = file.quantum_scale;
    spec.solver = file.solver;
    crate::dae::validate_schedule(&spec.events, spec.horizon)?;
    Ok(spec)
}
