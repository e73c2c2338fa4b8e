//! Model file schema.
//!
//! A model file is TOML with one array of tables per component:
//!
//! ```toml
//! name = "example"
//! base_mva = 100.0      # system power base (default 100)
//! frequency = 60.0      # nominal frequency in Hz (default 60)
//!
//! [[bus]]
//! id = 1
//! type = "slack"        # slack | pv | pq | infinite
//! v = 1.04              # set point (slack, pv, infinite) or initial guess (pq), pu
//! angle = 0.0           # degrees; used by slack and infinite buses
//!
//! [[line]]
//! id = 1                # optional, defaults to the 1-based position
//! from = 1
//! to = 4
//! r = 0.0               # series resistance, pu
//! x = 0.0576            # series reactance, pu
//! b = 0.0               # total line-charging susceptance, pu
//!
//! [[machine]]
//! bus = 1
//! h = 23.64             # inertia constant, s
//! d = 0.0               # damping, pu torque per pu speed
//! xd_prime = 0.0608     # transient reactance, pu
//! p_mw = 0.0            # scheduled output (ignored on the slack bus)
//!
//! [[load]]
//! bus = 5
//! p_mw = 125.0
//! q_mvar = 50.0
//! ```
//!
//! Exactly one bus is the angle reference (`slack` or `infinite`). An
//! infinite bus keeps its voltage fixed during simulation and carries no
//! algebraic variables. Machines sit on `slack` or `pv` buses, at most one per
//! bus. Loads are converted to constant impedances at the power-flow voltage.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
    Infinite,
}

impl BusKind {
    pub fn is_reference(self) -> bool {
        matches!(self, BusKind::Slack | BusKind::Infinite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusData {
    pub id: u32,
    #[serde(rename = "type")]
    pub kind: BusKind,
    #[serde(default = "one")]
    pub v: f64,
    #[serde(default)]
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineData {
    #[serde(default)]
    pub id: Option<u32>,
    pub from: u32,
    pub to: u32,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineData {
    pub bus: u32,
    pub h: f64,
    #[serde(default)]
    pub d: f64,
    pub xd_prime: f64,
    #[serde(default)]
    pub p_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadData {
    pub bus: u32,
    pub p_mw: f64,
    #[serde(default)]
    pub q_mvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelData {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    #[serde(rename = "bus", default)]
    pub buses: Vec<BusData>,
    #[serde(rename = "line", default)]
    pub lines: Vec<LineData>,
    #[serde(rename = "machine", default)]
    pub machines: Vec<MachineData>,
    #[serde(rename = "load", default)]
    pub loads: Vec<LoadData>,
}

fn one() -> f64 {
    1.0
}

fn default_base_mva() -> f64 {
    100.0
}

fn default_frequency() -> f64 {
    60.0
}

fn data_err(msg: impl Into<String>) -> Error {
    Error::DataError(msg.into())
}

impl ModelData {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut data: ModelData = toml::from_str(text).map_err(|e| data_err(e.to_string()))?;
        data.assign_line_ids();
        data.validate()?;
        Ok(data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::DataError(msg) => Error::DataError(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn assign_line_ids(&mut self) {
        for (i, line) in self.lines.iter_mut().enumerate() {
            line.id.get_or_insert(i as u32 + 1);
        }
    }

    pub fn line_id(&self, index: usize) -> u32 {
        self.lines[index].id.unwrap_or(index as u32 + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_mva > 0.0) {
            return Err(data_err("base_mva must be positive"));
        }
        if !(self.frequency > 0.0) {
            return Err(data_err("frequency must be positive"));
        }
        if self.buses.is_empty() {
            return Err(data_err("model has no buses"));
        }
        if self.machines.is_empty() {
            return Err(data_err("model has no machines"));
        }

        let mut kinds = HashMap::new();
        for bus in &self.buses {
            if kinds.insert(bus.id, bus.kind).is_some() {
                return Err(data_err(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.v > 0.0 && bus.v.is_finite()) || !bus.angle.is_finite() {
                return Err(data_err(format!("bus {} has an invalid voltage", bus.id)));
            }
        }
        let references = self.buses.iter().filter(|b| b.kind.is_reference()).count();
        if references != 1 {
            return Err(data_err(format!(
                "expected exactly one slack or infinite bus, found {references}"
            )));
        }

        let mut line_ids = HashSet::new();
        for (i, line) in self.lines.iter().enumerate() {
            let id = self.line_id(i);
            if !line_ids.insert(id) {
                return Err(data_err(format!("duplicate line id {id}")));
            }
            for end in [line.from, line.to] {
                if !kinds.contains_key(&end) {
                    return Err(data_err(format!("line {id} references unknown bus {end}")));
                }
            }
            if line.from == line.to {
                return Err(data_err(format!("line {id} connects bus {} to itself", line.from)));
            }
            if ![line.r, line.x, line.b].iter().all(|v| v.is_finite()) || (line.r == 0.0 && line.x == 0.0) {
                return Err(data_err(format!("line {id} has an invalid impedance")));
            }
        }

        let mut machine_buses = HashSet::new();
        for m in &self.machines {
            let kind = *kinds
                .get(&m.bus)
                .ok_or_else(|| data_err(format!("machine references unknown bus {}", m.bus)))?;
            if !matches!(kind, BusKind::Slack | BusKind::Pv) {
                return Err(data_err(format!(
                    "machine at bus {} must sit on a slack or pv bus",
                    m.bus
                )));
            }
            if !machine_buses.insert(m.bus) {
                return Err(data_err(format!("more than one machine at bus {}", m.bus)));
            }
            if !(m.h > 0.0 && m.h.is_finite()) {
                return Err(data_err(format!("machine at bus {} has non-positive H", m.bus)));
            }
            if !(m.xd_prime > 0.0 && m.xd_prime.is_finite()) {
                return Err(data_err(format!("machine at bus {} has non-positive X'd", m.bus)));
            }
            if !(m.d >= 0.0 && m.d.is_finite()) || !m.p_mw.is_finite() {
                return Err(data_err(format!("machine at bus {} has invalid D or P", m.bus)));
            }
        }
        for bus in &self.buses {
            if bus.kind == BusKind::Pv && !machine_buses.contains(&bus.id) {
                return Err(data_err(format!("pv bus {} has no machine", bus.id)));
            }
        }

        for load in &self.loads {
            match kinds.get(&load.bus) {
                None => return Err(data_err(format!("load references unknown bus {}", load.bus))),
                Some(BusKind::Infinite) => {
                    return Err(data_err(format!("load on infinite bus {}", load.bus)))
                }
                _ => {}
            }
            if !(load.p_mw.is_finite() && load.q_mvar.is_finite()) {
                return Err(data_err(format!("load at bus {} is not finite", load.bus)));
            }
        }
        Ok(())
    }
}
