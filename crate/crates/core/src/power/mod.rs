//! Classical multi-machine power-system models, disturbance scenarios and
//! the rotor-speed error metric.

pub mod data;
pub mod metrics;
pub mod model;
pub mod powerflow;
pub mod scenario;

pub use data::{BusData, BusKind, LineData, LoadData, MachineData, ModelData};
pub use metrics::{avg_error, avg_state_error};
pub use model::{build_model, MultiMachineModel};
pub use powerflow::{solve_power_flow, PowerFlowSolution};
pub use scenario::{
    load_scenario, make_fault_scenario, make_load_loss_scenario, ScenarioSpec, SolverSpec,
    FAULT_CONDUCTANCE,
};
