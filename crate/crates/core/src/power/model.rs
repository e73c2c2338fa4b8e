//! Classical multi-machine model in explicit DAE form.
//!
//! States are `(δ_i, ω_i)` per machine, interleaved:
//!
//! ```text
//! δ_i' = Ω_base (ω_i - 1)
//! ω_i' = (P_m,i - P_e,i - D_i (ω_i - 1)) / (2 H_i)
//! ```
//!
//! Algebraic variables are the rectangular voltages `(V_re, V_im)` of every
//! non-infinite bus. The algebraic equations are the bus current balances
//! `Σ_j Y_kj V_j - I_N,k(δ) = 0`, where `Y` includes line, load, fault and
//! machine (`1/(j X'd)`) admittances and `I_N = E'∠δ / (j X'd)` is the Norton
//! current of the machine behind its transient reactance. Given `δ` the
//! network equations are linear in `V`.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Complex, DMatrix};

use super::data::{BusKind, ModelData};
use super::powerflow::{self, PowerFlowSolution};
use crate::dae::{consistent_init, DaeJacobians, EventAction, ExplicitDaeSystem, SystemState};
use crate::error::{Error, Result};

type C64 = Complex<f64>;

#[derive(Debug, Clone)]
struct Machine {
    bus: usize,
    /// Algebraic slot of the terminal bus.
    slot: usize,
    h: f64,
    d: f64,
    xd: f64,
    e: f64,
    pm: f64,
}

#[derive(Debug, Clone)]
struct Load {
    bus: usize,
    p: f64,
    q: f64,
    v0_sq: f64,
    p_scale: f64,
    q_scale: f64,
}

impl Load {
    fn admittance(&self) -> C64 {
        C64::new(self.p_scale * self.p, -self.q_scale * self.q) / self.v0_sq
    }
}

#[derive(Debug, Clone)]
pub struct MultiMachineModel {
    data: ModelData,
    omega_base: f64,
    bus_pos: HashMap<u32, usize>,
    /// Algebraic slot of each bus (`None` for infinite buses).
    slot: Vec<Option<usize>>,
    /// Fixed voltage of each infinite bus, by bus position.
    fixed_v: Vec<Option<C64>>,
    machines: Vec<Machine>,
    loads: Vec<Load>,
    line_in_service: Vec<bool>,
    fault_shunt: Vec<C64>,
    /// Real form of the algebraic-block admittance, `2m × 2m`.
    gy: DMatrix<f64>,
    /// Real form of the currents drawn by fixed-voltage buses.
    source: Vec<f64>,
    power_flow: PowerFlowSolution,
}

fn series_admittance(r: f64, x: f64) -> C64 {
    C64::new(1.0, 0.0) / C64::new(r, x)
}

/// Line-only bus admittance matrix (series branches and charging).
fn line_ybus(data: &ModelData, bus_pos: &HashMap<u32, usize>, in_service: &[bool]) -> DMatrix<C64> {
    let nb = data.buses.len();
    let mut y = DMatrix::from_element(nb, nb, C64::new(0.0, 0.0));
    for (line, on) in data.lines.iter().zip(in_service) {
        if !on {
            continue;
        }
        let (a, b) = (bus_pos[&line.from], bus_pos[&line.to]);
        let ys = series_admittance(line.r, line.x);
        let ysh = C64::new(0.0, 0.5 * line.b);
        y[(a, a)] += ys + ysh;
        y[(b, b)] += ys + ysh;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
    }
    y
}

impl MultiMachineModel {
    pub fn from_file(path: &Path) -> Result<(Self, SystemState)> {
        Self::build(ModelData::load(path)?)
    }

    /// Solves the power flow, initializes machines and loads, and returns
    /// the model with its consistent equilibrium state.
    pub fn build(data: ModelData) -> Result<(Self, SystemState)> {
        data.validate()?;
        let nb = data.buses.len();
        let base = data.base_mva;
        let bus_pos: HashMap<u32, usize> = data.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let kinds: Vec<BusKind> = data.buses.iter().map(|b| b.kind).collect();

        let in_service = vec![true; data.lines.len()];
        let ybus = line_ybus(&data, &bus_pos, &in_service);
        let mut p_spec = vec![0.0; nb];
        let mut q_spec = vec![0.0; nb];
        for m in &data.machines {
            p_spec[bus_pos[&m.bus]] += m.p_mw / base;
        }
        for l in &data.loads {
            p_spec[bus_pos[&l.bus]] -= l.p_mw / base;
            q_spec[bus_pos[&l.bus]] -= l.q_mvar / base;
        }
        let v_mag: Vec<f64> = data.buses.iter().map(|b| b.v).collect();
        let theta: Vec<f64> = data.buses.iter().map(|b| b.angle.to_radians()).collect();
        let pf = powerflow::solve_power_flow(&ybus, &kinds, &v_mag, &theta, &p_spec, &q_spec)?;

        let mut slot = vec![None; nb];
        let mut fixed_v = vec![None; nb];
        let mut m_alg = 0;
        for (i, kind) in kinds.iter().enumerate() {
            if *kind == BusKind::Infinite {
                fixed_v[i] = Some(pf.voltages[i]);
            } else {
                slot[i] = Some(m_alg);
                m_alg += 1;
            }
        }

        let mut load_sum = vec![C64::new(0.0, 0.0); nb];
        let loads: Vec<Load> = data
            .loads
            .iter()
            .map(|l| {
                let bus = bus_pos[&l.bus];
                load_sum[bus] += C64::new(l.p_mw, l.q_mvar) / base;
                Load {
                    bus,
                    p: l.p_mw / base,
                    q: l.q_mvar / base,
                    v0_sq: pf.voltages[bus].norm_sqr(),
                    p_scale: 1.0,
                    q_scale: 1.0,
                }
            })
            .collect();

        let mut machines = Vec::with_capacity(data.machines.len());
        let mut x0 = Vec::with_capacity(2 * data.machines.len());
        for m in &data.machines {
            let bus = bus_pos[&m.bus];
            let v = pf.voltages[bus];
            let s_gen = pf.injections[bus] + load_sum[bus];
            let current = (s_gen / v).conj();
            let e = v + C64::new(0.0, m.xd_prime) * current;
            machines.push(Machine {
                bus,
                slot: slot[bus].expect("machines are not on infinite buses"),
                h: m.h,
                d: m.d,
                xd: m.xd_prime,
                e: e.norm(),
                pm: 0.0,
            });
            x0.push(e.arg());
            x0.push(1.0);
        }

        let mut model = MultiMachineModel {
            omega_base: 2.0 * std::f64::consts::PI * data.frequency,
            line_in_service: in_service,
            fault_shunt: vec![C64::new(0.0, 0.0); nb],
            gy: DMatrix::zeros(0, 0),
            source: Vec::new(),
            data,
            bus_pos,
            slot,
            fixed_v,
            machines,
            loads,
            power_flow: pf,
        };
        model.rebuild();

        let mut y0 = vec![0.0; 2 * m_alg];
        for (bus, s) in model.slot.iter().enumerate() {
            if let Some(k) = s {
                y0[2 * k] = model.power_flow.voltages[bus].re;
                y0[2 * k + 1] = model.power_flow.voltages[bus].im;
            }
        }
        let state = consistent_init(&model, &x0, &y0)?;
        // Mechanical power balances the electrical output at the solved point.
        for i in 0..model.machines.len() {
            let pe = model.electrical_power(i, &state.x, &state.y);
            model.machines[i].pm = pe;
        }
        Ok((model, state))
    }

    fn rebuild(&mut self) {
        let nb = self.data.buses.len();
        let mut y = line_ybus(&self.data, &self.bus_pos, &self.line_in_service);
        for load in &self.loads {
            y[(load.bus, load.bus)] += load.admittance();
        }
        for m in &self.machines {
            y[(m.bus, m.bus)] += C64::new(0.0, -1.0 / m.xd);
        }
        for (i, shunt) in self.fault_shunt.iter().enumerate() {
            y[(i, i)] += shunt;
        }
        let m_alg = self.slot.iter().flatten().count();
        let mut gy = DMatrix::zeros(2 * m_alg, 2 * m_alg);
        let mut source = vec![0.0; 2 * m_alg];
        for a in 0..nb {
            let Some(ka) = self.slot[a] else { continue };
            for b in 0..nb {
                let yab = y[(a, b)];
                match (self.slot[b], self.fixed_v[b]) {
                    (Some(kb), _) => {
                        gy[(2 * ka, 2 * kb)] = yab.re;
                        gy[(2 * ka, 2 * kb + 1)] = -yab.im;
                        gy[(2 * ka + 1, 2 * kb)] = yab.im;
                        gy[(2 * ka + 1, 2 * kb + 1)] = yab.re;
                    }
                    (None, Some(v)) => {
                        let i = yab * v;
                        source[2 * ka] += i.re;
                        source[2 * ka + 1] += i.im;
                    }
                    (None, None) => unreachable!("every bus is algebraic or fixed"),
                }
            }
        }
        self.gy = gy;
        self.source = source;
    }

    pub fn data(&self) -> &ModelData {
        &self.data
    }

    pub fn omega_base(&self) -> f64 {
        self.omega_base
    }

    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn delta_index(machine: usize) -> usize {
        2 * machine
    }

    pub fn omega_index(machine: usize) -> usize {
        2 * machine + 1
    }

    /// Position of the machine at `bus`.
    pub fn machine_at_bus(&self, bus: u32) -> Result<usize> {
        let pos = self.bus_index(bus)?;
        self.machines
            .iter()
            .position(|m| m.bus == pos)
            .ok_or_else(|| Error::DataError(format!("no machine at bus {bus}")))
    }

    pub fn line_endpoints(&self, line_id: u32) -> Option<(u32, u32)> {
        self.line_index(line_id)
            .map(|i| (self.data.lines[i].from, self.data.lines[i].to))
    }

    pub fn machine_bus(&self, machine: usize) -> u32 {
        self.data.buses[self.machines[machine].bus].id
    }

    pub fn e_prime(&self, machine: usize) -> f64 {
        self.machines[machine].e
    }

    pub fn mechanical_power(&self, machine: usize) -> f64 {
        self.machines[machine].pm
    }

    pub fn power_flow(&self) -> &PowerFlowSolution {
        &self.power_flow
    }

    pub fn line_in_service(&self, line_id: u32) -> Option<bool> {
        self.line_index(line_id).map(|i| self.line_in_service[i])
    }

    fn line_index(&self, line_id: u32) -> Option<usize> {
        (0..self.data.lines.len()).find(|&i| self.data.line_id(i) == line_id)
    }

    fn bus_index(&self, bus: u32) -> Result<usize> {
        self.bus_pos
            .get(&bus)
            .copied()
            .ok_or_else(|| Error::DataError(format!("unknown bus {bus}")))
    }

    pub fn bus_kind(&self, bus: u32) -> Result<BusKind> {
        Ok(self.data.buses[self.bus_index(bus)?].kind)
    }

    /// Complex voltage of `bus` given the algebraic vector `y`.
    pub fn bus_voltage(&self, bus: u32, y: &[f64]) -> Result<C64> {
        let pos = self.bus_index(bus)?;
        Ok(self.voltage_at(pos, y))
    }

    fn voltage_at(&self, pos: usize, y: &[f64]) -> C64 {
        match (self.slot[pos], self.fixed_v[pos]) {
            (Some(k), _) => C64::new(y[2 * k], y[2 * k + 1]),
            (None, Some(v)) => v,
            (None, None) => unreachable!("every bus is algebraic or fixed"),
        }
    }

    /// `P_e = (E'/X'd)(V_re sin δ - V_im cos δ)`.
    pub fn electrical_power(&self, machine: usize, x: &[f64], y: &[f64]) -> f64 {
        let m = &self.machines[machine];
        let delta = x[2 * machine];
        let k = m.slot;
        (m.e / m.xd) * (y[2 * k] * delta.sin() - y[2 * k + 1] * delta.cos())
    }

    /// Total power drawn by the constant-impedance loads at `bus`.
    pub fn load_power(&self, bus: u32, y: &[f64]) -> Result<C64> {
        let pos = self.bus_index(bus)?;
        let v_sq = self.voltage_at(pos, y).norm_sqr();
        Ok(self
            .loads
            .iter()
            .filter(|l| l.bus == pos)
            .map(|l| v_sq * l.admittance().conj())
            .sum())
    }

    /// Connected load at `bus` in MW / MVAr at nominal voltage scaling.
    pub fn connected_load(&self, bus: u32) -> Result<(f64, f64)> {
        let pos = self.bus_index(bus)?;
        let base = self.data.base_mva;
        Ok(self
            .loads
            .iter()
            .filter(|l| l.bus == pos)
            .fold((0.0, 0.0), |(p, q), l| {
                (p + l.p_scale * l.p * base, q + l.q_scale * l.q * base)
            }))
    }

    /// True if taking `line_id` out of service leaves some machine bus
    /// without a path to the reference bus.
    pub fn trip_islands_generator(&self, line_id: u32) -> Result<bool> {
        let skip = self
            .line_index(line_id)
            .ok_or_else(|| Error::DataError(format!("unknown line {line_id}")))?;
        let nb = self.data.buses.len();
        let reference = self
            .data
            .buses
            .iter()
            .position(|b| b.kind.is_reference())
            .expect("validated: one reference bus");
        let mut adj = vec![Vec::new(); nb];
        for (i, line) in self.data.lines.iter().enumerate() {
            if i == skip || !self.line_in_service[i] {
                continue;
            }
            let (a, b) = (self.bus_pos[&line.from], self.bus_pos[&line.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; nb];
        let mut stack = vec![reference];
        seen[reference] = true;
        while let Some(a) = stack.pop() {
            for &b in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        Ok(self.machines.iter().any(|m| !seen[m.bus]))
    }

    fn apply_load_change(&mut self, buses: &[u32], p_mw: f64, q_mvar: f64) -> Result<()> {
        let mut positions = Vec::with_capacity(buses.len());
        for b in buses {
            positions.push(self.bus_index(*b)?);
        }
        let base = self.data.base_mva;
        let selected = |l: &Load| positions.contains(&l.bus);
        let (p_tot, q_tot) = self
            .loads
            .iter()
            .filter(|l| selected(l))
            .fold((0.0, 0.0), |(p, q), l| {
                (p + l.p_scale * l.p * base, q + l.q_scale * l.q * base)
            });
        let fraction = |removed: f64, total: f64, what: &str| -> Result<f64> {
            if removed == 0.0 {
                return Ok(0.0);
            }
            let slack = 1e-9 * total.abs().max(1.0);
            if removed.signum() != total.signum() || removed.abs() > total.abs() + slack {
                return Err(Error::DataError(format!(
                    "cannot remove {removed} {what} from {total} {what} of connected load"
                )));
            }
            Ok((removed / total).min(1.0))
        };
        let fp = fraction(p_mw, p_tot, "MW")?;
        let fq = fraction(q_mvar, q_tot, "MVAr")?;
        for l in self.loads.iter_mut().filter(|l| positions.contains(&l.bus)) {
            l.p_scale *= 1.0 - fp;
            l.q_scale *= 1.0 - fq;
        }
        Ok(())
    }
}

impl ExplicitDaeSystem for MultiMachineModel {
    fn n_states(&self) -> usize {
        2 * self.machines.len()
    }

    fn n_algebraic(&self) -> usize {
        self.source.len()
    }

    fn eval_f(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for (i, m) in self.machines.iter().enumerate() {
            let slip = x[2 * i + 1] - 1.0;
            let pe = self.electrical_power(i, x, y);
            out[2 * i] = self.omega_base * slip;
            out[2 * i + 1] = (m.pm - pe - m.d * slip) / (2.0 * m.h);
        }
    }

    fn eval_g(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let size = self.source.len();
        for r in 0..size {
            let mut acc = self.source[r];
            for c in 0..size {
                acc += self.gy[(r, c)] * y[c];
            }
            out[r] = acc;
        }
        for (i, m) in self.machines.iter().enumerate() {
            let (s, c) = x[2 * i].sin_cos();
            let scale = m.e / m.xd;
            out[2 * m.slot] -= scale * s;
            out[2 * m.slot + 1] += scale * c;
        }
    }

    fn jacobians(&self, x: &[f64], y: &[f64]) -> Result<DaeJacobians> {
        let (n, m) = (self.n_states(), self.n_algebraic());
        let mut fx = DMatrix::zeros(n, n);
        let mut fy = DMatrix::zeros(n, m);
        let mut gx = DMatrix::zeros(m, n);
        for (i, mach) in self.machines.iter().enumerate() {
            let (s, c) = x[2 * i].sin_cos();
            let scale = mach.e / mach.xd;
            let k = mach.slot;
            let (vr, vi) = (y[2 * k], y[2 * k + 1]);
            let inv2h = 1.0 / (2.0 * mach.h);
            fx[(2 * i, 2 * i + 1)] = self.omega_base;
            fx[(2 * i + 1, 2 * i)] = -scale * (vr * c + vi * s) * inv2h;
            fx[(2 * i + 1, 2 * i + 1)] = -mach.d * inv2h;
            fy[(2 * i + 1, 2 * k)] = -scale * s * inv2h;
            fy[(2 * i + 1, 2 * k + 1)] = scale * c * inv2h;
            gx[(2 * k, 2 * i)] = -scale * c;
            gx[(2 * k + 1, 2 * i)] = -scale * s;
        }
        Ok(DaeJacobians {
            fx,
            fy,
            gx,
            gy: self.gy.clone(),
        })
    }

    fn apply_action(&mut self, action: &EventAction) -> Result<()> {
        match action {
            EventAction::ApplyFault {
                bus,
                conductance,
                susceptance,
            } => {
                let pos = self.bus_index(*bus)?;
                if self.slot[pos].is_none() {
                    return Err(Error::DataError(format!("cannot fault infinite bus {bus}")));
                }
                self.fault_shunt[pos] = C64::new(*conductance, *susceptance);
            }
            EventAction::ClearFault { bus, trip_line } => {
                let pos = self.bus_index(*bus)?;
                if let Some(line_id) = trip_line {
                    if self.trip_islands_generator(*line_id)? {
                        return Err(Error::TopologyError(format!(
                            "tripping line {line_id} islands a generator bus"
                        )));
                    }
                    let idx = self.line_index(*line_id).expect("checked above");
                    self.line_in_service[idx] = false;
                }
                self.fault_shunt[pos] = C64::new(0.0, 0.0);
            }
            EventAction::LoadChange { buses, p_mw, q_mvar } => {
                self.apply_load_change(buses, *p_mw, *q_mvar)?;
            }
        }
        self.rebuild();
        Ok(())
    }
}

/// Builds the model described by `data` with its equilibrium state.
pub fn build_model(data: ModelData) -> Result<(MultiMachineModel, SystemState)> {
    MultiMachineModel::build(data)
}
