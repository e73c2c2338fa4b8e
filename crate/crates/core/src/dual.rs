//! Global time-step proposals from the dual system `t_i' = φ_i = 1/|f_i|`.
//!
//! Each differential equation proposes a local step from its own dual
//! derivative; the system advances with the smallest one.

use crate::error::{Error, Result};

/// First-order (forward Euler) dual step.
#[inline]
pub fn qss1_candidate(quantum: f64, phi: f64) -> f64 {
    quantum * phi
}

/// Second-order Adams–Bashforth dual step.
#[inline]
pub fn ab2_candidate(quantum: f64, phi_curr: f64, phi_prev: f64) -> f64 {
    quantum * (1.5 * phi_curr - 0.5 * phi_prev)
}

/// `φ_i = 1/|f_i|`, with `f_i = 0` mapped to `+∞`.
pub fn compute_phi(f_values: &[f64]) -> Result<Vec<f64>> {
    f_values
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if !f.is_finite() {
                return Err(Error::NonFiniteValue(format!("f[{i}] = {f}")));
            }
            Ok(if *f == 0.0 { f64::INFINITY } else { 1.0 / f.abs() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    Qss1Sync,
    QssAb2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepControlConfig {
    pub mode: StepMode,
    pub quantum: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Optional per-equation multiplier on the shared quantum.
    pub quantum_scale: Option<Vec<f64>>,
}

impl StepControlConfig {
    pub fn new(mode: StepMode, quantum: f64, dt_min: f64, dt_max: f64) -> Self {
        StepControlConfig {
            mode,
            quantum,
            dt_min,
            dt_max,
            quantum_scale: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.quantum > 0.0 && self.quantum.is_finite()) {
            return Err(Error::InvalidConfig(format!("quantum {} must be > 0", self.quantum)));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(Error::InvalidConfig(format!(
                "step bounds [{}, {}] must satisfy 0 < dt_min <= dt_max",
                self.dt_min, self.dt_max
            )));
        }
        if let Some(scale) = &self.quantum_scale {
            if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::InvalidConfig("quantum scale entries must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, dt: f64) -> f64 {
        dt.clamp(self.dt_min, self.dt_max)
    }

    /// Quantum multiplier of equation `i` (1 without a scale vector).
    pub fn scale(&self, i: usize) -> f64 {
        self.quantum_scale.as_ref().map_or(1.0, |s| s[i])
    }

    /// Unclamped first- and second-order candidates for equation `i`.
    ///
    /// The second-order value falls back to the first-order one when the
    /// history is invalid or the extrapolation is not positive.
    pub fn candidates(&self, history: &DualHistory, i: usize) -> (f64, f64) {
        let dq = self.quantum * self.scale(i);
        let phi = history.phi_curr[i];
        let first = qss1_candidate(dq, phi);
        let second = match (&history.phi_prev, history.valid[i]) {
            (Some(prev), true) => {
                let c = ab2_candidate(dq, phi, prev[i]);
                if c > 0.0 {
                    c
                } else {
                    first
                }
            }
            _ => first,
        };
        (first, second)
    }
}

/// φ at the last two accepted steps.
///
/// After [`DualHistory::reset`] the retained `phi_curr` is kept for
/// inspection but is not promoted to `phi_prev` by the next advance, so the
/// first step after a reset always uses the first-order fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct DualHistory {
    phi_curr: Vec<f64>,
    phi_prev: Option<Vec<f64>>,
    valid: Vec<bool>,
    stale: bool,
}

impl DualHistory {
    /// Empty history for `n` equations (all φ infinite, nothing valid).
    pub fn new(n: usize) -> Self {
        DualHistory {
            phi_curr: vec![f64::INFINITY; n],
            phi_prev: None,
            valid: vec![false; n],
            stale: true,
        }
    }

    pub fn len(&self) -> usize {
        self.phi_curr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_curr.is_empty()
    }

    pub fn phi_curr(&self) -> &[f64] {
        &self.phi_curr
    }

    pub fn phi_prev(&self) -> Option<&[f64]> {
        self.phi_prev.as_deref()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    /// Shifts in φ from a newly accepted step.
    pub fn advance(self, new_phi: Vec<f64>) -> Self {
        debug_assert_eq!(new_phi.len(), self.phi_curr.len());
        if self.stale {
            let n = new_phi.len();
            return DualHistory {
                phi_curr: new_phi,
                phi_prev: None,
                valid: vec![false; n],
                stale: false,
            };
        }
        let prev = self.phi_curr;
        let valid = prev
            .iter()
            .zip(&new_phi)
            .map(|(p, c)| p.is_finite() && c.is_finite())
            .collect();
        DualHistory {
            phi_curr: new_phi,
            phi_prev: Some(prev),
            valid,
            stale: false,
        }
    }

    /// Forgets the previous step; the current φ is kept.
    pub fn reset(self) -> Self {
        let n = self.phi_curr.len();
        DualHistory {
            phi_curr: self.phi_curr,
            phi_prev: None,
            valid: vec![false; n],
            stale: true,
        }
    }
}

/// Free-function forms of the history updates.
pub fn advance_history(history: DualHistory, new_phi: Vec<f64>) -> DualHistory {
    history.advance(new_phi)
}

pub fn reset_history(history: DualHistory) -> DualHistory {
    history.reset()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepProposal {
    pub dt: f64,
    /// Equation attaining the minimum; `None` when every candidate is infinite.
    pub binding: Option<usize>,
    /// The minimum candidate fell outside `[dt_min, dt_max]`.
    pub clamped: bool,
}

/// Global step `clamp(min_i dt_i, dt_min, dt_max)`; ties bind the lowest index.
pub fn propose_step(history: &DualHistory, config: &StepControlConfig) -> StepProposal {
    let mut best = f64::INFINITY;
    let mut binding = None;
    for i in 0..history.len() {
        let (first, second) = config.candidates(history, i);
        let c = match config.mode {
            StepMode::Qss1Sync => first,
            StepMode::QssAb2 => second,
        };
        if c < best {
            best = c;
            binding = Some(i);
        }
    }
    match binding {
        Some(_) => {
            let dt = config.clamp(best);
            StepProposal {
                dt,
                binding,
                clamped: dt != best,
            }
        }
        None => StepProposal {
            dt: config.dt_max,
            binding: None,
            clamped: true,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(mode: StepMode) -> StepControlConfig {
        StepControlConfig::new(mode, 0.01, 1e-6, 20.0)
    }

    #[test]
    fn phi_values() {
        assert_abs_diff_eq!(compute_phi(&[-0.06]).unwrap()[0], 16.6667, epsilon = 1e-4);
        assert_eq!(compute_phi(&[0.0, 2.0]).unwrap(), vec![f64::INFINITY, 0.5]);
        assert_eq!(compute_phi(&[-1.0]).unwrap(), vec![1.0]);
        assert!(matches!(compute_phi(&[f64::NAN]), Err(Error::NonFiniteValue(_))));
        assert!(matches!(compute_phi(&[f64::INFINITY]), Err(Error::NonFiniteValue(_))));
    }

    #[test]
    fn qss1_sync_min() {
        let h = DualHistory::new(2).advance(vec![1.0 / 0.06, 50.0]);
        let p = propose_step(&h, &cfg(StepMode::Qss1Sync));
        assert_abs_diff_eq!(p.dt, 0.166667, epsilon = 1e-6);
        assert_eq!(p.binding, Some(0));
    }

    #[test]
    fn ab2_with_equal_history_is_qss1() {
        let phi = vec![3.0, 1.5, 7.0];
        let h = DualHistory::new(3).advance(phi.clone()).advance(phi);
        assert_eq!(
            propose_step(&h, &cfg(StepMode::QssAb2)),
            propose_step(&h, &cfg(StepMode::Qss1Sync))
        );
    }

    #[test]
    fn equilibrium_proposes_max() {
        let h = DualHistory::new(3).advance(compute_phi(&[0.0, 0.0, 0.0]).unwrap());
        let p = propose_step(&h, &cfg(StepMode::Qss1Sync));
        assert_eq!(p.dt, 20.0);
        assert_eq!(p.binding, None);
    }

    #[test]
    fn ab2_test_equation_step() {
        let h = DualHistory::new(1).advance(vec![1.0 / 0.06]).advance(vec![1.0 / 0.054]);
        let p = propose_step(&h, &cfg(StepMode::QssAb2));
        assert_abs_diff_eq!(p.dt, 0.194444, epsilon = 1e-6);
    }

    #[test]
    fn advance_validity() {
        let h = DualHistory::new(2).advance(vec![1.0, 2.0]);
        assert!(!h.is_valid(0) && !h.is_valid(1));
        assert!(h.phi_prev().is_none());
        let h = h.advance(vec![1.5, f64::INFINITY]);
        assert!(h.is_valid(0));
        assert!(!h.is_valid(1));
        let h = h.advance(vec![1.5, 2.0]);
        assert!(!h.is_valid(1));
        let h = h.advance(vec![1.5, 2.0]);
        assert!(h.is_valid(0) && h.is_valid(1));
    }

    #[test]
    fn reset_falls_back_and_is_idempotent() {
        let h = DualHistory::new(2).advance(vec![1.0, 4.0]).advance(vec![2.0, 1.0]);
        let r = reset_history(h.clone());
        assert!(!r.is_valid(0) && !r.is_valid(1));
        assert_eq!(r.phi_curr(), h.phi_curr());
        assert_eq!(r.clone().reset(), r);
        assert!(r.phi_prev().is_none());
        // the retained φ is not used as history by the next advance
        let a = r.clone().advance(vec![3.0, 3.0]);
        assert!(!a.is_valid(0) && a.phi_prev().is_none());
        assert_eq!(
            propose_step(&r, &cfg(StepMode::QssAb2)),
            propose_step(&r, &cfg(StepMode::Qss1Sync))
        );
    }

    #[test]
    fn negative_ab2_candidate_uses_first_order() {
        // φ drops by more than 3x: 1.5*1 - 0.5*10 < 0
        let h = DualHistory::new(1).advance(vec![10.0]).advance(vec![1.0]);
        let p = propose_step(&h, &cfg(StepMode::QssAb2));
        assert_abs_diff_eq!(p.dt, 0.01, epsilon = 1e-15);
    }

    #[test]
    fn clamps_to_bounds() {
        let mut c = cfg(StepMode::Qss1Sync);
        c.dt_max = 0.1;
        let h = DualHistory::new(1).advance(vec![100.0]);
        assert_eq!(propose_step(&h, &c).dt, 0.1);
        let h = DualHistory::new(1).advance(vec![1e-6]);
        assert_eq!(propose_step(&h, &c).dt, 1e-6);
    }

    #[test]
    fn quantum_scale_multiplies_candidates() {
        let mut c = cfg(StepMode::Qss1Sync);
        c.quantum_scale = Some(vec![10.0, 1.0]);
        let h = DualHistory::new(2).advance(vec![1.0, 5.0]);
        let p = propose_step(&h, &c);
        assert_eq!(p.binding, Some(1));
        assert_abs_diff_eq!(p.dt, 0.05, epsilon = 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(StepMode::QssAb2).validate().is_ok());
        let mut c = cfg(StepMode::QssAb2);
        c.dt_min = 30.0;
        assert!(c.validate().is_err());
        let mut c = cfg(StepMode::QssAb2);
        c.quantum = 0.0;
        assert!(c.validate().is_err());
    }
}
