//! PI adaptation of the quantum.
//!
//! `dq_{k+1} = (tol/|σ_k|)^α (|σ_{k-1}|/|σ_k|)^β dq_k`, clamped to
//! `[dq_min, dq_max]`, where `σ_k` estimates the event-timing error in seconds.

use std::io::Write;

use crate::dual::{DualHistory, StepControlConfig};
use crate::error::{Error, Result};

pub const DEFAULT_EPS_GUARD: f64 = 1e-12;
pub const DEFAULT_DQ_MIN: f64 = 1e-4;

/// Timing-error estimator feeding the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaEstimator {
    /// `|dt_AB2 - dt_QSS1|` of the binding equation.
    #[default]
    EmbeddedOrder,
    /// `|dt(dq) - dt(dq/2)|` of the binding equation. Since dual steps are
    /// linear in the quantum this is always half the step.
    HalfQuantum,
}

/// `σ = 0.5 dq |φ_curr - φ_prev|`, the gap between the second- and
/// first-order dual steps. Zero unless both φ are finite.
pub fn estimate_sigma(phi_curr: f64, phi_prev: f64, quantum: f64) -> f64 {
    if !(phi_curr.is_finite() && phi_prev.is_finite()) {
        return 0.0;
    }
    0.5 * quantum * (phi_curr - phi_prev).abs()
}

/// Error estimate for the step about to be proposed from `history`.
///
/// Embedded estimate: [`estimate_sigma`] on the binding equation's φ pair
/// and (scaled) quantum, independent of step bounds and of the positivity
/// fallback of the AB2 candidate. With no binding equation (every φ
/// infinite) the system is at rest and `σ = 0`. Returns `None` when the
/// binding equation has no usable history; the controller should then hold
/// the quantum.
pub fn step_sigma(
    history: &DualHistory,
    binding: Option<usize>,
    config: &StepControlConfig,
    estimator: SigmaEstimator,
) -> Option<f64> {
    let Some(i) = binding else {
        return Some(0.0);
    };
    match estimator {
        SigmaEstimator::EmbeddedOrder => {
            if !history.is_valid(i) {
                return None;
            }
            let prev = history.phi_prev()?[i];
            let dq = config.quantum * config.scale(i);
            Some(estimate_sigma(history.phi_curr()[i], prev, dq))
        }
        SigmaEstimator::HalfQuantum => {
            let half = StepControlConfig {
                quantum: 0.5 * config.quantum,
                ..config.clone()
            };
            let (_, full) = config.candidates(history, i);
            let (_, halved) = half.candidates(history, i);
            Some((full - halved).abs())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    pub alpha: f64,
    pub beta: f64,
    /// Timing-error tolerance in seconds.
    pub tol: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        PiGains {
            alpha: 0.5,
            beta: 0.0,
            tol: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumController {
    quantum: f64,
    pub quantum_init: f64,
    pub quantum_min: f64,
    pub quantum_max: f64,
    pub gains: PiGains,
    pub eps_guard: f64,
    sigma_curr: Option<f64>,
    sigma_prev: Option<f64>,
}

impl QuantumController {
    pub fn new(gains: PiGains, quantum_init: f64, quantum_min: f64, quantum_max: f64) -> Result<Self> {
        if !(quantum_min > 0.0 && quantum_min <= quantum_max) {
            return Err(Error::InvalidConfig(format!(
                "quantum bounds [{quantum_min}, {quantum_max}] must satisfy 0 < min <= max"
            )));
        }
        if !(quantum_init >= quantum_min && quantum_init <= quantum_max) {
            return Err(Error::InvalidConfig(format!(
                "initial quantum {quantum_init} outside [{quantum_min}, {quantum_max}]"
            )));
        }
        if !(gains.tol > 0.0) || !(gains.alpha >= 0.0) || !(gains.beta >= 0.0) {
            return Err(Error::InvalidConfig(format!("invalid PI gains {gains:?}")));
        }
        Ok(QuantumController {
            quantum: quantum_init,
            quantum_init,
            quantum_min,
            quantum_max,
            gains,
            eps_guard: DEFAULT_EPS_GUARD,
            sigma_curr: None,
            sigma_prev: None,
        })
    }

    pub fn quantum(&self) -> f64 {
        self.quantum
    }

    pub fn sigma_curr(&self) -> Option<f64> {
        self.sigma_curr
    }

    pub fn sigma_prev(&self) -> Option<f64> {
        self.sigma_prev
    }

    /// Back to `quantum_init` with no error history, as after a disturbance.
    pub fn restart(&self) -> Self {
        QuantumController {
            quantum: self.quantum_init,
            sigma_curr: None,
            sigma_prev: None,
            ..*self
        }
    }

    /// Controller state after observing `sigma`.
    ///
    /// `|σ|` is floored at `eps_guard`; the β-factor is 1 until a previous
    /// estimate exists. NaN estimates leave the controller unchanged.
    pub fn pi_update(&self, sigma: f64) -> Self {
        if sigma.is_nan() {
            return *self;
        }
        let eps = self.eps_guard;
        let s = sigma.abs().max(eps);
        let mut factor = (self.gains.tol / s).powf(self.gains.alpha);
        if let Some(prev) = self.sigma_curr {
            if self.gains.beta != 0.0 {
                factor *= (prev.abs().max(eps) / s).powf(self.gains.beta);
            }
        }
        let proposed = factor * self.quantum;
        let quantum = if proposed.is_nan() {
            self.quantum
        } else {
            proposed.clamp(self.quantum_min, self.quantum_max)
        };
        QuantumController {
            quantum,
            sigma_prev: self.sigma_curr,
            sigma_curr: Some(sigma),
            ..*self
        }
    }
}

/// One row of a quantum trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumRecord {
    pub k: usize,
    pub t: f64,
    pub quantum: f64,
    pub sigma: Option<f64>,
    pub dt: f64,
}

/// Writes `k, t_k, dq_k, sigma_k, dt_k`.
pub fn write_quantum_csv<W: Write>(records: &[QuantumRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "t_k", "dq_k", "sigma_k", "dt_k"])?;
    for r in records {
        w.write_record([
            r.k.to_string(),
            format!("{:e}", r.t),
            format!("{:e}", r.quantum),
            r.sigma.map(|s| format!("{s:e}")).unwrap_or_default(),
            format!("{:e}", r.dt),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<quantum csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::StepMode;
    use approx::assert_abs_diff_eq;

    fn standard_controller() -> QuantumController {
        QuantumController::new(PiGains::default(), 0.2, DEFAULT_DQ_MIN, 4.0).unwrap()
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(estimate_sigma(3.0, 3.0, 0.2), 0.0);
        assert_abs_diff_eq!(estimate_sigma(18.5185, 16.6667, 0.01), 0.009259, epsilon = 1e-6);
        assert_eq!(
            estimate_sigma(5.0, 2.0, 0.4),
            2.0 * estimate_sigma(5.0, 2.0, 0.2)
        );
        assert_eq!(estimate_sigma(f64::INFINITY, 2.0, 0.4), 0.0);
    }

    #[test]
    fn pi_update_halves_quantum() {
        let c = standard_controller().pi_update(0.08);
        assert_eq!(c.quantum(), 0.1);
    }

    #[test]
    fn sigma_at_tolerance_holds() {
        let c = standard_controller().pi_update(0.02);
        assert_eq!(c.quantum(), 0.2);
    }

    #[test]
    fn tiny_sigma_clamps_to_max() {
        let mut c = QuantumController::new(PiGains::default(), 3.9, DEFAULT_DQ_MIN, 4.0).unwrap();
        c = c.pi_update(c.eps_guard);
        assert_eq!(c.quantum(), 4.0);
    }

    #[test]
    fn beta_factor_unity_on_equal_sigma() {
        let gains = PiGains {
            alpha: 0.5,
            beta: 0.5,
            tol: 0.02,
        };
        let pure_p = QuantumController::new(PiGains { beta: 0.0, ..gains }, 0.2, 1e-4, 4.0).unwrap();
        let pi = QuantumController::new(gains, 0.2, 1e-4, 4.0).unwrap();
        let a = pi.pi_update(0.05).pi_update(0.05);
        let b = pure_p.pi_update(0.05).pi_update(0.05);
        assert_abs_diff_eq!(a.quantum(), b.quantum(), epsilon = 1e-15);
    }

    #[test]
    fn history_shifts() {
        let c = standard_controller().pi_update(0.1).pi_update(0.3);
        assert_eq!(c.sigma_curr(), Some(0.3));
        assert_eq!(c.sigma_prev(), Some(0.1));
    }

    #[test]
    fn extreme_sigma_stays_in_bounds() {
        let c = standard_controller();
        assert_eq!(c.pi_update(0.0).quantum(), 4.0);
        assert_eq!(c.pi_update(f64::INFINITY).quantum(), DEFAULT_DQ_MIN);
        assert_eq!(c.pi_update(f64::NAN), c);
    }

    #[test]
    fn restart_returns_to_initial_quantum() {
        let c = standard_controller().pi_update(0.0).restart();
        assert_eq!(c.quantum(), 0.2);
        assert_eq!(c.sigma_curr(), None);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(QuantumController::new(PiGains::default(), 0.2, 1.0, 0.5).is_err());
        assert!(QuantumController::new(PiGains::default(), 5.0, 1e-4, 4.0).is_err());
    }

    #[test]
    fn step_sigma_cases() {
        let cfg = StepControlConfig::new(StepMode::QssAb2, 0.01, 1e-6, 20.0);
        let fresh = DualHistory::new(1).advance(vec![1.0 / 0.06]);
        assert_eq!(step_sigma(&fresh, Some(0), &cfg, SigmaEstimator::EmbeddedOrder), None);
        assert_eq!(step_sigma(&fresh, None, &cfg, SigmaEstimator::EmbeddedOrder), Some(0.0));

        let h = fresh.clone().advance(vec![1.0 / 0.054]);
        let s = step_sigma(&h, Some(0), &cfg, SigmaEstimator::EmbeddedOrder).unwrap();
        assert_abs_diff_eq!(s, estimate_sigma(1.0 / 0.054, 1.0 / 0.06, 0.01), epsilon = 1e-15);

        // the literal half-quantum difference is half the proposed step
        let half = step_sigma(&h, Some(0), &cfg, SigmaEstimator::HalfQuantum).unwrap();
        assert_abs_diff_eq!(half, 0.5 * 0.194444, epsilon = 1e-6);

        // a negative AB2 bracket still reports the φ jump
        let drop = fresh.advance(vec![1.0 / 0.5]);
        let s_drop = step_sigma(&drop, Some(0), &cfg, SigmaEstimator::EmbeddedOrder).unwrap();
        assert_abs_diff_eq!(s_drop, 0.5 * 0.01 * (1.0 / 0.06 - 2.0), epsilon = 1e-12);

        // step bounds do not mask the estimate
        let mut capped = cfg.clone();
        capped.dt_max = 0.1;
        assert_eq!(
            step_sigma(&h, Some(0), &capped, SigmaEstimator::EmbeddedOrder),
            Some(s)
        );
    }

    #[test]
    fn quantum_csv_layout() {
        let recs = [QuantumRecord {
            k: 0,
            t: 0.0,
            quantum: 0.2,
            sigma: None,
            dt: 0.5,
        }];
        let mut buf = Vec::new();
        write_quantum_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "k,t_k,dq_k,sigma_k,dt_k");
        assert_eq!(text.lines().nth(1).unwrap(), "0,0e0,2e-1,,5e-1");
    }
}
