//! Scalar quantized-state integration and its event-timing oracle.
//!
//! Between quantization events the state moves along a straight line with
//! slope `f(x_k)`. QSS1 chooses the segment length so that the state moves by
//! exactly one quantum; the AB2 variant extrapolates the dual derivative
//! `φ = 1/|f|` from the last two events instead.

use std::io::Write;

use crate::dual::{ab2_candidate, qss1_candidate};
use crate::error::{Error, Result};

/// Default lower bound on a scalar step.
pub const DEFAULT_DT_MIN: f64 = 1e-6;

pub struct ScalarQssConfig<F> {
    pub quantum: f64,
    pub x0: f64,
    pub horizon: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub rhs: F,
}

impl<F: Fn(f64) -> f64> ScalarQssConfig<F> {
    /// Config with `dt_min = 1e-6` and `dt_max = horizon`.
    pub fn new(rhs: F, x0: f64, quantum: f64, horizon: f64) -> Self {
        ScalarQssConfig {
            quantum,
            x0,
            horizon,
            dt_min: DEFAULT_DT_MIN,
            dt_max: horizon,
            rhs,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.quantum > 0.0) {
            return Err(Error::InvalidConfig(format!("quantum {} must be > 0", self.quantum)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidConfig(format!("horizon {} must be > 0", self.horizon)));
        }
        if !(self.dt_max > 0.0 && self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(Error::InvalidConfig(format!(
                "step bounds [{}, {}] must satisfy 0 < dt_min <= dt_max",
                self.dt_min, self.dt_max
            )));
        }
        if !self.x0.is_finite() {
            return Err(Error::NonFiniteValue("initial state".into()));
        }
        Ok(())
    }
}

/// One quantization event: the segment starting at `(t, x)` lasts `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QssEvent {
    pub t: f64,
    pub x: f64,
    pub dt: f64,
    /// The step was set by a bound or the horizon rather than by the quantum.
    pub limited: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Horizon,
    SteadyState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarQssTrace {
    pub events: Vec<QssEvent>,
    pub t_end: f64,
    pub x_end: f64,
    pub terminated_by: Termination,
}

impl ScalarQssTrace {
    /// Piecewise-linear state at time `t` (clamped to the traced interval).
    pub fn value_at(&self, t: f64) -> f64 {
        if self.events.is_empty() || t <= self.events[0].t {
            return self.events.first().map_or(self.x_end, |e| e.x);
        }
        if t >= self.t_end {
            return self.x_end;
        }
        let idx = self.events.partition_point(|e| e.t <= t) - 1;
        let ev = &self.events[idx];
        let (t1, x1) = match self.events.get(idx + 1) {
            Some(next) => (next.t, next.x),
            None => (self.t_end, self.x_end),
        };
        if t1 <= ev.t {
            return x1;
        }
        ev.x + (x1 - ev.x) * (t - ev.t) / (t1 - ev.t)
    }

    /// Largest `|x(t) - exact(t)|` over event times, the end point and a
    /// uniform sampling grid of spacing `sample_dt`.
    pub fn max_deviation(&self, exact: impl Fn(f64) -> f64, sample_dt: f64) -> f64 {
        let mut worst = 0.0_f64;
        for ev in &self.events {
            worst = worst.max((ev.x - exact(ev.t)).abs());
        }
        worst = worst.max((self.x_end - exact(self.t_end)).abs());
        let samples = (self.t_end / sample_dt).floor() as usize;
        for i in 0..=samples {
            let t = i as f64 * sample_dt;
            worst = worst.max((self.value_at(t) - exact(t)).abs());
        }
        worst
    }

    /// True if the state changes sign anywhere along the trace.
    pub fn has_sign_change(&self) -> bool {
        let mut signs = self
            .events
            .iter()
            .map(|e| e.x)
            .chain(std::iter::once(self.x_end))
            .filter(|x| *x != 0.0)
            .map(f64::is_sign_positive);
        match signs.next() {
            Some(first) => signs.any(|s| s != first),
            None => false,
        }
    }
}

#[derive(Clone, Copy)]
enum DualRule {
    ForwardEuler,
    AdamsBashforth2,
}

fn simulate<F: Fn(f64) -> f64>(config: &ScalarQssConfig<F>, rule: DualRule) -> Result<ScalarQssTrace> {
    config.validate()?;
    let mut events = Vec::new();
    let (mut t, mut x) = (0.0_f64, config.x0);
    // φ at the previous event, when the AB2 history is usable.
    let mut phi_prev: Option<f64> = None;

    loop {
        let remaining = config.horizon - t;
        if remaining <= 0.0 {
            return Ok(ScalarQssTrace {
                events,
                t_end: config.horizon,
                x_end: x,
                terminated_by: Termination::Horizon,
            });
        }
        let fx = (config.rhs)(x);
        if !fx.is_finite() {
            return Err(Error::NonFiniteValue(format!("f({x}) = {fx}")));
        }
        if fx == 0.0 {
            let dt = config.dt_max.min(remaining);
            events.push(QssEvent {
                t,
                x,
                dt,
                limited: true,
            });
            let t_end = if dt == remaining { config.horizon } else { t + dt };
            return Ok(ScalarQssTrace {
                events,
                t_end,
                x_end: x,
                terminated_by: Termination::SteadyState,
            });
        }

        let phi = 1.0 / fx.abs();
        let natural = match (rule, phi_prev) {
            (DualRule::AdamsBashforth2, Some(prev)) => ab2_candidate(config.quantum, phi, prev),
            _ => qss1_candidate(config.quantum, phi),
        };
        let mut limited = false;
        let mut dt = if natural <= 0.0 {
            // Negative AB2 bracket: restart from the lower bound.
            limited = true;
            config.dt_min
        } else if natural < config.dt_min {
            limited = true;
            config.dt_min
        } else if natural > config.dt_max {
            limited = true;
            config.dt_max
        } else {
            natural
        };
        let last = dt >= remaining;
        if last {
            dt = remaining;
            limited = true;
        }
        events.push(QssEvent { t, x, dt, limited });
        x += dt * fx;
        t = if last { config.horizon } else { t + dt };
        phi_prev = if limited { None } else { Some(phi) };
    }
}

/// Classic QSS1: `dt_k = dq / |f(x_k)|`, bounded by `[dt_min, dt_max]` and
/// the horizon.
pub fn qss1_simulate<F: Fn(f64) -> f64>(config: &ScalarQssConfig<F>) -> Result<ScalarQssTrace> {
    simulate(config, DualRule::ForwardEuler)
}

/// QSS with the second-order Adams–Bashforth dual step
/// `dt_k = dq * (1.5 φ_k - 0.5 φ_{k-1})`.
///
/// The first step, and any step after a bounded or truncated one, falls back
/// to the QSS1 rule. The state still advances at slope `f(x_k)`.
pub fn ab2_scalar_simulate<F: Fn(f64) -> f64>(config: &ScalarQssConfig<F>) -> Result<ScalarQssTrace> {
    simulate(config, DualRule::AdamsBashforth2)
}

/// Exact time for the solution of `x' = rate * x` starting at `x_k` to move
/// by one quantum. `None` if it never does.
pub fn exact_crossing_time(x_k: f64, quantum: f64, rate: f64) -> Option<f64> {
    if rate == 0.0 || x_k == 0.0 || !(quantum > 0.0) {
        return None;
    }
    let mag = x_k.abs();
    let ratio = quantum / mag;
    if rate < 0.0 {
        // |x| decays to 0 and can drop by at most |x_k|.
        if ratio >= 1.0 {
            return None;
        }
        Some(-(-ratio).ln_1p() / rate.abs())
    } else {
        Some(ratio.ln_1p() / rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSample {
    pub index: usize,
    pub dt: f64,
    pub exact_dt: f64,
    pub rel_err: f64,
}

/// Relative event-timing errors `|dt_k - dt*_k| / dt*_k` of a trace of the
/// linear test equation.
///
/// Events without an exact crossing, and steps set by a bound or the horizon,
/// are skipped.
pub fn timing_error_series(trace: &ScalarQssTrace, quantum: f64, rate: f64) -> Result<Vec<TimingSample>> {
    let series: Vec<TimingSample> = trace
        .events
        .iter()
        .enumerate()
        .filter(|(_, ev)| !ev.limited)
        .filter_map(|(index, ev)| {
            exact_crossing_time(ev.x, quantum, rate).map(|exact_dt| TimingSample {
                index,
                dt: ev.dt,
                exact_dt,
                rel_err: (ev.dt - exact_dt).abs() / exact_dt,
            })
        })
        .collect();
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(series)
}

/// Mean relative timing error over events with `|x_k| >= min_abs_state`.
///
/// Restricting to a fixed band of the state keeps the average comparable
/// across quanta; the last events before the origin have O(1) error at any
/// quantum.
pub fn mean_timing_error(
    trace: &ScalarQssTrace,
    quantum: f64,
    rate: f64,
    min_abs_state: f64,
) -> Result<f64> {
    let samples: Vec<f64> = timing_error_series(trace, quantum, rate)?
        .into_iter()
        .filter(|s| trace.events[s.index].x.abs() >= min_abs_state)
        .map(|s| s.rel_err)
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Writes `k, t_k, x_k, dt_k, dt_star_k, rel_err_k`.
///
/// With `rate` set, the exact crossing time and relative error are filled in
/// where defined. The terminal point is the last row, with `dt_k = 0`.
pub fn write_trace_csv<W: Write>(trace: &ScalarQssTrace, quantum: f64, rate: Option<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "t_k", "x_k", "dt_k", "dt_star_k", "rel_err_k"])?;
    for (k, ev) in trace.events.iter().enumerate() {
        let star = rate.and_then(|r| exact_crossing_time(ev.x, quantum, r));
        let (star_s, err_s) = match star {
            Some(s) => (format!("{s:e}"), format!("{:e}", (ev.dt - s).abs() / s)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            k.to_string(),
            format!("{:e}", ev.t),
            format!("{:e}", ev.x),
            format!("{:e}", ev.dt),
            star_s,
            err_s,
        ])?;
    }
    w.write_record([
        trace.events.len().to_string(),
        format!("{:e}", trace.t_end),
        format!("{:e}", trace.x_end),
        "0".to_string(),
        String::new(),
        String::new(),
    ])?;
    w.flush().map_err(|e| Error::io("<trace csv>", e))?;
    Ok(())
}
