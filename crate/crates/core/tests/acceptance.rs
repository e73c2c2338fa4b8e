//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use dualqss::dae::{SystemState, TestEquation};
use dualqss::power::{avg_error, load_scenario, MultiMachineModel, ScenarioSpec, SolverSpec};
use dualqss::quantum::{PiGains, QuantumController};
use dualqss::scalar::{ab2_scalar_simulate, exact_crossing_time, mean_timing_error, qss1_simulate};
use dualqss::tm::{simulate, tm_step, TmConfig, Trajectory};
use dualqss::bench::TestProblem;
use proptest::test_runner::{Config, TestRunner};

type Outcome = Result<String, String>;

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Least-squares slope of log(err) against log(dq).
fn loglog_slope(dq: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = dq.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn tracking() -> Outcome {
    let p = TestProblem::default();
    let start = Instant::now();
    let trace = qss1_simulate(&p.config(0.01)).map_err(|e| e.to_string())?;
    let dev = trace.max_deviation(|t| p.exact(t), 1e-3);
    let secs = start.elapsed().as_secs_f64();
    check(dev <= 0.011 && secs < 1.0, format!("max deviation {dev:.4e} (<= 0.011), {secs:.3} s (< 1 s)"))
}

fn failure_mode() -> Outcome {
    let p = TestProblem::default();
    let trace = qss1_simulate(&p.config(0.051)).map_err(|e| e.to_string())?;
    let exact = p.exact(20.0);
    check(
        trace.x_end.abs() >= 0.01 && exact.abs() < 1e-4 && trace.has_sign_change(),
        format!(
            "|x(20)| = {:.4e} (>= 0.01), |x*(20)| = {:.2e} (< 1e-4), sign change {}",
            trace.x_end.abs(),
            exact.abs(),
            trace.has_sign_change()
        ),
    )
}

fn timing_reduction() -> Outcome {
    let p = TestProblem::default();
    let band = 0.5 * p.x0;
    let start = Instant::now();
    let mean = |ab2: bool, dq: f64| -> Result<f64, String> {
        let cfg = p.config(dq);
        let trace = if ab2 { ab2_scalar_simulate(&cfg) } else { qss1_simulate(&cfg) }.map_err(|e| e.to_string())?;
        mean_timing_error(&trace, dq, p.rate, band).map_err(|e| e.to_string())
    };
    let (q, a) = (mean(false, 0.001)?, mean(true, 0.001)?);
    let grid = [0.01, 0.005, 0.0025, 0.00125];
    let qs = grid.iter().map(|&d| mean(false, d)).collect::<Result<Vec<_>, _>>()?;
    let abs = grid.iter().map(|&d| mean(true, d)).collect::<Result<Vec<_>, _>>()?;
    let (sq, sa) = (loglog_slope(&grid, &qs), loglog_slope(&grid, &abs));
    let secs = start.elapsed().as_secs_f64();
    check(
        a < q && (sq - 1.0).abs() <= 0.3 && (sa - 2.0).abs() <= 0.3 && secs < 5.0,
        format!(
            "dq=0.001 AB2 {a:.3e} < QSS1 {q:.3e}; slopes QSS1 {sq:.3} (1 +/- 0.3), AB2 {sa:.3} (2 +/- 0.3); {secs:.3} s"
        ),
    )
}

fn first_step_oracle() -> Outcome {
    let p = TestProblem::default();
    let q = qss1_simulate(&p.config(0.01)).map_err(|e| e.to_string())?;
    let a = ab2_scalar_simulate(&p.config(0.01)).map_err(|e| e.to_string())?;
    let dt0 = q.events[0].dt;
    let exact0 = exact_crossing_time(0.1, 0.01, p.rate).ok_or("no crossing")?;
    let rel = (dt0 - exact0).abs() / exact0;
    let dt1 = a.events[1].dt;
    check(
        (dt0 - 0.166667).abs() <= 1e-6
            && (exact0 - 0.175604).abs() <= 1e-6
            && (rel - 0.0509).abs() <= 1e-3
            && (dt1 - 0.194444).abs() <= 1e-6,
        format!("dt0 {dt0:.6}, dt*0 {exact0:.6}, rel err {rel:.4}, AB2 dt1 {dt1:.6}"),
    )
}

fn trapezoid() -> Outcome {
    let rate = -0.6;
    let sys = TestEquation { rate };
    let cfg = TmConfig::default();
    let step = |s: &SystemState, dt: f64| tm_step(&sys, s, dt, &cfg).map_err(|e| e.to_string());

    let mut s = SystemState::new(0.0, vec![0.1], vec![]);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let dt = 0.05;
        let expected = s.x[0] * (1.0 + 0.5 * rate * dt) / (1.0 - 0.5 * rate * dt);
        s = step(&s, dt)?;
        worst = worst.max((s.x[0] - expected).abs());
    }

    let mut stable = true;
    for dt in [0.01, 0.1, 1.0, 10.0] {
        let next = step(&SystemState::new(0.0, vec![1.0], vec![]), dt)?;
        stable &= next.x[0].abs() < 1.0;
    }

    let dts = [0.1_f64, 0.05, 0.025, 0.0125];
    let mut errs = Vec::new();
    for &dt in &dts {
        let mut s = SystemState::new(0.0, vec![0.1], vec![]);
        for _ in 0..(2.0 / dt).round() as usize {
            s = step(&s, dt)?;
        }
        errs.push((s.x[0] - 0.1 * (rate * 2.0).exp()).abs());
    }
    let slope = loglog_slope(&dts, &errs);
    check(
        worst <= 1e-12 && stable && (slope - 2.0).abs() <= 0.2,
        format!("recurrence max diff {worst:.2e}, A-stable {stable}, convergence slope {slope:.3}"),
    )
}

struct FaultRuns {
    reference: Trajectory,
    fixed_coarse: Trajectory,
    qss1: Trajectory,
    ab2: Trajectory,
    adaptive: Trajectory,
    machine: usize,
    seconds: f64,
}

fn fault_runs() -> Result<FaultRuns, String> {
    let spec: ScenarioSpec = load_scenario(&data_path("wscc9_fault.toml")).map_err(|e| e.to_string())?;
    let (model, state) = spec.build_model().map_err(|e| e.to_string())?;
    let machine = spec.machine_index(&model).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let run = |solver: SolverSpec| -> Result<Trajectory, String> {
        let mut m: MultiMachineModel = model.clone();
        let setup = spec.setup(&solver).map_err(|e| e.to_string())?;
        simulate(&mut m, &state, &spec.schedule(), &setup).map_err(|e| e.to_string())
    };
    let adaptive = SolverSpec {
        alpha: Some(0.5),
        beta: Some(0.0),
        tol: Some(0.02),
        dq_init: Some(0.2),
        dq_max: Some(4.0),
        ..SolverSpec::adaptive()
    };
    Ok(FaultRuns {
        reference: run(SolverSpec::fixed(0.001))?,
        fixed_coarse: run(SolverSpec::fixed(0.01))?,
        qss1: run(SolverSpec::qss1(0.24))?,
        ab2: run(SolverSpec::ab2(0.24))?,
        adaptive: run(adaptive)?,
        machine,
        seconds: start.elapsed().as_secs_f64(),
    })
}

impl FaultRuns {
    fn error(&self, t: &Trajectory) -> Result<f64, String> {
        avg_error(t, &self.reference, self.machine).map_err(|e| e.to_string())
    }
}

fn ordering(runs: &FaultRuns) -> Outcome {
    let (eq, ea, ead) = (runs.error(&runs.qss1)?, runs.error(&runs.ab2)?, runs.error(&runs.adaptive)?);
    let ratio = eq / ea;
    check(
        ratio >= 5.0 && ead <= ea && runs.seconds < 60.0,
        format!(
            "QSS1 {eq:.3e} / AB2 {ea:.3e} = {ratio:.2} (>= 5); AB2-Ad {ead:.3e} (<= AB2); {:.1} s (< 60 s)",
            runs.seconds
        ),
    )
}

fn economy(runs: &FaultRuns) -> Outcome {
    let ratio = runs.reference.steps() as f64 / runs.adaptive.steps() as f64;
    let (ead, ef) = (runs.error(&runs.adaptive)?, runs.error(&runs.fixed_coarse)?);
    check(
        ratio >= 5.0 && ead <= 5.0 * ef,
        format!(
            "steps {} vs {} (ratio {ratio:.1}, >= 5); AB2-Ad error {ead:.3e} vs 5 x fixed-0.01 {:.3e}",
            runs.adaptive.steps(),
            runs.reference.steps(),
            5.0 * ef
        ),
    )
}

fn steady_state_skip() -> Outcome {
    let mut spec = ScenarioSpec::new(vec![]);
    spec.model = Some(data_path("wscc9.toml"));
    spec.dt_max = Some(0.1);
    let (model, state) = spec.build_model().map_err(|e| e.to_string())?;
    let run = |solver: SolverSpec| -> Result<Trajectory, String> {
        let mut m = model.clone();
        let setup = spec.setup(&solver).map_err(|e| e.to_string())?;
        simulate(&mut m, &state, &spec.schedule(), &setup).map_err(|e| e.to_string())
    };
    let qss1 = run(SolverSpec::qss1(0.24))?;
    let first = qss1.points[1].dt;
    let adaptive = run(SolverSpec::adaptive())?;
    let at_cap = adaptive.points.iter().skip(1).position(|p| p.quantum == Some(4.0));
    check(
        first == 0.1 && matches!(at_cap, Some(k) if k < 20),
        format!(
            "first QSS1 dt {first} (dt_max 0.1); adaptive dq reaches 4 at step {}",
            at_cap.map_or("never".into(), |k| (k + 1).to_string())
        ),
    )
}

fn runner_config() -> Config {
    Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    }
}

fn pi_oracle() -> Outcome {
    let c = QuantumController::new(PiGains { alpha: 0.5, beta: 0.0, tol: 0.02 }, 0.2, 1e-4, 4.0)
        .map_err(|e| e.to_string())?;
    let next = c.pi_update(0.08).quantum();

    let mut runner = TestRunner::new(runner_config());
    let fixed_point = runner
        .run(&(1e-4..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 1e-3..3.0f64), |(tol, alpha, beta, dq)| {
            let c = QuantumController::new(PiGains { alpha, beta, tol }, dq, 1e-4, 4.0).unwrap();
            let c = c.pi_update(tol).pi_update(tol);
            proptest::prop_assert!((c.quantum() - dq).abs() <= 1e-12 * dq);
            Ok(())
        })
        .map_err(|e| e.to_string());
    let mut runner = TestRunner::new(runner_config());
    let direction = runner
        .run(&(1e-4..1.0f64, 0.01..1.0f64, 0.01..100.0f64, 0.01..3.0f64), |(tol, alpha, ratio, dq)| {
            proptest::prop_assume!((ratio - 1.0).abs() > 1e-3);
            let c = QuantumController::new(PiGains { alpha, beta: 0.0, tol }, dq, 1e-6, 1e6).unwrap();
            let q = c.pi_update(tol * ratio).quantum();
            let moved_right_way = if ratio > 1.0 { q < dq } else { q > dq };
            proptest::prop_assert!(moved_right_way);
            Ok(())
        })
        .map_err(|e| e.to_string());
    check(
        next == 0.1 && fixed_point.is_ok() && direction.is_ok(),
        format!("dq+ = {next}; fixed point {fixed_point:?}; direction {direction:?} (1000 cases each)"),
    )
}

fn adaptation_shape(runs: &FaultRuns) -> Outcome {
    let pts = &runs.adaptive.points[1..];
    let mean = |it: Vec<f64>| it.iter().sum::<f64>() / it.len().max(1) as f64;
    let fault_on: Vec<_> = pts.iter().filter(|p| p.t > 1.0 && p.t <= 1.08 + 1e-12).collect();
    let tail = &pts[pts.len() - (pts.len() / 10).max(1)..];
    let dq_fault = mean(fault_on.iter().map(|p| p.quantum.unwrap_or(f64::NAN)).collect());
    let dq_tail = mean(tail.iter().map(|p| p.quantum.unwrap_or(f64::NAN)).collect());
    let dt_fault = mean(fault_on.iter().map(|p| p.dt).collect());
    let dt_tail = mean(tail.iter().map(|p| p.dt).collect());
    check(
        !fault_on.is_empty() && dq_tail > dq_fault && dt_tail > dt_fault,
        format!("mean dq tail {dq_tail:.3} vs fault-on {dq_fault:.3}; mean dt tail {dt_tail:.4} vs fault-on {dt_fault:.4}"),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let fault = catch_unwind(fault_runs).unwrap_or_else(|_| Err("panicked".into()));
    let with_runs = |f: fn(&FaultRuns) -> Outcome| -> Outcome {
        match &fault {
            Ok(r) => guarded(|| f(r)),
            Err(e) => Err(format!("fault scenario did not run: {e}")),
        }
    };

    let results: Vec<(&str, Outcome)> = vec![
        ("test-equation tracking", guarded(tracking)),
        ("test-equation failure mode", guarded(failure_mode)),
        ("timing-error reduction", guarded(timing_reduction)),
        ("first-step arithmetic", guarded(first_step_oracle)),
        ("trapezoidal correctness", guarded(trapezoid)),
        ("fault-scenario error ordering", with_runs(ordering)),
        ("step-count economy", with_runs(economy)),
        ("steady-state skip", guarded(steady_state_skip)),
        ("PI controller oracle", guarded(pi_oracle)),
        ("quantum/step shape on the fault run", with_runs(adaptation_shape)),
    ];

    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(d) => println!("PASS criterion {}: {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {d}", i + 1)
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
