//! Benchmark runner: solver comparison matrices on power-system scenarios,
//! scalar test-equation studies and quantum traces.
//!
//! Matrix file layout (TOML):
//!
//! ```toml
//! scenario = "wscc9_fault.toml"   # relative to the matrix file
//! reps = 3                        # timed repetitions per row (>= 3)
//! out = "bench-out"               # output directory (relative to the working directory)
//!
//! [[config]]
//! name = "qss1-0.24"
//! solver = { mode = "qss1", dq = 0.24 }
//! ```
//!
//! A reference row (fixed step 0.001 s) is always run first; every other row
//! is scored against it.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Deserialize;

use crate::dae::SystemState;
use crate::error::{Error, Result};
use crate::power::metrics::avg_error;
use crate::power::model::MultiMachineModel;
use crate::power::scenario::{load_scenario, ScenarioSpec};
use crate::quantum::write_quantum_csv;
use crate::scalar::{
    ab2_scalar_simulate, mean_timing_error, qss1_simulate, timing_error_series, write_trace_csv,
    ScalarQssConfig, ScalarQssTrace,
};
use crate::tm::{simulate, Trajectory};

pub use crate::power::scenario::{SolverMode, SolverSpec};

pub const REFERENCE_NAME: &str = "reference";
pub const REFERENCE_DT: f64 = 0.001;
pub const MIN_REPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedConfig {
    pub name: String,
    pub solver: SolverSpec,
}

impl NamedConfig {
    pub fn new(name: impl Into<String>, solver: SolverSpec) -> Self {
        NamedConfig {
            name: name.into(),
            solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkMatrix {
    pub scenario: ScenarioSpec,
    /// Rows in run order; the first is always the reference.
    pub configs: Vec<NamedConfig>,
    pub reps: usize,
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    scenario: PathBuf,
    #[serde(default = "default_reps")]
    reps: usize,
    #[serde(default = "default_out")]
    out: PathBuf,
    #[serde(default, rename = "config")]
    configs: Vec<NamedConfig>,
}

fn default_reps() -> usize {
    MIN_REPS
}

fn default_out() -> PathBuf {
    PathBuf::from("bench-out")
}

impl BenchmarkMatrix {
    /// Matrix over `configs` with the reference row prepended.
    pub fn new(scenario: ScenarioSpec, configs: Vec<NamedConfig>, reps: usize, out: PathBuf) -> Result<Self> {
        if reps < MIN_REPS {
            return Err(Error::InvalidConfig(format!(
                "repetitions must be at least {MIN_REPS}, got {reps}"
            )));
        }
        let mut rows = vec![NamedConfig::new(REFERENCE_NAME, SolverSpec::fixed(REFERENCE_DT))];
        for c in configs {
            if c.name == REFERENCE_NAME {
                return Err(Error::InvalidConfig(format!(
                    "config name `{REFERENCE_NAME}` is reserved"
                )));
            }
            if rows.iter().any(|r| r.name == c.name) {
                return Err(Error::InvalidConfig(format!("duplicate config name `{}`", c.name)));
            }
            c.solver.to_source()?;
            rows.push(c);
        }
        Ok(BenchmarkMatrix {
            scenario,
            configs: rows,
            reps,
            out,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MatrixFile = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let scenario = load_scenario(&dir.join(&file.scenario))?;
        Self::new(scenario, file.configs, file.reps, file.out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub name: String,
    pub label: String,
    pub wall_ms_median: Option<f64>,
    pub steps: Option<usize>,
    pub avg_error: Option<f64>,
    pub trajectory: Option<PathBuf>,
    pub failure: Option<String>,
}

impl BenchRow {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResults {
    pub rows: Vec<BenchRow>,
}

impl BenchResults {
    pub fn all_succeeded(&self) -> bool {
        self.rows.iter().all(|r| !r.failed())
    }

    pub fn row(&self, name: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Writes `config, wall_ms_median, steps, avg_error`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["config", "wall_ms_median", "steps", "avg_error"])?;
        for r in &self.rows {
            if r.failed() {
                w.write_record([r.name.as_str(), "FAILED", "", ""])?;
                continue;
            }
            w.write_record([
                r.name.clone(),
                r.wall_ms_median.map(|v| format!("{v:.3}")).unwrap_or_default(),
                r.steps.map(|v| v.to_string()).unwrap_or_default(),
                r.avg_error.map(|v| format!("{v:e}")).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<results csv>", e))?;
        Ok(())
    }

    /// Human-readable aligned table.
    pub fn table(&self) -> String {
        let header = ["config", "solver", "time [ms]", "steps", "avg error"];
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                if let Some(msg) = &r.failure {
                    return [
                        r.name.clone(),
                        r.label.clone(),
                        "FAILED".into(),
                        String::new(),
                        msg.clone(),
                    ];
                }
                [
                    r.name.clone(),
                    r.label.clone(),
                    r.wall_ms_median.map(|v| format!("{v:.2}")).unwrap_or_default(),
                    r.steps.map(|v| v.to_string()).unwrap_or_default(),
                    r.avg_error.map(|v| format!("{v:.3e}")).unwrap_or_default(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut s = String::new();
        let line = |s: &mut String, row: &[&str]| {
            let parts: Vec<String> = row
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", parts.join("  ").trim_end());
        };
        line(&mut s, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(s, "{}", rule.join("  "));
        for row in &cells {
            let refs: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut s, &refs);
        }
        s
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

struct Timed {
    trajectory: Trajectory,
    wall_ms_median: f64,
}

fn run_timed(
    model: &MultiMachineModel,
    initial: &SystemState,
    scenario: &ScenarioSpec,
    solver: &SolverSpec,
    reps: usize,
) -> Result<Timed> {
    let setup = scenario.setup(solver)?;
    let schedule = scenario.schedule();
    // warm-up, discarded
    let mut trajectory = simulate(&mut model.clone(), initial, &schedule, &setup)?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut m = model.clone();
        let start = Instant::now();
        trajectory = simulate(&mut m, initial, &schedule, &setup)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let wall_ms_median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    Ok(Timed {
        trajectory,
        wall_ms_median,
    })
}

/// Runs every row of `matrix`, persisting trajectories, `results.csv` and
/// `table.txt` under `matrix.out`. Row failures are recorded, not returned.
pub fn run_matrix(matrix: &BenchmarkMatrix) -> Result<BenchResults> {
    std::fs::create_dir_all(&matrix.out).map_err(|e| Error::io(&matrix.out, e))?;
    let (model, initial) = matrix.scenario.build_model()?;
    let machine = matrix.scenario.machine_index(&model)?;

    let mut reference: Option<Trajectory> = None;
    let mut rows = Vec::with_capacity(matrix.configs.len());
    for cfg in &matrix.configs {
        let label = cfg.solver.to_source().map(|s| s.label()).unwrap_or_default();
        let mut row = BenchRow {
            name: cfg.name.clone(),
            label,
            wall_ms_median: None,
            steps: None,
            avg_error: None,
            trajectory: None,
            failure: None,
        };
        let outcome = run_timed(&model, &initial, &matrix.scenario, &cfg.solver, matrix.reps).and_then(|timed| {
            let stem = file_stem(&cfg.name);
            let path = matrix.out.join(format!("traj_{stem}.csv"));
            timed.trajectory.save(&path)?;
            if timed.trajectory.adaptive {
                emit_quantum_trace_file(&timed.trajectory, &matrix.out.join(format!("quantum_{stem}.csv")))?;
            }
            Ok((timed, path))
        });
        match outcome {
            Ok((timed, path)) => {
                row.wall_ms_median = Some(timed.wall_ms_median);
                row.steps = Some(timed.trajectory.steps());
                row.trajectory = Some(path);
                if cfg.name == REFERENCE_NAME {
                    reference = Some(timed.trajectory);
                } else if let Some(r) = &reference {
                    match avg_error(&timed.trajectory, r, machine) {
                        Ok(e) => row.avg_error = Some(e),
                        Err(e) => row.failure = Some(e.to_string()),
                    }
                }
            }
            Err(e) => row.failure = Some(e.to_string()),
        }
        rows.push(row);
    }

    let results = BenchResults { rows };
    let csv_path = matrix.out.join("results.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    results.write_csv(std::io::BufWriter::new(file))?;
    let table_path = matrix.out.join("table.txt");
    std::fs::write(&table_path, results.table()).map_err(|e| Error::io(&table_path, e))?;
    Ok(results)
}

/// Writes the `(k, t, dq, σ, dt)` trace of an adaptive trajectory.
pub fn emit_quantum_trace<W: Write>(trajectory: &Trajectory, out: W) -> Result<()> {
    let records = trajectory.quantum_records()?;
    write_quantum_csv(&records, out)
}

pub fn emit_quantum_trace_file(trajectory: &Trajectory, path: &Path) -> Result<()> {
    let records = trajectory.quantum_records()?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_quantum_csv(&records, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarMethod {
    Qss1,
    Ab2,
}

impl ScalarMethod {
    pub fn name(self) -> &'static str {
        match self {
            ScalarMethod::Qss1 => "qss1",
            ScalarMethod::Ab2 => "ab2",
        }
    }

    pub fn simulate<F: Fn(f64) -> f64>(self, config: &ScalarQssConfig<F>) -> Result<ScalarQssTrace> {
        match self {
            ScalarMethod::Qss1 => qss1_simulate(config),
            ScalarMethod::Ab2 => ab2_scalar_simulate(config),
        }
    }
}

/// The linear test equation `x' = rate * x` from `x0` over `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestProblem {
    pub x0: f64,
    pub rate: f64,
    pub horizon: f64,
}

impl Default for TestProblem {
    fn default() -> Self {
        TestProblem {
            x0: 0.1,
            rate: -0.6,
            horizon: 20.0,
        }
    }
}

impl TestProblem {
    pub fn exact(&self, t: f64) -> f64 {
        self.x0 * (self.rate * t).exp()
    }

    pub fn config(&self, quantum: f64) -> ScalarQssConfig<impl Fn(f64) -> f64> {
        let rate = self.rate;
        ScalarQssConfig::new(move |x| rate * x, self.x0, quantum, self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarStudyRow {
    pub method: ScalarMethod,
    pub quantum: f64,
    pub events: usize,
    pub x_end: f64,
    pub max_deviation: f64,
    /// Mean relative timing error over `|x_k| >= x0 / 2`.
    pub mean_timing_error: Option<f64>,
}

/// Per `(dq, method)`: trace CSV, timing-error CSV and a summary row, plus
/// the exact solution sampled every millisecond.
pub fn run_scalar_study(
    problem: &TestProblem,
    quanta: &[f64],
    methods: &[ScalarMethod],
    out: &Path,
) -> Result<Vec<ScalarStudyRow>> {
    if let Some(bad) = quanta.iter().find(|q| !(**q > 0.0)) {
        return Err(Error::InvalidConfig(format!("quantum {bad} must be > 0")));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let create = |name: String| -> Result<std::io::BufWriter<std::fs::File>> {
        let path = out.join(name);
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(std::io::BufWriter::new(f))
    };

    let mut rows = Vec::new();
    for &dq in quanta {
        for &method in methods {
            let trace = method.simulate(&problem.config(dq))?;
            let tag = format!("{}_dq{dq}", method.name());
            write_trace_csv(&trace, dq, Some(problem.rate), create(format!("trace_{tag}.csv"))?)?;

            let mut w = csv::Writer::from_writer(create(format!("timing_{tag}.csv"))?);
            w.write_record(["k", "dt_k", "dt_star_k", "rel_err_k"])?;
            if let Ok(series) = timing_error_series(&trace, dq, problem.rate) {
                for s in series {
                    w.write_record([
                        s.index.to_string(),
                        format!("{:e}", s.dt),
                        format!("{:e}", s.exact_dt),
                        format!("{:e}", s.rel_err),
                    ])?;
                }
            }
            w.flush().map_err(|e| Error::io(out, e))?;

            rows.push(ScalarStudyRow {
                method,
                quantum: dq,
                events: trace.events.len(),
                x_end: trace.x_end,
                max_deviation: trace.max_deviation(|t| problem.exact(t), 1e-3),
                mean_timing_error: mean_timing_error(&trace, dq, problem.rate, 0.5 * problem.x0.abs()).ok(),
            });
        }
    }

    let mut w = csv::Writer::from_writer(create("exact.csv".into())?);
    w.write_record(["t", "x"])?;
    let samples = (problem.horizon / 1e-3).round() as usize;
    for i in 0..=samples {
        let t = i as f64 * 1e-3;
        w.write_record([format!("{t:e}"), format!("{:e}", problem.exact(t))])?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;

    let mut w = csv::Writer::from_writer(create("summary.csv".into())?);
    w.write_record(["method", "dq", "events", "x_end", "max_deviation", "mean_timing_error"])?;
    for r in &rows {
        w.write_record([
            r.method.name().to_string(),
            r.quantum.to_string(),
            r.events.to_string(),
            format!("{:e}", r.x_end),
            format!("{:e}", r.max_deviation),
            r.mean_timing_error.map(|v| format!("{v:e}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns_and_marks_failures() {
        let results = BenchResults {
            rows: vec![
                BenchRow {
                    name: "reference".into(),
                    label: "fixed dt=0.001".into(),
                    wall_ms_median: Some(12.5),
                    steps: Some(20000),
                    avg_error: None,
                    trajectory: None,
                    failure: None,
                },
                BenchRow {
                    name: "bad".into(),
                    label: "QSS-AB2 dq=1".into(),
                    wall_ms_median: None,
                    steps: None,
                    avg_error: None,
                    trajectory: None,
                    failure: Some("no convergence".into()),
                },
            ],
        };
        let t = results.table();
        assert!(t.lines().count() == 4);
        assert!(t.contains("FAILED"));
        let mut buf = Vec::new();
        results.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "config,wall_ms_median,steps,avg_error");
        assert_eq!(text.lines().nth(2).unwrap(), "bad,FAILED,,");
        assert!(!results.all_succeeded());
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("qss1 dq=0.24/x"), "qss1_dq_0.24_x");
    }
}
