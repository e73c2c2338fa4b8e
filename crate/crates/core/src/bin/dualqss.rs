use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dualqss::bench::{self, BenchmarkMatrix, ScalarMethod, TestProblem};
use dualqss::power::metrics::avg_state_error;
use dualqss::power::scenario::{load_scenario, ScenarioSpec, SolverMode, SolverSpec};
use dualqss::power::MultiMachineModel;
use dualqss::tm::{simulate, Trajectory};
use dualqss::Result;

#[derive(Parser)]
#[command(name = "dualqss", version, about = "Quantized-state step control benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark matrix file.
    Bench {
        matrix: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Scalar test-equation study (x' = -0.6 x, x0 = 0.1, 20 s).
    Scalar {
        /// Quanta to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.051, 0.001])]
        dq: Vec<f64>,
        #[arg(long, value_enum, default_value_t = ScalarMode::Both)]
        mode: ScalarMode,
        #[arg(long, default_value = "scalar-out")]
        out: PathBuf,
    },
    /// Simulate one scenario (or an undisturbed model) and save the trajectory.
    Run {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Model file; overrides the scenario's model, or runs undisturbed.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
    },
    /// Compare two trajectory CSVs (candidate against reference).
    Compare { candidate: PathBuf, reference: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalarMode {
    Qss1,
    Ab2,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fixed,
    Qss1,
    Ab2,
    #[value(name = "ab2-ad")]
    Ab2Ad,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    dq: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    dq_max: Option<f64>,
    #[arg(long)]
    dq_init: Option<f64>,
}

impl SolverArgs {
    fn spec(&self, fallback: Option<SolverSpec>) -> SolverSpec {
        let mut spec = match self.mode {
            Some(m) => SolverSpec::new(match m {
                Mode::Fixed => SolverMode::Fixed,
                Mode::Qss1 => SolverMode::Qss1,
                Mode::Ab2 => SolverMode::Ab2,
                Mode::Ab2Ad => SolverMode::Ab2Ad,
            }),
            None => fallback.unwrap_or_else(SolverSpec::adaptive),
        };
        spec.dq = self.dq.or(spec.dq);
        spec.dt = self.dt.or(spec.dt);
        spec.tol = self.tol.or(spec.tol);
        spec.alpha = self.alpha.or(spec.alpha);
        spec.beta = self.beta.or(spec.beta);
        spec.dq_max = self.dq_max.or(spec.dq_max);
        spec.dq_init = self.dq_init.or(spec.dq_init);
        spec
    }
}

fn bench_cmd(matrix: PathBuf, out: Option<PathBuf>, reps: Option<usize>) -> Result<bool> {
    let mut m = BenchmarkMatrix::load(&matrix)?;
    if let Some(out) = out {
        m.out = out;
    }
    if let Some(reps) = reps {
        let configs = m.configs.split_off(1);
        m = BenchmarkMatrix::new(m.scenario, configs, reps, m.out)?;
    }
    let results = bench::run_matrix(&m)?;
    print!("{}", results.table());
    println!("results written to {}", m.out.display());
    Ok(results.all_succeeded())
}

fn scalar_cmd(dq: Vec<f64>, mode: ScalarMode, out: PathBuf) -> Result<bool> {
    let methods = match mode {
        ScalarMode::Qss1 => vec![ScalarMethod::Qss1],
        ScalarMode::Ab2 => vec![ScalarMethod::Ab2],
        ScalarMode::Both => vec![ScalarMethod::Qss1, ScalarMethod::Ab2],
    };
    let rows = bench::run_scalar_study(&TestProblem::default(), &dq, &methods, &out)?;
    println!("{:<6} {:>8} {:>8} {:>12} {:>12} {:>12}", "method", "dq", "events", "x(20)", "max dev", "timing err");
    for r in rows {
        println!(
            "{:<6} {:>8} {:>8} {:>12.4e} {:>12.4e} {:>12}",
            r.method.name(),
            r.quantum,
            r.events,
            r.x_end,
            r.max_deviation,
            r.mean_timing_error.map(|v| format!("{v:.4e}")).unwrap_or_else(|| "-".into())
        );
    }
    println!("study written to {}", out.display());
    Ok(true)
}

fn run_cmd(scenario: Option<PathBuf>, model: Option<PathBuf>, solver: SolverArgs, out: PathBuf) -> Result<bool> {
    let mut spec = match &scenario {
        Some(path) => load_scenario(path)?,
        None => ScenarioSpec::new(Vec::new()),
    };
    if let Some(m) = model {
        spec.model = Some(m);
    }
    let solver = solver.spec(spec.solver.clone());
    let (mut system, initial): (MultiMachineModel, _) = spec.build_model()?;
    let machine = spec.machine_index(&system)?;
    let start = std::time::Instant::now();
    let traj = simulate(&mut system, &initial, &spec.schedule(), &spec.setup(&solver)?)?;
    let elapsed = start.elapsed();
    traj.save(&out)?;
    if traj.adaptive {
        let qpath = out.with_extension("quantum.csv");
        bench::emit_quantum_trace_file(&traj, &qpath)?;
        println!("quantum trace: {}", qpath.display());
    }
    let last = traj.final_point();
    println!("solver:  {}", solver.to_source()?.label());
    println!("steps:   {}", traj.steps());
    println!("wall:    {:.2} ms", elapsed.as_secs_f64() * 1e3);
    println!(
        "omega({}) at t = {}: {:.8}",
        system.machine_bus(machine),
        last.t,
        last.x[MultiMachineModel::omega_index(machine)]
    );
    println!("trajectory: {}", out.display());
    Ok(true)
}

fn compare_cmd(candidate: PathBuf, reference: PathBuf) -> Result<bool> {
    let c = Trajectory::load(&candidate)?;
    let r = Trajectory::load(&reference)?;
    println!("steps: {} (reference {})", c.steps(), r.steps());
    println!("{:<8} {:>14}", "state", "avg |error|");
    for i in 0..r.n {
        println!("x_{:<6} {:>14.6e}", i, avg_state_error(&c, &r, i)?);
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Bench { matrix, out, reps } => bench_cmd(matrix, out, reps),
        Command::Scalar { dq, mode, out } => scalar_cmd(dq, mode, out),
        Command::Run {
            scenario,
            model,
            solver,
            out,
        } => run_cmd(scenario, model, solver, out),
        Command::Compare { candidate, reference } => compare_cmd(candidate, reference),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some rows FAILED");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
