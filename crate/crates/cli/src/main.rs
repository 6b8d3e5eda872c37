use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mprk::integrators::{integrate, Method, MethodSpec};
use mprk::newton::NewtonConfig;
use mprk::precision::{PrecisionLevel, Quad};
use mprk::problem::{OdeSystem, Problem};
use mprk::study::{
    compute_error, emit_csv, figure_set, power_of_two_grid, run_convergence_study, run_timing_study, ErrorNorm,
    FigureKind, Manifest, ReferenceCache, StudyOptions, StudyReport, DEFAULT_REFERENCE_DT,
};

#[derive(Debug, Parser)]
#[command(name = "mprk", version, about = "Mixed-precision Runge-Kutta runs, convergence studies and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate once and print the final state and its error.
    Run {
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        common: CommonArgs,
        /// Step size.
        #[arg(long, default_value_t = 1.0 / 1024.0)]
        dt: f64,
    },
    /// Error against dt over a power-of-two grid; writes CSV when --out is given.
    Converge {
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wall time (minimum over repetitions) and error over a dt grid.
    Bench {
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate every figure's data as figure-<label>.csv.
    Figures {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Output directory.
        #[arg(long, default_value = "figures")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct MethodArgs {
    /// imr, sdirk, 4s3pa or rk4.
    #[arg(long, default_value = "imr")]
    method: Method,
    /// High precision: 32, 64 or 128.
    #[arg(long, default_value = "64")]
    high: PrecisionLevel,
    /// Low precision for the implicit solves; defaults to --high.
    #[arg(long)]
    low: Option<PrecisionLevel>,
    /// High-precision correction passes per implicit stage.
    #[arg(long, default_value_t = 0)]
    corrections: u32,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// vdp or dahlquist.
    #[arg(long, default_value = "vdp")]
    problem: Problem,
    #[arg(long, default_value_t = 20)]
    newton_max_iter: usize,
    /// Newton tolerance in units of the low precision's machine epsilon.
    #[arg(long, default_value_t = 1.001)]
    newton_tol_factor: f64,
    /// SDIRK diagonal; defaults to (3 + sqrt 3) / 6.
    #[arg(long)]
    sdirk_gamma: Option<Quad>,
    /// euclidean or max.
    #[arg(long, default_value = "euclidean")]
    norm: ErrorNorm,
    /// Step of the quad RK4 reference solution.
    #[arg(long, default_value_t = DEFAULT_REFERENCE_DT)]
    ref_dt: f64,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Largest step is 2^-dt_min_exp.
    #[arg(long, default_value_t = 4)]
    dt_min_exp: i32,
    /// Smallest step is 2^-dt_max_exp (18 for the extended quad sweep).
    #[arg(long, default_value_t = 14)]
    dt_max_exp: i32,
}

struct UsageError(String);

impl GridArgs {
    fn grid(&self) -> Result<Vec<f64>, UsageError> {
        if self.dt_min_exp > self.dt_max_exp {
            return Err(UsageError(format!(
                "--dt-min-exp {} is larger than --dt-max-exp {}",
                self.dt_min_exp, self.dt_max_exp
            )));
        }
        Ok(power_of_two_grid(self.dt_min_exp, self.dt_max_exp))
    }
}

impl CommonArgs {
    fn newton(&self) -> NewtonConfig {
        NewtonConfig { tolerance_factor: self.newton_tol_factor, max_iterations: self.newton_max_iter }
    }

    fn options(&self) -> Result<StudyOptions, UsageError> {
        if !(self.ref_dt > 0.0) || !self.ref_dt.is_finite() {
            return Err(UsageError(format!("--ref-dt must be positive, got {}", self.ref_dt)));
        }
        Ok(StudyOptions { reference_dt: self.ref_dt, norm: self.norm, ..StudyOptions::default() })
    }

    fn configure(&self, method: Method, high: PrecisionLevel, low: PrecisionLevel, corrections: u32) -> Result<MethodSpec, UsageError> {
        let mut spec = MethodSpec::new(method, high, low, corrections)
            .and_then(|s| s.with_newton(self.newton()))
            .map_err(|e| UsageError(e.to_string()))?;
        if let Some(g) = self.sdirk_gamma {
            spec = spec.with_sdirk_gamma(g);
        }
        Ok(spec)
    }
}

impl MethodArgs {
    fn spec(&self, common: &CommonArgs) -> Result<MethodSpec, UsageError> {
        common.configure(self.method, self.high, self.low.unwrap_or(self.high), self.corrections)
    }
}

fn summary_line(report: &StudyReport) {
    for (r, d) in report.records.iter().zip(&report.diagnostics) {
        let status = match &d.failure {
            Some(f) => format!(" FAILED: {f}"),
            None if d.low_confidence => " (low-confidence timing)".to_string(),
            None => String::new(),
        };
        println!(
            "{} {}/{} c{} dt={:e} error={:.6e} time={:.6}s newton={:.2}{status}",
            r.method,
            r.high,
            r.low,
            r.corrections,
            r.dt,
            r.error.to_f64(),
            r.wall_time_s,
            r.newton_iters_mean
        );
    }
    for (k, slope) in &report.slopes {
        println!("slope {k}: {slope:.3}");
    }
}

fn manifest_path(csv: &Path) -> PathBuf {
    csv.with_extension("manifest.json")
}

fn write_outputs(
    report: &StudyReport,
    specs: &[MethodSpec],
    problem: &Problem,
    reps: Option<usize>,
    out: &Path,
) -> Result<(), String> {
    emit_csv(report, out).map_err(|e| format!("{}: {e}", out.display()))?;
    let manifest = manifest_path(out);
    Manifest::new(report, specs, problem, reps)
        .write(&manifest)
        .map_err(|e| format!("{}: {e}", manifest.display()))
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

fn run_once(spec: &MethodSpec, common: &CommonArgs, dt: f64) -> Result<bool, Failure> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Failure::Usage(format!("--dt must be positive, got {dt}")));
    }
    let opts = common.options()?;
    let problem = &common.problem;
    let start = Instant::now();
    let tr = match integrate(spec, problem, Quad::from_f64(dt)) {
        Ok(tr) => tr,
        Err(e) => {
            println!("{} dt={dt:e} FAILED: {e}", spec.label());
            return Ok(false);
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let cache = ReferenceCache::new();
    let reference = cache.get(problem, opts.reference_dt).map_err(|e| Failure::Run(e.to_string()))?;
    let error = compute_error(&tr.final_state, &reference, opts.norm).map_err(|e| Failure::Run(e.to_string()))?;
    // enough digits to round-trip the high precision
    let digits = match spec.high {
        PrecisionLevel::Single => 9,
        PrecisionLevel::Double => 17,
        PrecisionLevel::Quad => mprk::precision::ROUND_TRIP_DIGITS,
    };
    let state: Vec<String> = tr.final_state.iter().map(|x| x.to_sci_string(digits)).collect();
    println!("{} {} dt={dt:e} steps={}", spec.label(), problem.key(), tr.steps);
    println!("final state: [{}]", state.join(", "));
    println!(
        "error={:.6e} time={elapsed:.6}s newton={:.2} (max {})",
        error.to_f64(),
        tr.newton_iterations_mean(),
        tr.max_newton_iterations
    );
    Ok(true)
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    let cache = ReferenceCache::new();
    match cli.command {
        Command::Run { method, common, dt } => {
            let spec = method.spec(&common)?;
            run_once(&spec, &common, dt)
        }
        Command::Converge { method, common, grid, out } => {
            let specs = vec![method.spec(&common)?];
            let grid = grid.grid()?;
            let opts = common.options()?;
            let report = run_convergence_study(&specs, &common.problem, &grid, &opts, &cache)
                .map_err(|e| Failure::Run(e.to_string()))?;
            summary_line(&report);
            if let Some(out) = out {
                write_outputs(&report, &specs, &common.problem, None, &out).map_err(Failure::Run)?;
            }
            Ok(report.failures() == 0)
        }
        Command::Bench { method, common, grid, reps, out } => {
            let specs = vec![method.spec(&common)?];
            let grid = grid.grid()?;
            let opts = common.options()?;
            if reps < mprk::study::MIN_REPETITIONS {
                return Err(Failure::Usage(format!("--reps must be at least {}", mprk::study::MIN_REPETITIONS)));
            }
            let report = run_timing_study(&specs, &common.problem, &grid, reps, &opts, &cache)
                .map_err(|e| Failure::Run(e.to_string()))?;
            summary_line(&report);
            if let Some(out) = out {
                write_outputs(&report, &specs, &common.problem, Some(reps), &out).map_err(Failure::Run)?;
            }
            Ok(report.failures() == 0)
        }
        Command::Figures { common, grid, reps, out } => {
            let grid = grid.grid()?;
            let opts = common.options()?;
            if reps < mprk::study::MIN_REPETITIONS {
                return Err(Failure::Usage(format!("--reps must be at least {}", mprk::study::MIN_REPETITIONS)));
            }
            std::fs::create_dir_all(&out).map_err(|e| Failure::Run(format!("{}: {e}", out.display())))?;
            let mut ok = true;
            for fig in figure_set() {
                let specs = fig
                    .specs
                    .iter()
                    .map(|s| common.configure(s.method, s.high, s.low, s.corrections))
                    .collect::<Result<Vec<_>, _>>()?;
                let report = match fig.kind {
                    FigureKind::Errors => run_convergence_study(&specs, &common.problem, &grid, &opts, &cache),
                    FigureKind::Runtime | FigureKind::Efficiency => {
                        run_timing_study(&specs, &common.problem, &grid, reps, &opts, &cache)
                    }
                }
                .map_err(|e| Failure::Run(e.to_string()))?;
                let path = out.join(fig.file_name());
                let timed = fig.kind != FigureKind::Errors;
                write_outputs(&report, &specs, &common.problem, timed.then_some(reps), &path).map_err(Failure::Run)?;
                println!("{}: {} rows, {} failed", path.display(), report.records.len(), report.failures());
                ok &= report.failures() == 0;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
