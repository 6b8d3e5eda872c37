//! Convergence and timing studies: reference solutions, final-time errors,
//! dt sweeps, slope fits and CSV/manifest output.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::integrators::{integrate, IntegrateError, Method, MethodSpec, Trajectory};
use crate::precision::{PrecisionLevel, Quad, Real};
use crate::problem::{OdeSystem, StateVector};

/// Default reference step, 2^-20.
pub const DEFAULT_REFERENCE_DT: f64 = 1.0 / 1048576.0;
/// Errors at or above this are outside the asymptotic window.
pub const WINDOW_UPPER: f64 = 1e-1;
/// The window starts this factor above the reference error floor.
pub const WINDOW_FLOOR_FACTOR: f64 = 1e3;
pub const MIN_REPETITIONS: usize = 3;
pub const HOST_TAG_ENV: &str = "MPRK_HOST_TAG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorNorm {
    #[default]
    Euclidean,
    Max,
}

impl fmt::Display for ErrorNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorNorm::Euclidean => "euclidean",
            ErrorNorm::Max => "max",
        })
    }
}

impl FromStr for ErrorNorm {
    type Err = StudyError;

    fn from_str(s: &str) -> Result<Self, StudyError> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" | "2" => Ok(ErrorNorm::Euclidean),
            "max" | "inf" | "linf" => Ok(ErrorNorm::Max),
            _ => Err(StudyError::Parse(format!("unknown norm {s:?}; expected euclidean or max"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("state has dimension {got}, reference has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid dt grid: {0}")]
    Grid(String),
    #[error("timing needs at least {MIN_REPETITIONS} repetitions, got {0}")]
    Repetitions(usize),
    #[error("reference solution failed: {0}")]
    Reference(#[source] IntegrateError),
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Norm of `final_state - reference`, evaluated at quad precision after
/// widening `final_state`.
pub fn compute_error<T: Real>(final_state: &[T], reference: &[Quad], norm: ErrorNorm) -> Result<Quad, StudyError> {
    if final_state.len() != reference.len() {
        return Err(StudyError::Dimension { expected: reference.len(), got: final_state.len() });
    }
    let diffs = final_state.iter().zip(reference).map(|(&x, &r)| x.to_quad() - r);
    Ok(match norm {
        ErrorNorm::Euclidean => diffs.fold(Quad::ZERO, |acc, d| acc + d * d).sqrt(),
        ErrorNorm::Max => diffs.fold(Quad::ZERO, |acc, d| {
            let a = d.abs();
            if a > acc || a.is_nan() {
                a
            } else {
                acc
            }
        }),
    })
}

/// Classical RK4 at quad precision with step `dt_ref`.
pub fn compute_reference<S: OdeSystem>(system: &S, dt_ref: f64) -> Result<StateVector<Quad>, StudyError> {
    let spec = MethodSpec::uniform(Method::Rk4, PrecisionLevel::Quad, 0);
    integrate(&spec, system, Quad::from_f64(dt_ref))
        .map(|tr| tr.final_state)
        .map_err(StudyError::Reference)
}

/// Reference solutions keyed by (problem instance, dt_ref).
#[derive(Debug, Default)]
pub struct ReferenceCache {
    entries: Mutex<HashMap<(String, u64), Arc<StateVector<Quad>>>>,
}

impl ReferenceCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get<S: OdeSystem>(&self, system: &S, dt_ref: f64) -> Result<Arc<StateVector<Quad>>, StudyError> {
        let key = (system.cache_key(), dt_ref.to_bits());
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        // computed outside the lock; a racing duplicate is identical anyway
        let state = Arc::new(compute_reference(system, dt_ref)?);
        Ok(self.entries.lock().unwrap().entry(key).or_insert(state).clone())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Estimated error of the reference itself: the Richardson estimate
    /// `|ref(dt) - ref(2 dt)| / 15` for a fourth-order method, bounded below
    /// by quad roundoff at the solution's scale.
    pub fn error_floor<S: OdeSystem>(&self, system: &S, dt_ref: f64, norm: ErrorNorm) -> Result<Quad, StudyError> {
        let fine = self.get(system, dt_ref)?;
        let coarse = self.get(system, 2.0 * dt_ref)?;
        let estimate = compute_error(&coarse, &fine, norm)? / Quad::from_f64(15.0);
        let scale = fine.iter().fold(Quad::ONE, |acc, x| acc.max_of(x.abs()));
        Ok(estimate.max_of(Quad::EPSILON * scale))
    }
}

/// Step sizes 2^-min_exp, ..., 2^-max_exp (decreasing).
pub fn power_of_two_grid(min_exp: i32, max_exp: i32) -> Vec<f64> {
    (min_exp..=max_exp).map(|k| 2f64.powi(-k)).collect()
}

/// The default study grid, 2^-4 .. 2^-14.
pub fn default_grid() -> Vec<f64> {
    power_of_two_grid(4, 14)
}

/// The extended grid used for quad sweeps and plateau detection, 2^-4 .. 2^-18.
pub fn extended_grid() -> Vec<f64> {
    power_of_two_grid(4, 18)
}

pub fn validate_grid(grid: &[f64]) -> Result<(), StudyError> {
    if let Some(bad) = grid.iter().find(|dt| !(**dt > 0.0) || !dt.is_finite()) {
        return Err(StudyError::Grid(format!("dt {bad} is not positive and finite")));
    }
    if grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(StudyError::Grid("dt values must be strictly decreasing".into()));
    }
    Ok(())
}

/// One row of a study: a (method, precisions, corrections, dt) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub high: PrecisionLevel,
    pub low: PrecisionLevel,
    pub corrections: u32,
    pub dt: f64,
    /// Final-time error against the reference; +inf for diverged or failed runs.
    pub error: Quad,
    pub wall_time_s: f64,
    pub newton_iters_mean: f64,
    pub host: String,
    /// Reserved for externally measured energy.
    pub energy_j: Option<f64>,
}

impl RunRecord {
    pub fn series(&self) -> SeriesKey {
        SeriesKey { method: self.method, high: self.high, low: self.low, corrections: self.corrections }
    }
}

/// Per-run details that are not part of the CSV schema.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunDiagnostics {
    pub steps: usize,
    pub implicit_solves: usize,
    pub newton_iters_total: usize,
    pub newton_iters_max: usize,
    /// Solves that hit the iteration cap but were accepted.
    pub unconverged_solves: usize,
    /// Timer resolution exceeded 1% of the measured time.
    pub low_confidence: bool,
    pub failure: Option<String>,
}

/// Identifies one curve: method, precision pair and correction count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesKey {
    pub method: Method,
    pub high: PrecisionLevel,
    pub low: PrecisionLevel,
    pub corrections: u32,
}

impl SeriesKey {
    pub fn of(spec: &MethodSpec) -> Self {
        SeriesKey {
            method: spec.method,
            high: spec.high,
            low: spec.low,
            corrections: spec.effective_corrections(),
        }
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}/{} c{}", self.method, self.high, self.low, self.corrections)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyReport {
    pub records: Vec<RunRecord>,
    /// Parallel to `records`.
    pub diagnostics: Vec<RunDiagnostics>,
    pub slopes: BTreeMap<SeriesKey, f64>,
    pub reference_dt: f64,
    pub reference_floor: Option<Quad>,
    pub grid: Vec<f64>,
    pub norm: ErrorNorm,
}

impl StudyReport {
    pub fn series(&self, key: &SeriesKey) -> Vec<&RunRecord> {
        self.records.iter().filter(|r| r.series() == *key).collect()
    }

    /// Smallest finite error of a series.
    pub fn min_error(&self, key: &SeriesKey) -> Option<Quad> {
        self.series(key)
            .into_iter()
            .map(|r| r.error)
            .filter(|e| e.is_finite())
            .fold(None, |acc, e| Some(acc.map_or(e, |a: Quad| if e < a { e } else { a })))
    }

    pub fn failures(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.failure.is_some()).count()
    }

    /// Mean Newton iterations per implicit solve over the whole report.
    pub fn newton_mean(&self) -> f64 {
        let (iters, solves) = self
            .diagnostics
            .iter()
            .fold((0usize, 0usize), |(i, s), d| (i + d.newton_iters_total, s + d.implicit_solves));
        if solves == 0 {
            0.0
        } else {
            iters as f64 / solves as f64
        }
    }

    pub fn newton_max(&self) -> usize {
        self.diagnostics.iter().map(|d| d.newton_iters_max).max().unwrap_or(0)
    }
}

/// Least-squares slope of `ln(error)` against `ln(dt)`. Needs two points.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(dt, e)| (dt.ln(), e.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// (dt, error) points of `records` that fall inside the asymptotic window.
pub fn window_points(records: &[&RunRecord], floor: Quad) -> Vec<(f64, f64)> {
    let lower = (floor * Quad::from_f64(WINDOW_FLOOR_FACTOR)).to_f64();
    records
        .iter()
        .map(|r| (r.dt, r.error.to_f64()))
        .filter(|&(_, e)| e.is_finite() && e > lower && e < WINDOW_UPPER)
        .collect()
}

/// Predicts the step size at which a series reaches `target` error from its
/// fitted power law, then snaps it to the nearest power of two (in log scale).
pub fn dt_for_error(records: &[&RunRecord], floor: Quad, target: f64) -> Option<f64> {
    let pts = window_points(records, floor);
    let slope = fit_slope(&pts)?;
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0.ln()).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let log_dt = mx + (target.ln() - my) / slope;
    Some(2f64.powi((log_dt / std::f64::consts::LN_2).round() as i32))
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub reference_dt: f64,
    pub norm: ErrorNorm,
    pub host: String,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions { reference_dt: DEFAULT_REFERENCE_DT, norm: ErrorNorm::Euclidean, host: host_tag() }
    }
}

struct Measured {
    record: RunRecord,
    diagnostics: RunDiagnostics,
}

fn measure<S: OdeSystem>(
    spec: &MethodSpec,
    system: &S,
    dt: f64,
    reference: &[Quad],
    opts: &StudyOptions,
) -> Result<(Measured, Duration), StudyError> {
    let start = Instant::now();
    let outcome = integrate(spec, system, Quad::from_f64(dt));
    let elapsed = start.elapsed();
    let key = SeriesKey::of(spec);
    let mut record = RunRecord {
        method: key.method,
        high: key.high,
        low: key.low,
        corrections: key.corrections,
        dt,
        error: Quad::INFINITY,
        wall_time_s: elapsed.as_secs_f64(),
        newton_iters_mean: 0.0,
        host: opts.host.clone(),
        energy_j: None,
    };
    let diagnostics = match outcome {
        Ok(tr) => {
            record.error = compute_error(&tr.final_state, reference, opts.norm)?;
            record.newton_iters_mean = tr.newton_iterations_mean();
            diagnostics_of(&tr)
        }
        Err(e) => RunDiagnostics { failure: Some(e.to_string()), ..RunDiagnostics::default() },
    };
    Ok((Measured { record, diagnostics }, elapsed))
}

fn diagnostics_of(tr: &Trajectory<Quad>) -> RunDiagnostics {
    RunDiagnostics {
        steps: tr.steps,
        implicit_solves: tr.implicit_solves,
        newton_iters_total: tr.newton_iterations,
        newton_iters_max: tr.max_newton_iterations,
        unconverged_solves: tr.stage_failures,
        low_confidence: false,
        failure: None,
    }
}

fn finish_report<S: OdeSystem>(
    measured: Vec<Measured>,
    system: &S,
    grid: &[f64],
    opts: &StudyOptions,
    cache: &ReferenceCache,
) -> Result<StudyReport, StudyError> {
    let mut report = StudyReport {
        reference_dt: opts.reference_dt,
        grid: grid.to_vec(),
        norm: opts.norm,
        ..StudyReport::default()
    };
    for m in measured {
        report.records.push(m.record);
        report.diagnostics.push(m.diagnostics);
    }
    if report.records.is_empty() {
        return Ok(report);
    }
    let floor = cache.error_floor(system, opts.reference_dt, opts.norm)?;
    let keys: Vec<SeriesKey> = {
        let mut seen = Vec::new();
        for r in &report.records {
            if !seen.contains(&r.series()) {
                seen.push(r.series());
            }
        }
        seen
    };
    for key in keys {
        if let Some(slope) = fit_slope(&window_points(&report.series(&key), floor)) {
            report.slopes.insert(key, slope);
        }
    }
    report.reference_floor = Some(floor);
    Ok(report)
}

/// Runs every spec at every dt (in parallel) and measures final-time errors
/// against the cached quad reference.
pub fn run_convergence_study<S: OdeSystem>(
    specs: &[MethodSpec],
    system: &S,
    grid: &[f64],
    opts: &StudyOptions,
    cache: &ReferenceCache,
) -> Result<StudyReport, StudyError> {
    validate_grid(grid)?;
    if specs.is_empty() {
        return finish_report(Vec::new(), system, grid, opts, cache);
    }
    let reference = cache.get(system, opts.reference_dt)?;
    let jobs: Vec<(&MethodSpec, f64)> = specs.iter().flat_map(|s| grid.iter().map(move |&dt| (s, dt))).collect();
    let measured = jobs
        .par_iter()
        .map(|&(spec, dt)| measure(spec, system, dt, &reference, opts).map(|(m, _)| m))
        .collect::<Result<Vec<_>, _>>()?;
    finish_report(measured, system, grid, opts, cache)
}

/// Runs every (spec, dt) pair `repetitions` times, one at a time, keeping the
/// minimum integration wall time.
pub fn run_timing_study<S: OdeSystem>(
    specs: &[MethodSpec],
    system: &S,
    grid: &[f64],
    repetitions: usize,
    opts: &StudyOptions,
    cache: &ReferenceCache,
) -> Result<StudyReport, StudyError> {
    if repetitions < MIN_REPETITIONS {
        return Err(StudyError::Repetitions(repetitions));
    }
    validate_grid(grid)?;
    if specs.is_empty() {
        return finish_report(Vec::new(), system, grid, opts, cache);
    }
    let reference = cache.get(system, opts.reference_dt)?;
    let resolution = timer_resolution();
    let mut measured = Vec::with_capacity(specs.len() * grid.len());
    for spec in specs {
        for &dt in grid {
            let (mut best, mut best_time) = measure(spec, system, dt, &reference, opts)?;
            for _ in 1..repetitions {
                let (m, t) = measure(spec, system, dt, &reference, opts)?;
                if t < best_time {
                    best_time = t;
                    best.record.wall_time_s = m.record.wall_time_s;
                }
            }
            best.diagnostics.low_confidence = resolution.as_secs_f64() > 0.01 * best_time.as_secs_f64();
            measured.push(best);
        }
    }
    finish_report(measured, system, grid, opts, cache)
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// `MPRK_HOST_TAG` if set, otherwise `<arch>-<os>-<hostname>`.
pub fn host_tag() -> String {
    if let Ok(tag) = std::env::var(HOST_TAG_ENV) {
        if !tag.trim().is_empty() {
            return tag.trim().to_string();
        }
    }
    let hostname = std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .or_else(|| std::env::var("HOSTNAME").ok())
        .or_else(|| std::env::var("COMPUTERNAME").ok())
        .map(|h| h.trim().to_string())
        .filter(|h| !h.is_empty())
        .unwrap_or_else(|| "unknown".to_string());
    format!("{}-{}-{}", std::env::consts::ARCH, std::env::consts::OS, hostname)
}

/// Compiler that built this crate.
pub fn toolchain() -> &'static str {
    env!("MPRK_RUSTC_VERSION")
}

pub const CSV_COLUMNS: [&str; 9] =
    ["method", "high", "low", "corrections", "dt", "error", "wall_time_s", "newton_iters_mean", "host"];
pub const ENERGY_COLUMN: &str = "energy_j";

fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Writes the records as CSV. The `energy_j` column is appended only when
/// some record carries an energy value.
pub fn write_csv<W: Write>(records: &[RunRecord], out: W) -> Result<(), StudyError> {
    let with_energy = records.iter().any(|r| r.energy_j.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    if with_energy {
        header.push(ENERGY_COLUMN);
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.method.key().to_string(),
            r.high.to_string(),
            r.low.to_string(),
            r.corrections.to_string(),
            fmt_f64(r.dt),
            r.error.to_sci_string(crate::precision::ROUND_TRIP_DIGITS),
            fmt_f64(r.wall_time_s),
            fmt_f64(r.newton_iters_mean),
            r.host.clone(),
        ];
        if with_energy {
            row.push(r.energy_j.map(fmt_f64).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(report: &StudyReport, path: &Path) -> Result<(), StudyError> {
    let file = std::fs::File::create(path)?;
    write_csv(&report.records, std::io::BufWriter::new(file))
}

fn field<'a>(row: &'a csv::StringRecord, idx: usize, name: &str) -> Result<&'a str, StudyError> {
    row.get(idx).ok_or_else(|| StudyError::Parse(format!("missing column {name}")))
}

fn parse_field<T: FromStr>(row: &csv::StringRecord, idx: usize, name: &str) -> Result<T, StudyError>
where
    T::Err: fmt::Display,
{
    let text = field(row, idx, name)?;
    text.parse().map_err(|e| StudyError::Parse(format!("column {name}: {text:?}: {e}")))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<RunRecord>, StudyError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let energy = match names.as_slice() {
        [cols @ ..] if cols == CSV_COLUMNS.as_slice() => false,
        [cols @ .., last] if cols == CSV_COLUMNS.as_slice() && *last == ENERGY_COLUMN => true,
        _ => return Err(StudyError::Parse(format!("unexpected CSV header {names:?}"))),
    };
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let energy_j = if energy {
            match field(&row, 9, ENERGY_COLUMN)? {
                "" => None,
                _ => Some(parse_field(&row, 9, ENERGY_COLUMN)?),
            }
        } else {
            None
        };
        records.push(RunRecord {
            method: parse_field(&row, 0, "method")?,
            high: parse_field(&row, 1, "high")?,
            low: parse_field(&row, 2, "low")?,
            corrections: parse_field(&row, 3, "corrections")?,
            dt: parse_field(&row, 4, "dt")?,
            error: parse_field(&row, 5, "error")?,
            wall_time_s: parse_field(&row, 6, "wall_time_s")?,
            newton_iters_mean: parse_field(&row, 7, "newton_iters_mean")?,
            host: field(&row, 8, "host")?.to_string(),
            energy_j,
        });
    }
    Ok(records)
}

pub fn parse_csv(path: &Path) -> Result<Vec<RunRecord>, StudyError> {
    read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Reproducibility record written next to each CSV.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub problem: String,
    pub specs: Vec<String>,
    pub grid: Vec<f64>,
    pub reference_dt: f64,
    pub norm: ErrorNorm,
    pub newton_tolerance_factor: f64,
    pub newton_max_iterations: usize,
    pub sdirk_gamma: String,
    pub repetitions: Option<usize>,
    /// No randomness is involved; kept so the schema is explicit about it.
    pub seeds: Vec<u64>,
    pub host_tag: String,
    pub toolchain: String,
    pub slopes: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new<S: OdeSystem>(report: &StudyReport, specs: &[MethodSpec], system: &S, repetitions: Option<usize>) -> Self {
        let first = specs.first();
        Manifest {
            problem: system.cache_key(),
            specs: specs.iter().map(|s| SeriesKey::of(s).to_string()).collect(),
            grid: report.grid.clone(),
            reference_dt: report.reference_dt,
            norm: report.norm,
            newton_tolerance_factor: first.map_or(1.001, |s| s.newton.tolerance_factor),
            newton_max_iterations: first.map_or(20, |s| s.newton.max_iterations),
            sdirk_gamma: first.map_or_else(
                || crate::integrators::default_sdirk_gamma().to_string(),
                |s| s.sdirk_gamma.to_string(),
            ),
            repetitions,
            seeds: Vec::new(),
            host_tag: report.records.first().map_or_else(host_tag, |r| r.host.clone()),
            toolchain: toolchain().to_string(),
            slopes: report.slopes.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), StudyError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// What a figure CSV plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    /// Error against dt.
    Errors,
    /// Runtime against dt.
    Runtime,
    /// Error against runtime.
    Efficiency,
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub label: &'static str,
    pub kind: FigureKind,
    pub specs: Vec<MethodSpec>,
}

impl Figure {
    pub fn file_name(&self) -> String {
        format!("figure-{}.csv", self.label)
    }
}

/// The precision pairs shown in every figure.
pub const FIGURE_PRECISIONS: [(PrecisionLevel, PrecisionLevel); 6] = {
    use PrecisionLevel::{Double as D, Quad as Q, Single as S};
    [(S, S), (D, D), (D, S), (Q, Q), (Q, D), (Q, S)]
};

fn figure_specs(method: Method, corrections: &[u32]) -> Vec<MethodSpec> {
    corrections
        .iter()
        .flat_map(|&c| {
            FIGURE_PRECISIONS
                .iter()
                .map(move |&(h, l)| MethodSpec::new(method, h, l, c).expect("figure precisions are ordered"))
        })
        .collect()
}

/// The default figure set.
pub fn figure_set() -> Vec<Figure> {
    use FigureKind::*;
    use Method::*;
    let fig = |label, kind, method, corrections: &[u32]| Figure { label, kind, specs: figure_specs(method, corrections) };
    vec![
        fig("imr-errors", Errors, Imr, &[0]),
        fig("imr-1corr-errors", Errors, Imr, &[1]),
        fig("imr-2corr-runtime", Runtime, Imr, &[2]),
        fig("imr-1corr-efficiency", Efficiency, Imr, &[1]),
        fig("sdirk-errors", Errors, Sdirk, &[0, 1, 2, 3]),
        fig("sdirk-0corr-efficiency", Efficiency, Sdirk, &[0]),
        fig("sdirk-3corr-efficiency", Efficiency, Sdirk, &[3]),
        fig("4s3pa-errors", Errors, Ark4s3pA, &[0]),
        fig("4s3pa-efficiency", Efficiency, Ark4s3pA, &[0]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Dahlquist, VanDerPol};

    fn record(error: Quad) -> RunRecord {
        RunRecord {
            method: Method::Sdirk,
            high: PrecisionLevel::Quad,
            low: PrecisionLevel::Single,
            corrections: 3,
            dt: 0.0625,
            error,
            wall_time_s: 0.012345678901234567,
            newton_iters_mean: 1.5,
            host: "x86_64-linux-box".into(),
            energy_j: None,
        }
    }

    #[test]
    fn error_norms() {
        let reference = [Quad::ONE, Quad::ZERO];
        assert_eq!(compute_error(&[1.0f64, 0.0], &reference, ErrorNorm::Euclidean).unwrap(), Quad::ZERO);
        let e = compute_error(&[1.0 + 3e-4, 4e-4], &reference, ErrorNorm::Euclidean).unwrap();
        assert!((e.to_f64() - 5e-4).abs() < 1e-15);
        let m = compute_error(&[1.0 + 3e-4, 4e-4], &reference, ErrorNorm::Max).unwrap();
        assert!((m.to_f64() - 4e-4).abs() < 1e-15);
        assert!(matches!(
            compute_error(&[1.0f32], &reference, ErrorNorm::Max),
            Err(StudyError::Dimension { expected: 2, got: 1 })
        ));
        assert_eq!("max".parse::<ErrorNorm>().unwrap(), ErrorNorm::Max);
        assert!("l7".parse::<ErrorNorm>().is_err());
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = power_of_two_grid(2, 8).into_iter().map(|dt| (dt, 3.0 * dt.powi(3))).collect();
        assert!((fit_slope(&pts).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(fit_slope(&pts[..1]), None);
    }

    #[test]
    fn dt_prediction_snaps_to_power_of_two() {
        let recs: Vec<RunRecord> = power_of_two_grid(4, 10)
            .into_iter()
            .map(|dt| RunRecord { dt, error: Quad::from_f64(dt * dt), ..record(Quad::ZERO) })
            .collect();
        let refs: Vec<&RunRecord> = recs.iter().collect();
        // dt^2 = 1e-15 at dt ~ 3.2e-8 ~ 2^-25
        assert_eq!(dt_for_error(&refs, Quad::from_f64(1e-30), 1e-15), Some(2f64.powi(-25)));
    }

    #[test]
    fn window_excludes_floor_and_large_errors() {
        let recs = [
            record(Quad::from_f64(0.5)),
            record(Quad::from_f64(1e-3)),
            record(Quad::from_f64(1e-20)),
            record(Quad::INFINITY),
        ];
        let refs: Vec<&RunRecord> = recs.iter().collect();
        let pts = window_points(&refs, Quad::from_f64(1e-22));
        assert_eq!(pts, vec![(0.0625, 1e-3)]);
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&default_grid()).is_ok());
        assert_eq!(default_grid().len(), 11);
        assert_eq!(extended_grid().last(), Some(&2f64.powi(-18)));
        assert!(validate_grid(&[0.1, 0.1]).is_err());
        assert!(validate_grid(&[0.1, 0.2]).is_err());
        assert!(validate_grid(&[0.1, -0.05]).is_err());
        assert!(validate_grid(&[]).is_ok());
    }

    #[test]
    fn csv_round_trip_in_memory() {
        let third = Quad::ONE / Quad::from_f64(3.0);
        let mut recs = vec![record(third), record(Quad::INFINITY)];
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("method,high,low,corrections,dt,error,wall_time_s,newton_iters_mean,host\n"));
        assert!(text.contains("sdirk,128,32,3,"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), recs);

        recs[0].energy_j = Some(12.5);
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).lines().next().unwrap().ends_with(",energy_j"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), recs);

        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn reference_cache_reuses_entries() {
        let cache = ReferenceCache::new();
        let sys = Dahlquist::default();
        let a = cache.get(&sys, 1.0 / 64.0).unwrap();
        let b = cache.get(&sys, 1.0 / 64.0).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        cache.get(&VanDerPol::default(), 1.0 / 64.0).unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn host_tag_shape() {
        let tag = host_tag();
        assert!(!tag.is_empty());
        assert!(!toolchain().is_empty());
    }

    #[test]
    fn timing_requires_three_repetitions() {
        let err = run_timing_study(&[], &Dahlquist::default(), &[0.1], 2, &StudyOptions::default(), &ReferenceCache::new());
        assert!(matches!(err, Err(StudyError::Repetitions(2))));
    }

    #[test]
    fn figure_set_covers_labels() {
        let figs = figure_set();
        assert_eq!(figs.len(), 9);
        assert!(figs.iter().all(|f| !f.specs.is_empty()));
        assert_eq!(figs[4].specs.len(), 24);
        assert_eq!(figs[0].file_name(), "figure-imr-errors.csv");
    }
}
