//! Mixed-precision Runge-Kutta steppers and the fixed-step time loop.
//!
//! Implicit stages are solved at the low precision `L`; everything else
//! (explicit stages, corrections and the final update) runs at the high
//! precision `H`. With `L = H` every scheme reduces to its uniform-precision
//! form with the same Newton path.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::newton::{solve_stage, solve_stage_low, NewtonConfig, NewtonError, NewtonResult};
use crate::precision::{PrecisionLevel, Quad, Real};
use crate::problem::{OdeSystem, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Implicit midpoint rule with optional high-precision corrections.
    #[serde(rename = "imr")]
    Imr,
    /// Two-stage SDIRK with optional corrections on each stage.
    #[serde(rename = "sdirk")]
    Sdirk,
    /// Four-stage third-order additive method (tableau "A").
    #[serde(rename = "4s3pa")]
    Ark4s3pA,
    /// Classical explicit fourth-order Runge-Kutta.
    #[serde(rename = "rk4")]
    Rk4,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Imr, Method::Sdirk, Method::Ark4s3pA, Method::Rk4];

    pub fn key(self) -> &'static str {
        match self {
            Method::Imr => "imr",
            Method::Sdirk => "sdirk",
            Method::Ark4s3pA => "4s3pa",
            Method::Rk4 => "rk4",
        }
    }

    pub fn is_implicit(self) -> bool {
        self != Method::Rk4
    }

    /// Classical order of the underlying scheme.
    pub fn order(self) -> u32 {
        match self {
            Method::Imr => 2,
            Method::Sdirk | Method::Ark4s3pA => 3,
            Method::Rk4 => 4,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown method {0:?}; expected one of: imr, sdirk, 4s3pa, rk4")]
pub struct UnknownMethod(pub String);

impl FromStr for Method {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Method, UnknownMethod> {
        Method::ALL
            .into_iter()
            .find(|m| m.key() == s.to_ascii_lowercase())
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

/// Coefficients of the 4s3pA method. `a*` multiply the high-precision F,
/// `ae*` the low-precision F.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArkTableau {
    pub a21: Quad,
    pub a31: Quad,
    pub a32: Quad,
    pub a41: Quad,
    pub a42: Quad,
    pub a43: Quad,
    pub ae11: Quad,
    pub ae31: Quad,
    pub ae33: Quad,
}

impl Default for ArkTableau {
    /// The published 15-digit constants, parsed directly at quad precision.
    fn default() -> Self {
        let p = |s: &str| s.parse::<Quad>().expect("tableau literal");
        ArkTableau {
            a21: p("0.211324865405187"),
            a31: p("0.709495523817170"),
            a32: p("-0.865314250619423"),
            a41: p("0.705123240545107"),
            a42: p("0.943370088535775"),
            a43: p("-0.859818194486069"),
            ae11: p("0.788675134594813"),
            ae31: p("0.051944240459852"),
            ae33: p("0.788675134594813"),
        }
    }
}

/// (3 + sqrt(3)) / 6, the diagonal that makes the two-stage SDIRK third order.
pub fn default_sdirk_gamma() -> Quad {
    let three = Quad::from_f64(3.0);
    (three + three.sqrt()) / Quad::from_f64(6.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub method: Method,
    pub high: PrecisionLevel,
    pub low: PrecisionLevel,
    /// Explicit correction passes per implicit stage (IMR and SDIRK only).
    pub corrections: u32,
    pub sdirk_gamma: Quad,
    pub ark_tableau: ArkTableau,
    pub newton: NewtonConfig,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("low precision {low} is finer than high precision {high}")]
    LowFinerThanHigh { high: PrecisionLevel, low: PrecisionLevel },
    #[error("stepper precisions ({high}/{low}) do not match the method spec ({spec_high}/{spec_low})")]
    TypeMismatch {
        high: PrecisionLevel,
        low: PrecisionLevel,
        spec_high: PrecisionLevel,
        spec_low: PrecisionLevel,
    },
    #[error("invalid Newton configuration: {0}")]
    Newton(String),
}

impl MethodSpec {
    pub fn new(
        method: Method,
        high: PrecisionLevel,
        low: PrecisionLevel,
        corrections: u32,
    ) -> Result<MethodSpec, SpecError> {
        if !high.at_least(low) {
            return Err(SpecError::LowFinerThanHigh { high, low });
        }
        // explicit RK4 has no implicit stage, so it runs uniformly at `high`
        let low = if method == Method::Rk4 { high } else { low };
        Ok(MethodSpec {
            method,
            high,
            low,
            corrections,
            sdirk_gamma: default_sdirk_gamma(),
            ark_tableau: ArkTableau::default(),
            newton: NewtonConfig::default(),
        })
    }

    pub fn uniform(method: Method, level: PrecisionLevel, corrections: u32) -> MethodSpec {
        MethodSpec::new(method, level, level, corrections).expect("uniform precision is valid")
    }

    pub fn with_newton(mut self, newton: NewtonConfig) -> Result<MethodSpec, SpecError> {
        if !(newton.tolerance_factor > 0.0) || newton.max_iterations == 0 {
            return Err(SpecError::Newton(format!("{newton:?}")));
        }
        self.newton = newton;
        Ok(self)
    }

    pub fn with_sdirk_gamma(mut self, gamma: Quad) -> MethodSpec {
        self.sdirk_gamma = gamma;
        self
    }

    /// Corrections that actually apply to this method.
    pub fn effective_corrections(&self) -> u32 {
        match self.method {
            Method::Imr | Method::Sdirk => self.corrections,
            Method::Ark4s3pA | Method::Rk4 => 0,
        }
    }

    /// Short label such as `imr 128/64 c2`.
    pub fn label(&self) -> String {
        format!("{} {}/{} c{}", self.method, self.high, self.low, self.effective_corrections())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<T> {
    pub next_state: StateVector<T>,
    pub newton_iterations_total: usize,
    pub implicit_solves: usize,
    pub max_newton_iterations: usize,
    /// Stage solves that stopped at the iteration cap with a residual within
    /// the accepted 100x tolerance band.
    pub stage_failures: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepError {
    #[error("stage {stage}: {source}")]
    Newton {
        stage: usize,
        #[source]
        source: NewtonError,
    },
    #[error("stage {stage}: Newton stalled with residual {residual:e} (tolerance {tolerance:e})")]
    NotConverged { stage: usize, residual: f64, tolerance: f64 },
}

/// A configured stepper for one method at fixed high/low precision types.
#[derive(Debug, Clone)]
pub struct Stepper<H, L> {
    spec: MethodSpec,
    half: H,
    gamma: H,
    one_minus_two_gamma: H,
    tab: [H; 9],
    _low: std::marker::PhantomData<L>,
}

struct StageStats {
    iterations: usize,
    solves: usize,
    max_iterations: usize,
    unconverged: usize,
}

impl StageStats {
    fn new() -> Self {
        StageStats { iterations: 0, solves: 0, max_iterations: 0, unconverged: 0 }
    }

    fn record<T: Real>(&mut self, stage: usize, res: &NewtonResult<T>) -> Result<(), StepError> {
        self.iterations += res.iterations;
        self.solves += 1;
        self.max_iterations = self.max_iterations.max(res.iterations);
        if !res.converged {
            let limit = res.tolerance * T::from_f64(100.0);
            if !(res.residual_norm <= limit) {
                return Err(StepError::NotConverged {
                    stage,
                    residual: res.residual_norm.to_f64(),
                    tolerance: res.tolerance.to_f64(),
                });
            }
            self.unconverged += 1;
        }
        Ok(())
    }

    fn finish<T>(self, next_state: StateVector<T>) -> StepResult<T> {
        StepResult {
            next_state,
            newton_iterations_total: self.iterations,
            implicit_solves: self.solves,
            max_newton_iterations: self.max_iterations,
            stage_failures: self.unconverged,
        }
    }
}

fn newton_err(stage: usize) -> impl Fn(NewtonError) -> StepError {
    move |source| StepError::Newton { stage, source }
}

impl<H: Real, L: Real> Stepper<H, L> {
    pub fn new(spec: &MethodSpec) -> Result<Self, SpecError> {
        if H::LEVEL != spec.high || L::LEVEL != spec.low {
            return Err(SpecError::TypeMismatch {
                high: H::LEVEL,
                low: L::LEVEL,
                spec_high: spec.high,
                spec_low: spec.low,
            });
        }
        let t = &spec.ark_tableau;
        let gamma = H::from_quad(spec.sdirk_gamma);
        Ok(Stepper {
            spec: spec.clone(),
            half: H::from_f64(0.5),
            gamma,
            one_minus_two_gamma: H::ONE - (gamma + gamma),
            tab: [t.a21, t.a31, t.a32, t.a41, t.a42, t.a43, t.ae11, t.ae31, t.ae33]
                .map(H::from_quad),
            _low: std::marker::PhantomData,
        })
    }

    pub fn spec(&self) -> &MethodSpec {
        &self.spec
    }

    pub fn step<S: OdeSystem>(&self, system: &S, t: H, u: &[H], dt: H) -> Result<StepResult<H>, StepError> {
        match self.spec.method {
            Method::Imr => self.step_imr(system, t, u, dt),
            Method::Sdirk => self.step_sdirk(system, t, u, dt),
            Method::Ark4s3pA => self.step_4s3pa(system, t, u, dt),
            Method::Rk4 => Ok(step_rk4(system, t, u, dt)),
        }
    }

    fn step_imr<S: OdeSystem>(&self, system: &S, t: H, u: &[H], dt: H) -> Result<StepResult<H>, StepError> {
        let n = u.len();
        let mut stats = StageStats::new();
        let h = self.half * dt;
        let tc = t + h;
        let stage = solve_stage::<H, L, S>(system, tc, u, None, h, &self.spec.newton)
            .map_err(newton_err(1))?;
        stats.record(1, &stage)?;
        let mut y = stage.solution;
        let mut f = StateVector::from_elem(H::ZERO, n);
        system.rhs(tc, &y, &mut f);
        for _ in 0..self.spec.corrections {
            for i in 0..n {
                y[i] = u[i] + h * f[i];
            }
            system.rhs(tc, &y, &mut f);
        }
        let next = (0..n).map(|i| u[i] + dt * f[i]).collect();
        Ok(stats.finish(next))
    }

    fn step_sdirk<S: OdeSystem>(&self, system: &S, t: H, u: &[H], dt: H) -> Result<StepResult<H>, StepError> {
        let n = u.len();
        let corrections = self.spec.corrections;
        let newton = &self.spec.newton;
        let mut stats = StageStats::new();
        let gdt = self.gamma * dt;
        let t1 = t + gdt;

        let stage1 = solve_stage::<H, L, S>(system, t1, u, None, gdt, newton).map_err(newton_err(1))?;
        stats.record(1, &stage1)?;
        let mut y1 = stage1.solution;
        let mut f1 = StateVector::from_elem(H::ZERO, n);
        system.rhs(t1, &y1, &mut f1);
        for _ in 0..corrections {
            for i in 0..n {
                y1[i] = u[i] + gdt * f1[i];
            }
            system.rhs(t1, &y1, &mut f1);
        }

        let a21dt = self.one_minus_two_gamma * dt;
        let t2 = t + (a21dt + gdt);
        let explicit: StateVector<H> = f1.iter().map(|&fi| a21dt * fi).collect();
        let stage2 =
            solve_stage::<H, L, S>(system, t2, u, Some(&explicit), gdt, newton).map_err(newton_err(2))?;
        stats.record(2, &stage2)?;
        let mut y2 = stage2.solution;
        let mut f2 = StateVector::from_elem(H::ZERO, n);
        system.rhs(t2, &y2, &mut f2);
        for _ in 0..corrections {
            for i in 0..n {
                y2[i] = u[i] + explicit[i] + gdt * f2[i];
            }
            system.rhs(t2, &y2, &mut f2);
        }

        let h = self.half * dt;
        let next = (0..n).map(|i| u[i] + h * f1[i] + h * f2[i]).collect();
        Ok(stats.finish(next))
    }

    fn step_4s3pa<S: OdeSystem>(&self, system: &S, t: H, u: &[H], dt: H) -> Result<StepResult<H>, StepError> {
        let n = u.len();
        let newton = &self.spec.newton;
        let [a21, a31, a32, a41, a42, a43, ae11, ae31, ae33] = self.tab;
        let mut stats = StageStats::new();

        // stage 1: implicit, low precision
        let c11 = dt * ae11;
        let t1 = t + c11;
        let base_low: StateVector<L> = u.iter().map(|&x| x.cast()).collect();
        let stage1 = solve_stage_low::<L, S>(system, t1.cast(), &base_low, None, c11.cast(), newton)
            .map_err(newton_err(1))?;
        stats.record(1, &stage1)?;
        let y1_low = stage1.solution;
        let y1: StateVector<H> = y1_low.iter().map(|&x| x.cast()).collect();
        let mut f1 = StateVector::from_elem(H::ZERO, n);
        system.rhs(t1, &y1, &mut f1);

        // stage 2: explicit, high precision
        let c21 = dt * a21;
        let t2 = t + c21;
        let y2: StateVector<H> = (0..n).map(|i| u[i] + c21 * f1[i]).collect();
        let mut f2 = StateVector::from_elem(H::ZERO, n);
        system.rhs(t2, &y2, &mut f2);

        // stage 3: high-precision explicit part, low-precision F(y1) term, implicit low solve
        let t3 = t + dt * (a31 + a32 + ae31 + ae33);
        let explicit_high: StateVector<H> = (0..n).map(|i| dt * (a31 * f1[i] + a32 * f2[i])).collect();
        let t1_low: L = t1.cast();
        let mut f1_low = StateVector::from_elem(L::ZERO, n);
        system.rhs(t1_low, &y1_low, &mut f1_low);
        let c31_low: L = (dt * ae31).cast();
        let explicit_low: StateVector<L> =
            (0..n).map(|i| explicit_high[i].cast::<L>() + c31_low * f1_low[i]).collect();
        let stage3 = solve_stage_low::<L, S>(
            system,
            t3.cast(),
            &base_low,
            Some(&explicit_low),
            (dt * ae33).cast(),
            newton,
        )
        .map_err(newton_err(3))?;
        stats.record(3, &stage3)?;
        let y3: StateVector<H> = stage3.solution.iter().map(|&x| x.cast()).collect();
        let mut f3 = StateVector::from_elem(H::ZERO, n);
        system.rhs(t3, &y3, &mut f3);

        // stage 4: explicit, high precision
        let t4 = t + dt * (a41 + a42 + a43);
        let y4: StateVector<H> =
            (0..n).map(|i| u[i] + dt * (a41 * f1[i] + a42 * f2[i] + a43 * f3[i])).collect();
        let mut f4 = StateVector::from_elem(H::ZERO, n);
        system.rhs(t4, &y4, &mut f4);

        let h = self.half * dt;
        let next = (0..n).map(|i| u[i] + h * (f2[i] + f4[i])).collect();
        Ok(stats.finish(next))
    }
}

/// Classical RK4 with every operation at the precision of `T`.
pub fn step_rk4<T: Real, S: OdeSystem>(system: &S, t: T, u: &[T], dt: T) -> StepResult<T> {
    let n = u.len();
    let half = T::from_f64(0.5) * dt;
    let two = T::from_f64(2.0);
    let sixth = dt / T::from_f64(6.0);
    let mut k1 = StateVector::from_elem(T::ZERO, n);
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    system.rhs(t, u, &mut k1);
    for i in 0..n {
        tmp[i] = u[i] + half * k1[i];
    }
    system.rhs(t + half, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = u[i] + half * k2[i];
    }
    system.rhs(t + half, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = u[i] + dt * k3[i];
    }
    system.rhs(t + dt, &tmp, &mut k4);
    let next = (0..n).map(|i| u[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i])).collect();
    StepResult {
        next_state: next,
        newton_iterations_total: 0,
        implicit_solves: 0,
        max_newton_iterations: 0,
        stage_failures: 0,
    }
}

pub fn step_mp_imr<H: Real, L: Real, S: OdeSystem>(
    spec: &MethodSpec,
    system: &S,
    t: H,
    u: &[H],
    dt: H,
) -> Result<StepResult<H>, IntegrateError> {
    checked_step::<H, L, S>(spec, Method::Imr, system, t, u, dt)
}

pub fn step_mp_sdirk<H: Real, L: Real, S: OdeSystem>(
    spec: &MethodSpec,
    system: &S,
    t: H,
    u: &[H],
    dt: H,
) -> Result<StepResult<H>, IntegrateError> {
    checked_step::<H, L, S>(spec, Method::Sdirk, system, t, u, dt)
}

pub fn step_mp_4s3pa<H: Real, L: Real, S: OdeSystem>(
    spec: &MethodSpec,
    system: &S,
    t: H,
    u: &[H],
    dt: H,
) -> Result<StepResult<H>, IntegrateError> {
    checked_step::<H, L, S>(spec, Method::Ark4s3pA, system, t, u, dt)
}

fn checked_step<H: Real, L: Real, S: OdeSystem>(
    spec: &MethodSpec,
    method: Method,
    system: &S,
    t: H,
    u: &[H],
    dt: H,
) -> Result<StepResult<H>, IntegrateError> {
    if spec.method != method {
        return Err(IntegrateError::InvalidStep(format!(
            "spec is for {}, not {method}",
            spec.method
        )));
    }
    let stepper = Stepper::<H, L>::new(spec)?;
    stepper
        .step(system, t, u, dt)
        .map_err(|source| IntegrateError::Stage { step: 0, t: t.to_f64(), source })
}

/// Outcome of a fixed-step integration over the system's time span.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub final_state: StateVector<T>,
    pub t_final: T,
    pub steps: usize,
    pub newton_iterations: usize,
    pub implicit_solves: usize,
    pub max_newton_iterations: usize,
    pub stage_failures: usize,
}

impl<T: Real> Trajectory<T> {
    pub fn newton_iterations_mean(&self) -> f64 {
        if self.implicit_solves == 0 {
            0.0
        } else {
            self.newton_iterations as f64 / self.implicit_solves as f64
        }
    }

    pub fn to_quad(&self) -> Trajectory<Quad> {
        Trajectory {
            final_state: self.final_state.iter().map(|x| x.to_quad()).collect(),
            t_final: self.t_final.to_quad(),
            steps: self.steps,
            newton_iterations: self.newton_iterations,
            implicit_solves: self.implicit_solves,
            max_newton_iterations: self.max_newton_iterations,
            stage_failures: self.stage_failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntegrateError {
    #[error("step {step} at t = {t}: {source}")]
    Stage {
        step: usize,
        t: f64,
        #[source]
        source: StepError,
    },
    #[error("solution diverged at step {step} (t = {t})")]
    Diverged { step: usize, t: f64 },
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// States with an infinity norm beyond this are treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e10;

/// Step count and the number of uniform steps of size `dt` before the last
/// (clamped) one.
pub fn step_count(span: Quad, dt: Quad) -> Result<usize, IntegrateError> {
    if !(dt > Quad::ZERO) || !dt.is_finite() {
        return Err(IntegrateError::InvalidStep(format!("dt must be positive and finite, got {dt}")));
    }
    if span.is_zero() {
        return Ok(0);
    }
    let ratio = (span / dt).to_f64();
    let nearest = ratio.round();
    let steps = if (ratio - nearest).abs() <= 1e-12 * ratio.max(1.0) {
        nearest
    } else {
        ratio.ceil()
    };
    if steps > 1e12 {
        return Err(IntegrateError::InvalidStep(format!("{steps} steps is too many")));
    }
    Ok((steps as usize).max(1))
}

/// Integrates from the system's initial state over its time span with fixed
/// step `dt`; the final step is clamped so the end time is hit exactly.
pub fn integrate_with<H: Real, L: Real, S: OdeSystem>(
    spec: &MethodSpec,
    system: &S,
    dt: Quad,
) -> Result<Trajectory<H>, IntegrateError> {
    let stepper = Stepper::<H, L>::new(spec)?;
    let (t0, t_end) = system.t_span();
    let (t0q, t_endq) = (Quad::from_f64(t0), Quad::from_f64(t_end));
    let steps = step_count(t_endq - t0q, dt)?;
    let t0h: H = t0q.cast();
    let t_endh: H = t_endq.cast();
    let dth: H = dt.cast();
    let limit = H::from_f64(DIVERGENCE_LIMIT);

    let mut u: StateVector<H> = system.initial_state();
    let mut t = t0h;
    let mut out = Trajectory {
        final_state: StateVector::new(),
        t_final: t0h,
        steps,
        newton_iterations: 0,
        implicit_solves: 0,
        max_newton_iterations: 0,
        stage_failures: 0,
    };
    for k in 0..steps {
        let h = if k + 1 == steps { t_endh - t } else { dth };
        let res = stepper
            .step(system, t, &u, h)
            .map_err(|source| IntegrateError::Stage { step: k, t: t.to_f64(), source })?;
        out.newton_iterations += res.newton_iterations_total;
        out.implicit_solves += res.implicit_solves;
        out.max_newton_iterations = out.max_newton_iterations.max(res.max_newton_iterations);
        out.stage_failures += res.stage_failures;
        u = res.next_state;
        t = if k + 1 == steps { t_endh } else { t0h + H::from_f64((k + 1) as f64) * dth };
        if u.iter().any(|x| !(x.abs() <= limit)) {
            return Err(IntegrateError::Diverged { step: k, t: t.to_f64() });
        }
    }
    out.final_state = u;
    out.t_final = t;
    Ok(out)
}

/// Runs `integrate_with` for the precision pair named in `spec`, returning
/// the trajectory widened to quad.
pub fn integrate<S: OdeSystem>(spec: &MethodSpec, system: &S, dt: Quad) -> Result<Trajectory<Quad>, IntegrateError> {
    use PrecisionLevel::{Double as D, Quad as Q, Single as F};
    Ok(match (spec.high, spec.low) {
        (F, F) => integrate_with::<f32, f32, S>(spec, system, dt)?.to_quad(),
        (D, D) => integrate_with::<f64, f64, S>(spec, system, dt)?.to_quad(),
        (D, F) => integrate_with::<f64, f32, S>(spec, system, dt)?.to_quad(),
        (Q, Q) => integrate_with::<Quad, Quad, S>(spec, system, dt)?,
        (Q, D) => integrate_with::<Quad, f64, S>(spec, system, dt)?,
        (Q, F) => integrate_with::<Quad, f32, S>(spec, system, dt)?,
        (high, low) => return Err(SpecError::LowFinerThanHigh { high, low }.into()),
    })
}
