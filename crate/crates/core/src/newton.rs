//! Newton-Raphson for the implicit stage equations.
//!
//! A stage equation has the form `y = base + explicit + coeff * F(t, y)`. Mixed
//! precision stages are solved entirely at the low precision: inputs are cast
//! down, every iterate lives in the low-precision type, and only the converged
//! solution is cast back up.

use serde::{Deserialize, Serialize};

use crate::linalg::{lu_solve, LinalgError, Matrix};
use crate::precision::Real;
use crate::problem::{OdeSystem, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Tolerance in units of the working precision's machine epsilon.
    pub tolerance_factor: f64,
    pub max_iterations: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { tolerance_factor: 1.001, max_iterations: 20 }
    }
}

impl NewtonConfig {
    /// Residual bound at precision `T`: `tolerance_factor * eps(T)`.
    pub fn tolerance<T: Real>(&self) -> T {
        T::from_f64(self.tolerance_factor) * T::epsilon()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult<T> {
    pub solution: StateVector<T>,
    /// Newton updates applied; zero when the guess already satisfied the tolerance.
    pub iterations: usize,
    pub residual_norm: T,
    /// The bound the residual was tested against.
    pub tolerance: T,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NewtonError {
    #[error("singular Jacobian at Newton iteration {iteration}")]
    Singular { iteration: usize },
    #[error("non-finite Newton iterate at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[inline]
fn inf_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::ZERO, |acc, x| {
        let a = x.abs();
        // NaN must survive the fold so divergence is detected
        if a > acc || !a.is_finite() {
            a
        } else {
            acc
        }
    })
}

/// Iterates `y <- y - J(y)^-1 r(y)` until `||r(y)||_inf <= tol * max(1, ||y||_inf)`.
///
/// The tolerance is relative to the iterate's magnitude: near a solution the
/// computed residual of a state of size |y| is itself a difference of numbers
/// of size |y| and cannot drop below one ulp of |y|.
pub fn newton_solve<T, R, J>(
    mut residual: R,
    mut jacobian: J,
    guess: &[T],
    config: &NewtonConfig,
) -> Result<NewtonResult<T>, NewtonError>
where
    T: Real,
    R: FnMut(&[T], &mut [T]),
    J: FnMut(&[T], &mut Matrix<T>),
{
    let n = guess.len();
    let tol = config.tolerance::<T>();
    let mut y: StateVector<T> = guess.into();
    let mut r: StateVector<T> = StateVector::from_elem(T::ZERO, n);
    let mut jac = Matrix::zeros(n);
    let mut iterations = 0;
    residual(&y, &mut r);
    loop {
        let norm = inf_norm(&r);
        let scale = inf_norm(&y);
        if !norm.is_finite() || !scale.is_finite() {
            return Err(NewtonError::Divergence { iteration: iterations });
        }
        let bound = tol * T::ONE.max_of(scale);
        if norm <= bound || iterations >= config.max_iterations {
            return Ok(NewtonResult {
                solution: y,
                iterations,
                residual_norm: norm,
                tolerance: bound,
                converged: norm <= bound,
            });
        }
        jacobian(&y, &mut jac);
        lu_solve(&mut jac, &mut r).map_err(|e| match e {
            LinalgError::Singular { .. } => NewtonError::Singular { iteration: iterations },
            LinalgError::Dimension { .. } => NewtonError::Dimension(e.to_string()),
        })?;
        for (yi, di) in y.iter_mut().zip(r.iter()) {
            *yi -= *di;
        }
        iterations += 1;
        residual(&y, &mut r);
    }
}

/// Solves `y = base + explicit + coeff * F(t, y)` with every operation at
/// precision `L`. The initial guess is `base`.
pub fn solve_stage_low<L: Real, S: OdeSystem>(
    system: &S,
    t: L,
    base: &[L],
    explicit_part: Option<&[L]>,
    coeff: L,
    config: &NewtonConfig,
) -> Result<NewtonResult<L>, NewtonError> {
    let n = system.dimension();
    if base.len() != n || explicit_part.is_some_and(|e| e.len() != n) {
        return Err(NewtonError::Dimension(format!(
            "stage inputs do not match system dimension {n}"
        )));
    }
    let constant: StateVector<L> = match explicit_part {
        Some(e) => base.iter().zip(e).map(|(&b, &e)| b + e).collect(),
        None => base.into(),
    };
    let mut f: StateVector<L> = StateVector::from_elem(L::ZERO, n);
    let residual = |y: &[L], r: &mut [L]| {
        system.rhs(t, y, &mut f);
        for i in 0..n {
            r[i] = y[i] - constant[i] - coeff * f[i];
        }
    };
    let jacobian = |y: &[L], jac: &mut Matrix<L>| {
        system.jacobian(t, y, jac);
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { L::ONE } else { L::ZERO };
                jac[(i, j)] = delta - coeff * jac[(i, j)];
            }
        }
    };
    newton_solve(residual, jacobian, base, config)
}

/// Mixed-precision stage solve: casts `base`, `explicit_part`, `coeff` and `t`
/// down to `L`, solves there, and casts the solution back up to `H`.
pub fn solve_stage<H: Real, L: Real, S: OdeSystem>(
    system: &S,
    t: H,
    base: &[H],
    explicit_part: Option<&[H]>,
    coeff: H,
    config: &NewtonConfig,
) -> Result<NewtonResult<H>, NewtonError> {
    let base_low: StateVector<L> = base.iter().map(|&x| x.cast()).collect();
    let explicit_low: Option<StateVector<L>> =
        explicit_part.map(|e| e.iter().map(|&x| x.cast()).collect());
    let low = solve_stage_low::<L, S>(
        system,
        t.cast(),
        &base_low,
        explicit_low.as_deref(),
        coeff.cast(),
        config,
    )?;
    Ok(NewtonResult {
        solution: low.solution.iter().map(|&x| x.cast()).collect(),
        iterations: low.iterations,
        residual_norm: low.residual_norm.cast(),
        tolerance: low.tolerance.cast(),
        converged: low.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::Quad;
    use crate::problem::{Dahlquist, VanDerPol};

    #[test]
    fn default_policy() {
        let c = NewtonConfig::default();
        assert_eq!(c.max_iterations, 20);
        assert_eq!(c.tolerance::<f64>(), 1.001 * f64::EPSILON);
        assert_eq!(c.tolerance::<f32>(), 1.001f32 * f32::EPSILON);
    }

    #[test]
    fn linear_residual_converges_in_one_step() {
        let res = newton_solve(
            |y: &[f64], r: &mut [f64]| r[0] = y[0] - 1.0,
            |_y: &[f64], j: &mut Matrix<f64>| j[(0, 0)] = 1.0,
            &[0.0],
            &NewtonConfig::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.solution[0], 1.0);
    }

    #[test]
    fn implicit_midpoint_dahlquist_stage() {
        let sys = Dahlquist::default();
        let cfg = NewtonConfig::default();
        let res = solve_stage_low(&sys, 0.0, &[1.0f64], None, 0.05, &cfg).unwrap();
        assert!(res.converged);
        assert!((res.solution[0] - 1.0 / 1.05).abs() <= 2.0 * f64::EPSILON);
        let up = solve_stage::<Quad, f64, _>(
            &sys,
            Quad::ZERO,
            &[Quad::ONE],
            None,
            Quad::from_f64(0.05),
            &cfg,
        )
        .unwrap();
        assert_eq!(up.solution[0], Quad::from_f64(res.solution[0]));
    }

    #[test]
    fn vdp_stage_double_converges_quickly() {
        let sys = VanDerPol::default();
        let cfg = NewtonConfig::default();
        let res = solve_stage_low(&sys, 0.0, &[2.0f64, 0.0], None, 0.025, &cfg).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 6, "{} iterations", res.iterations);
        // certificate: substitute back into the stage equation
        let mut f = [0.0; 2];
        sys.rhs(0.0, &res.solution, &mut f);
        for i in 0..2 {
            let r = res.solution[i] - [2.0, 0.0][i] - 0.025 * f[i];
            assert!(r.abs() <= res.tolerance);
        }
    }

    #[test]
    fn degenerate_mixing_is_bitwise() {
        let sys = VanDerPol::default();
        let cfg = NewtonConfig::default();
        let base = [1.7f64, -0.3];
        let explicit = [0.01f64, 0.02];
        let mixed = solve_stage::<f64, f64, _>(&sys, 0.0, &base, Some(&explicit), 0.0125, &cfg).unwrap();
        let direct = solve_stage_low(&sys, 0.0, &base, Some(&explicit), 0.0125, &cfg).unwrap();
        assert_eq!(mixed, direct);
    }

    #[test]
    fn single_stage_tracks_double() {
        let sys = VanDerPol::default();
        let cfg = NewtonConfig::default();
        let base = [2.0f64, 0.0];
        let single = solve_stage::<f64, f32, _>(&sys, 0.0, &base, None, 0.0125, &cfg).unwrap();
        let double = solve_stage::<f64, f64, _>(&sys, 0.0, &base, None, 0.0125, &cfg).unwrap();
        assert!(single.converged);
        for i in 0..2 {
            assert!((single.solution[i] - double.solution[i]).abs() <= 1e-6);
            // the up-cast solution is exactly a binary32 value
            assert_eq!(single.solution[i] as f32 as f64, single.solution[i]);
        }
    }

    #[test]
    fn reports_non_convergence_and_errors() {
        let cfg = NewtonConfig { tolerance_factor: 1.001, max_iterations: 3 };
        // r(y) = y^2 + 1 has no real root; Newton wanders without converging
        let res = newton_solve(
            |y: &[f64], r: &mut [f64]| r[0] = y[0] * y[0] + 1.0,
            |y: &[f64], j: &mut Matrix<f64>| j[(0, 0)] = 2.0 * y[0],
            &[0.5],
            &cfg,
        )
        .unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 3);

        let singular = newton_solve(
            |y: &[f64], r: &mut [f64]| r[0] = y[0] * y[0] - 1.0,
            |y: &[f64], j: &mut Matrix<f64>| j[(0, 0)] = 2.0 * y[0],
            &[0.0],
            &cfg,
        );
        assert_eq!(singular, Err(NewtonError::Singular { iteration: 0 }));

        let nan = newton_solve(
            |_y: &[f64], r: &mut [f64]| r[0] = f64::NAN,
            |_y: &[f64], j: &mut Matrix<f64>| j[(0, 0)] = 1.0,
            &[0.0],
            &cfg,
        );
        assert_eq!(nan, Err(NewtonError::Divergence { iteration: 0 }));
    }

    #[test]
    fn rejects_wrong_dimension() {
        let sys = VanDerPol::default();
        let err = solve_stage_low(&sys, 0.0, &[1.0f64], None, 0.1, &NewtonConfig::default());
        assert!(matches!(err, Err(NewtonError::Dimension(_))));
    }
}
