//! ODE systems under test, evaluable at any precision with analytic Jacobians.

use std::fmt;
use std::str::FromStr;

use smallvec::SmallVec;

use crate::linalg::Matrix;
use crate::precision::Real;

/// An ODE state. The precision level is the element type.
pub type StateVector<T> = SmallVec<[T; 4]>;

/// An autonomous or non-autonomous system y' = F(t, y).
///
/// `rhs` and `jacobian` must perform every operation at the precision of `T`.
pub trait OdeSystem: Send + Sync {
    fn key(&self) -> &str;
    fn dimension(&self) -> usize;
    fn rhs<T: Real>(&self, t: T, y: &[T], dydt: &mut [T]);
    fn jacobian<T: Real>(&self, t: T, y: &[T], jac: &mut Matrix<T>);
    /// Initial state, exactly representable at every precision level.
    fn initial_values(&self) -> Vec<f64>;
    fn t_span(&self) -> (f64, f64);

    /// Model parameters that distinguish instances sharing a key.
    fn parameters(&self) -> Vec<f64> {
        Vec::new()
    }

    /// Identity of the full problem instance, for caching.
    fn cache_key(&self) -> String {
        let bits = |v: &[f64]| v.iter().map(|x| format!("{:x}", x.to_bits())).collect::<Vec<_>>().join(",");
        let (t0, t1) = self.t_span();
        format!("{}[{}][{}][{}]", self.key(), bits(&self.parameters()), bits(&self.initial_values()), bits(&[t0, t1]))
    }

    fn initial_state<T: Real>(&self) -> StateVector<T> {
        self.initial_values().into_iter().map(T::from_f64).collect()
    }
}

/// Van der Pol oscillator, y1' = y2, y2' = mu*y2*(1 - y1^2) - y1.
#[derive(Debug, Clone, PartialEq)]
pub struct VanDerPol {
    pub mu: f64,
    pub initial: [f64; 2],
    pub t_span: (f64, f64),
}

impl Default for VanDerPol {
    fn default() -> Self {
        VanDerPol { mu: 1.0, initial: [2.0, 0.0], t_span: (0.0, 1.0) }
    }
}

/// Van der Pol right-hand side with mu = 1.
pub fn vdp_rhs<T: Real>(_t: T, y: &[T]) -> StateVector<T> {
    let mut out = StateVector::from_elem(T::ZERO, 2);
    vdp_rhs_into(T::ONE, y, &mut out);
    out
}

/// Van der Pol Jacobian with mu = 1.
pub fn vdp_jacobian<T: Real>(_t: T, y: &[T]) -> Matrix<T> {
    let mut jac = Matrix::zeros(2);
    vdp_jacobian_into(T::ONE, y, &mut jac);
    jac
}

#[inline]
fn vdp_rhs_into<T: Real>(mu: T, y: &[T], out: &mut [T]) {
    let (y1, y2) = (y[0], y[1]);
    out[0] = y2;
    out[1] = mu * (y2 * (T::ONE - y1 * y1)) - y1;
}

#[inline]
fn vdp_jacobian_into<T: Real>(mu: T, y: &[T], jac: &mut Matrix<T>) {
    let (y1, y2) = (y[0], y[1]);
    let two = T::ONE + T::ONE;
    jac[(0, 0)] = T::ZERO;
    jac[(0, 1)] = T::ONE;
    jac[(1, 0)] = mu * (-(two * y1 * y2)) - T::ONE;
    jac[(1, 1)] = mu * (T::ONE - y1 * y1);
}

impl OdeSystem for VanDerPol {
    fn key(&self) -> &str {
        "vdp"
    }

    fn dimension(&self) -> usize {
        2
    }

    #[inline]
    fn rhs<T: Real>(&self, _t: T, y: &[T], dydt: &mut [T]) {
        vdp_rhs_into(T::from_f64(self.mu), y, dydt);
    }

    #[inline]
    fn jacobian<T: Real>(&self, _t: T, y: &[T], jac: &mut Matrix<T>) {
        vdp_jacobian_into(T::from_f64(self.mu), y, jac);
    }

    fn initial_values(&self) -> Vec<f64> {
        self.initial.to_vec()
    }

    fn parameters(&self) -> Vec<f64> {
        vec![self.mu]
    }

    fn t_span(&self) -> (f64, f64) {
        self.t_span
    }
}

/// Linear scalar test equation y' = lambda*y.
#[derive(Debug, Clone, PartialEq)]
pub struct Dahlquist {
    pub lambda: f64,
    pub initial: f64,
    pub t_span: (f64, f64),
}

impl Default for Dahlquist {
    fn default() -> Self {
        Dahlquist { lambda: -1.0, initial: 1.0, t_span: (0.0, 1.0) }
    }
}

pub fn dahlquist_rhs<T: Real>(_t: T, y: &[T], lambda: T) -> StateVector<T> {
    smallvec::smallvec![lambda * y[0]]
}

impl OdeSystem for Dahlquist {
    fn key(&self) -> &str {
        "dahlquist"
    }

    fn dimension(&self) -> usize {
        1
    }

    #[inline]
    fn rhs<T: Real>(&self, _t: T, y: &[T], dydt: &mut [T]) {
        dydt[0] = T::from_f64(self.lambda) * y[0];
    }

    #[inline]
    fn jacobian<T: Real>(&self, _t: T, _y: &[T], jac: &mut Matrix<T>) {
        jac[(0, 0)] = T::from_f64(self.lambda);
    }

    fn initial_values(&self) -> Vec<f64> {
        vec![self.initial]
    }

    fn parameters(&self) -> Vec<f64> {
        vec![self.lambda]
    }

    fn t_span(&self) -> (f64, f64) {
        self.t_span
    }
}

/// Registry of the named problems selectable from the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    VanDerPol(VanDerPol),
    Dahlquist(Dahlquist),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown problem {0:?}; expected one of: vdp, dahlquist")]
pub struct UnknownProblem(pub String);

impl Problem {
    pub const KEYS: [&'static str; 2] = ["vdp", "dahlquist"];

    pub fn with_span(mut self, span: (f64, f64)) -> Problem {
        match &mut self {
            Problem::VanDerPol(p) => p.t_span = span,
            Problem::Dahlquist(p) => p.t_span = span,
        }
        self
    }
}

impl FromStr for Problem {
    type Err = UnknownProblem;

    fn from_str(s: &str) -> Result<Problem, UnknownProblem> {
        match s {
            "vdp" => Ok(Problem::VanDerPol(VanDerPol::default())),
            "dahlquist" => Ok(Problem::Dahlquist(Dahlquist::default())),
            other => Err(UnknownProblem(other.to_string())),
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl OdeSystem for Problem {
    fn key(&self) -> &str {
        match self {
            Problem::VanDerPol(p) => p.key(),
            Problem::Dahlquist(p) => p.key(),
        }
    }

    fn dimension(&self) -> usize {
        match self {
            Problem::VanDerPol(p) => p.dimension(),
            Problem::Dahlquist(p) => p.dimension(),
        }
    }

    #[inline]
    fn rhs<T: Real>(&self, t: T, y: &[T], dydt: &mut [T]) {
        match self {
            Problem::VanDerPol(p) => p.rhs(t, y, dydt),
            Problem::Dahlquist(p) => p.rhs(t, y, dydt),
        }
    }

    #[inline]
    fn jacobian<T: Real>(&self, t: T, y: &[T], jac: &mut Matrix<T>) {
        match self {
            Problem::VanDerPol(p) => p.jacobian(t, y, jac),
            Problem::Dahlquist(p) => p.jacobian(t, y, jac),
        }
    }

    fn initial_values(&self) -> Vec<f64> {
        match self {
            Problem::VanDerPol(p) => p.initial_values(),
            Problem::Dahlquist(p) => p.initial_values(),
        }
    }

    fn t_span(&self) -> (f64, f64) {
        match self {
            Problem::VanDerPol(p) => p.t_span(),
            Problem::Dahlquist(p) => p.t_span(),
        }
    }

    fn parameters(&self) -> Vec<f64> {
        match self {
            Problem::VanDerPol(p) => p.parameters(),
            Problem::Dahlquist(p) => p.parameters(),
        }
    }
}
