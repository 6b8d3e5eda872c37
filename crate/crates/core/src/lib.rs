//! Mixed-precision Runge-Kutta integrators and the accuracy/timing study around them.

pub mod integrators;
pub mod linalg;
pub mod newton;
pub mod precision;
pub mod problem;
pub mod study;
