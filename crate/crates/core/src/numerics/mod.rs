//! Numerical building blocks shared by the chaos, diffusion and Monte Carlo
//! modules: compensated summation, adaptive quadrature, an embedded
//! Runge-Kutta integrator, interpolation and a few special functions.

pub mod interp;
pub mod ode;
pub mod quad;
pub mod special;
pub mod sum;

pub use quad::{Quad, QuadResult};
pub use sum::NeumaierSum;
