//! Galerkin projection baseline: sine and POD bases, the reduced linear and
//! quadratic operators, and deterministic and stochastic coefficient integrators.

mod basis;
mod integrate;

pub use basis::{fourier_sine_basis, pod_basis, trapezoid_weights, BasisKind, BasisSet};
pub use integrate::{assemble_operators, integrate_rom, simulate_sde, GalerkinOperators, RomTrajectory, BLOWUP_NORM};
