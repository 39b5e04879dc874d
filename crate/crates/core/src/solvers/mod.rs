//! Classical solvers used to generate data and as inference baselines.

mod bvp;
mod heat;
mod ode;
mod tridiag;
mod weno;

pub use bvp::{linear_rd_solve, poisson_solve, RdSolution, LAMBDA};
pub use heat::heat_step_implicit;
pub use ode::euler_integrate;
pub use tridiag::{thomas_solve, TridiagonalSystem};
pub use weno::{weno_evolve, FluxSpec, CFL};
