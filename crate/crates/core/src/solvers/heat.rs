use crate::error::{Error, Result};
use crate::gridfn::Grid1D;

use super::bvp::pin_ends;
use super::tridiag::{thomas_solve, TridiagonalSystem};

/// Backward-Euler steps of `u_t = k u_xx + alpha u` with the end values held
/// at `g0` and `g_end`. Each step is one tridiagonal solve.
#[allow(clippy::too_many_arguments)]
pub fn heat_step_implicit(
    u: &[f64],
    k: f64,
    alpha: f64,
    g0: f64,
    g_end: f64,
    dt: f64,
    grid: &Grid1D,
    steps: usize,
) -> Result<Vec<f64>> {
    if u.len() != grid.len() {
        return Err(Error::Sizing(format!(
            "profile has {} values, grid has {}",
            u.len(),
            grid.len()
        )));
    }
    if !(k > 0.0 && dt > 0.0 && k.is_finite() && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "diffusivity and time step must be positive, got k={k}, dt={dt}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("at least one time step is required".into()));
    }
    let n = grid.len();
    let r = k * dt / grid.spacing().powi(2);
    let mut current = u.to_vec();
    for _ in 0..steps {
        let mut sys = TridiagonalSystem {
            lower: vec![-r; n - 1],
            diag: vec![1.0 + 2.0 * r - alpha * dt; n],
            upper: vec![-r; n - 1],
            rhs: current,
        };
        pin_ends(&mut sys, g0, g_end);
        current = thomas_solve(&sys)?;
    }
    Ok(current)
}
