use crate::error::{Error, Result};
use crate::gridfn::Grid1D;

use super::tridiag::{thomas_solve, TridiagonalSystem};

/// Diffusion scale shared by the reaction-diffusion families.
pub const LAMBDA: f64 = 0.05;

fn check_len(values: &[f64], grid: &Grid1D, what: &str) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::Sizing(format!(
            "{what} has {} values, grid has {}",
            values.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// `u'' = c` with `u(start) = u0`, `u(end) = u_end`, second-order central
/// differences. The boundary rows are identity rows, so the endpoints are
/// returned exactly.
pub fn poisson_solve(c: &[f64], u0: f64, u_end: f64, grid: &Grid1D) -> Result<Vec<f64>> {
    check_len(c, grid, "source")?;
    let n = grid.len();
    let h2 = grid.spacing().powi(2);
    let mut sys = TridiagonalSystem {
        lower: vec![1.0; n - 1],
        diag: vec![-2.0; n],
        upper: vec![1.0; n - 1],
        rhs: c.iter().map(|ci| ci * h2).collect(),
    };
    pin_ends(&mut sys, u0, u_end);
    thomas_solve(&sys)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdSolution {
    pub u: Vec<f64>,
    /// False when some interior row lost diagonal dominance because of
    /// negative reaction coefficients.
    pub diagonally_dominant: bool,
}

/// `-lambda_a u'' + k(x) u = c` with Dirichlet ends.
pub fn linear_rd_solve(
    k: &[f64],
    c: f64,
    lambda_a: f64,
    u0: f64,
    u_end: f64,
    grid: &Grid1D,
) -> Result<RdSolution> {
    check_len(k, grid, "reaction coefficient")?;
    if !(lambda_a > 0.0 && lambda_a.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "diffusion coefficient must be positive, got {lambda_a}"
        )));
    }
    let n = grid.len();
    let s = lambda_a / grid.spacing().powi(2);
    let mut sys = TridiagonalSystem {
        lower: vec![-s; n - 1],
        diag: k.iter().map(|ki| 2.0 * s + ki).collect(),
        upper: vec![-s; n - 1],
        rhs: vec![c; n],
    };
    pin_ends(&mut sys, u0, u_end);
    let diagonally_dominant = sys.is_diagonally_dominant();
    Ok(RdSolution {
        u: thomas_solve(&sys)?,
        diagonally_dominant,
    })
}

pub(super) fn pin_ends(sys: &mut TridiagonalSystem, u0: f64, u_end: f64) {
    let n = sys.diag.len();
    sys.diag[0] = 1.0;
    sys.upper[0] = 0.0;
    sys.rhs[0] = u0;
    sys.diag[n - 1] = 1.0;
    sys.lower[n - 2] = 0.0;
    sys.rhs[n - 1] = u_end;
}
