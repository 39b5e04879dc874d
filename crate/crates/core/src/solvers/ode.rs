use crate::error::{Error, Result};
use crate::gridfn::Grid1D;

/// Forward Euler on `grid`. `rhs` receives the step index, the time and the
/// current state, so tabulated inputs can be looked up by index.
pub fn euler_integrate<F>(mut rhs: F, u0: f64, grid: &Grid1D) -> Result<Vec<f64>>
where
    F: FnMut(usize, f64, f64) -> f64,
{
    if !u0.is_finite() {
        return Err(Error::NonFinite(format!("initial value {u0}")));
    }
    let h = grid.spacing();
    let mut u = Vec::with_capacity(grid.len());
    u.push(u0);
    for i in 0..grid.len() - 1 {
        let next = u[i] + h * rhs(i, grid.point(i), u[i]);
        if !next.is_finite() {
            return Err(Error::Divergence { step: i + 1 });
        }
        u.push(next);
    }
    Ok(u)
}
