use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridfn::{
    blend_to_boundaries_1d, blend_to_time_slices_2d, fd_derivative_1d, fd_partials_2d, Coord,
    FunctionSample, Grid1D, Grid2D,
};
use crate::randproc::{GpSampler, RbfKernelSpec, RngStream, DEFAULT_RELATIVE_JITTER};
use crate::solvers::{
    euler_integrate, heat_step_implicit, linear_rd_solve, poisson_solve, weno_evolve, FluxSpec,
    LAMBDA,
};

use super::{DemoRecord, Direction, Kind, OperatorSpec, OSCILLATOR_RECORD};

/// Grid and time settings shared by every record of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSettings {
    /// Samples per one-dimensional function.
    pub points: usize,
    /// Domain of the ODE, Poisson, reaction-diffusion and heat families.
    pub domain: [f64; 2],
    /// Points per axis of the 2D PDE grid on `[0, 1]^2`.
    pub pde_grid: usize,
    /// Cells used to evolve the conservation law before resampling.
    pub conservation_cells: usize,
    /// Final time of the conservation-law and heat operators.
    pub tau: f64,
    pub heat_dt: f64,
}

impl Default for GenSettings {
    fn default() -> Self {
        Self {
            points: 50,
            domain: [0.0, 1.0],
            pde_grid: 26,
            conservation_cells: 128,
            tau: 0.1,
            heat_dt: 1e-3,
        }
    }
}

impl GenSettings {
    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.domain[0], self.domain[1], self.points)
    }

    pub fn pde_grid(&self) -> Result<Grid2D> {
        let axis = Grid1D::unit(self.pde_grid)?;
        Ok(Grid2D::new(axis, axis))
    }

    /// Kernel for one-dimensional conditions on [`Self::domain`].
    pub fn gp(&self) -> RbfKernelSpec {
        RbfKernelSpec::for_domain(self.domain[1] - self.domain[0])
    }
}

fn jitter(spec: &RbfKernelSpec) -> f64 {
    spec.variance * DEFAULT_RELATIVE_JITTER
}

fn gp_on_points(points: &[f64], spec: &RbfKernelSpec, rng: &mut RngStream) -> Result<Vec<f64>> {
    let coords: Vec<[f64; 1]> = points.iter().map(|&x| [x]).collect();
    Ok(GpSampler::new(&coords, spec, jitter(spec))?.draw(rng))
}

fn check_on_grid(values: &[f64], grid: &Grid1D) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::Sizing(format!(
            "condition has {} values but the grid has {} points",
            values.len(),
            grid.len()
        )));
    }
    Ok(())
}

fn ode_solve(kind: Kind, op: &OperatorSpec, c: &[f64], grid: &Grid1D) -> Result<Vec<f64>> {
    check_on_grid(c, grid)?;
    let u0 = op.param("u0");
    let (a1, a2) = (op.param("a1"), op.param("a2"));
    match kind {
        Kind::Ode1 => euler_integrate(|i, _, _| a1 * c[i] + a2, u0, grid),
        Kind::Ode2 => euler_integrate(|i, _, u| a1 * c[i] * u + a2, u0, grid),
        Kind::Ode3 => {
            let a3 = op.param("a3");
            euler_integrate(|i, _, u| a1 * u + a2 * c[i] + a3, u0, grid)
        }
        _ => unreachable!("not an ODE family"),
    }
}

/// Reaction coefficient of the linear reaction-diffusion family, kept
/// positive so the operator stays invertible.
fn reaction_from_gp(g: &[f64]) -> Vec<f64> {
    g.iter().map(|v| (0.5 * v).exp()).collect()
}

fn heat_steps(s: &GenSettings) -> Result<(usize, f64)> {
    if !(s.tau > 0.0 && s.heat_dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "heat needs positive tau and dt, got {} and {}",
            s.tau, s.heat_dt
        )));
    }
    let steps = ((s.tau / s.heat_dt).round() as usize).max(1);
    Ok((steps, s.tau / steps as f64))
}

fn shifted(grid: &Grid1D, t: f64) -> Vec<Coord> {
    grid.points().into_iter().map(|x| Coord::new(t, x)).collect()
}

/// Periodic linear interpolation of cell values `u` (at `i / n`) onto `m`
/// equally spaced points of the unit interval.
fn resample_periodic(u: &[f64], m: usize) -> Vec<f64> {
    let n = u.len();
    (0..m)
        .map(|j| {
            let pos = j as f64 * n as f64 / m as f64;
            let i = pos.floor() as usize % n;
            let f = pos - pos.floor();
            (1.0 - f) * u[i] + f * u[(i + 1) % n]
        })
        .collect()
}

fn periodic_points(m: usize) -> Vec<f64> {
    (0..m).map(|j| j as f64 / m as f64).collect()
}

/// Solves a forward operator for a given condition. Returns `None` for
/// families whose data is built solution-first and so have no forward solver.
pub fn solve_forward(
    op: &OperatorSpec,
    condition: &FunctionSample,
    s: &GenSettings,
) -> Result<Option<FunctionSample>> {
    let fam = op.family_info()?;
    if fam.direction != Direction::Forward || fam.kind.is_solution_first() {
        return Ok(None);
    }
    forward_solve(fam.kind, op, condition, s).map(Some)
}

fn forward_solve(
    kind: Kind,
    op: &OperatorSpec,
    condition: &FunctionSample,
    s: &GenSettings,
) -> Result<FunctionSample> {
    let c = &condition.values;
    let out = match kind {
        Kind::Ode1 | Kind::Ode2 | Kind::Ode3 => {
            let grid = s.grid()?;
            FunctionSample::on_t_grid(&grid, ode_solve(kind, op, c, &grid)?)?
        }
        Kind::Poisson => {
            let grid = s.grid()?;
            check_on_grid(c, &grid)?;
            FunctionSample::on_x_grid(&grid, poisson_solve(c, op.param("u0"), op.param("uL"), &grid)?)?
        }
        Kind::LinearRd => {
            let grid = s.grid()?;
            let sol = linear_rd_solve(
                c,
                op.param("c"),
                LAMBDA * op.param("a"),
                op.param("u0"),
                op.param("uL"),
                &grid,
            )?;
            FunctionSample::on_x_grid(&grid, sol.u)?
        }
        Kind::Heat => {
            let grid = s.grid()?;
            check_on_grid(c, &grid)?;
            let (steps, dt) = heat_steps(s)?;
            let u = heat_step_implicit(
                c,
                op.param("k"),
                op.param("alpha"),
                op.param("u0"),
                op.param("uL"),
                dt,
                &grid,
                steps,
            )?;
            FunctionSample::new(shifted(&grid, s.tau), u)?
        }
        Kind::ConservationLaw => {
            let flux = FluxSpec::new(op.param("a"), op.param("b"), op.param("c"))?;
            let u = weno_evolve(c, flux, s.tau, 1.0)?;
            let coords = periodic_points(c.len()).into_iter().map(|x| Coord::new(s.tau, x)).collect();
            FunctionSample::new(coords, u)?
        }
        Kind::DampedOscillator | Kind::NonlinearRd | Kind::Pde2d => unreachable!(),
    };
    Ok(out)
}

fn forward_pair(
    kind: Kind,
    op: &OperatorSpec,
    rng: &mut RngStream,
    s: &GenSettings,
) -> Result<(FunctionSample, FunctionSample)> {
    match kind {
        Kind::Ode1 | Kind::Ode2 | Kind::Ode3 => {
            let grid = s.grid()?;
            let c = gp_on_points(&grid.points(), &s.gp(), rng)?;
            let u = ode_solve(kind, op, &c, &grid)?;
            Ok((FunctionSample::on_t_grid(&grid, c)?, FunctionSample::on_t_grid(&grid, u)?))
        }
        Kind::DampedOscillator => {
            let draws: Vec<f64> = OSCILLATOR_RECORD
                .iter()
                .map(|r| rng.uniform_range(r.lo, r.hi))
                .collect();
            let (amp, period, phase) = (draws[0], draws[1], draws[2]);
            let k = op.param("k");
            let full = Grid1D::unit(2 * s.points - 1)?;
            let u: Vec<f64> = full
                .points()
                .iter()
                .map(|&t| {
                    amp * (2.0 * std::f64::consts::PI / period * t + phase).sin() * (-k * t).exp()
                })
                .collect();
            let coords: Vec<Coord> = full.points().into_iter().map(Coord::in_t).collect();
            let mid = s.points - 1;
            Ok((
                FunctionSample::new(coords[..=mid].to_vec(), u[..=mid].to_vec())?,
                FunctionSample::new(coords[mid..].to_vec(), u[mid..].to_vec())?,
            ))
        }
        Kind::Poisson | Kind::LinearRd => {
            let grid = s.grid()?;
            let g = gp_on_points(&grid.points(), &s.gp(), rng)?;
            let cond = if kind == Kind::LinearRd { reaction_from_gp(&g) } else { g };
            let cond = FunctionSample::on_x_grid(&grid, cond)?;
            let qoi = forward_solve(kind, op, &cond, s)?;
            Ok((cond, qoi))
        }
        Kind::NonlinearRd => {
            let grid = s.grid()?;
            let g = gp_on_points(&grid.points(), &s.gp(), rng)?;
            let u = blend_to_boundaries_1d(&g, op.param("u0"), op.param("uL"))?;
            let c = nonlinear_rd_condition(&u, op.param("k"), op.param("a"), &grid)?;
            Ok((FunctionSample::on_x_grid(&grid, c)?, FunctionSample::on_x_grid(&grid, u)?))
        }
        Kind::ConservationLaw => {
            let n = s.conservation_cells;
            // embed the circle so the draw is periodic
            let r = 1.0 / (2.0 * std::f64::consts::PI);
            let circle: Vec<[f64; 2]> = periodic_points(n)
                .iter()
                .map(|x| {
                    let th = 2.0 * std::f64::consts::PI * x;
                    [r * th.cos(), r * th.sin()]
                })
                .collect();
            let spec = RbfKernelSpec::for_domain(1.0);
            let u0 = GpSampler::new(&circle, &spec, jitter(&spec))?.draw(rng);
            let flux = FluxSpec::new(op.param("a"), op.param("b"), op.param("c"))?;
            let ut = weno_evolve(&u0, flux, s.tau, 1.0)?;
            let xs = periodic_points(s.points);
            let cond_coords = xs.iter().map(|&x| Coord::new(0.0, x)).collect();
            let qoi_coords = xs.iter().map(|&x| Coord::new(s.tau, x)).collect();
            Ok((
                FunctionSample::new(cond_coords, resample_periodic(&u0, s.points))?,
                FunctionSample::new(qoi_coords, resample_periodic(&ut, s.points))?,
            ))
        }
        Kind::Pde2d => {
            let grid = s.pde_grid()?;
            let spec = RbfKernelSpec::for_domain(1.0);
            let xs = grid.x.points();
            let v0 = gp_on_points(&xs, &spec, rng)?;
            let v1 = gp_on_points(&xs, &spec, rng)?;
            let coords: Vec<[f64; 2]> = grid.coords().iter().map(|c| [c.x, c.t]).collect();
            let u = GpSampler::new(&coords, &spec, jitter(&spec))?.draw(rng);
            let v = blend_to_time_slices_2d(&u, &grid, &v0, &v1)?;
            let coef = ["a", "b", "c", "d", "e", "f"].map(|k| op.param(k));
            let g = pde2d_condition(&v, &coef, &grid)?;
            Ok((FunctionSample::on_grid_2d(&grid, g)?, FunctionSample::on_grid_2d(&grid, v)?))
        }
        Kind::Heat => {
            let grid = s.grid()?;
            let g = gp_on_points(&grid.points(), &s.gp(), rng)?;
            let u = blend_to_boundaries_1d(&g, op.param("u0"), op.param("uL"))?;
            let cond = FunctionSample::new(shifted(&grid, 0.0), u)?;
            let qoi = forward_solve(kind, op, &cond, s)?;
            Ok((cond, qoi))
        }
    }
}

/// `c = -lambda a u'' + k u^3` with the module's second-derivative stencil.
pub fn nonlinear_rd_condition(u: &[f64], k: f64, a: f64, grid: &Grid1D) -> Result<Vec<f64>> {
    let uxx = fd_derivative_1d(u, grid.spacing(), 2)?;
    Ok(u.iter()
        .zip(&uxx)
        .map(|(ui, d)| -LAMBDA * a * d + k * ui * ui * ui)
        .collect())
}

/// `g = a u_xx + b u_xt + c u_tt + d u_x + e u_t + f u`.
pub fn pde2d_condition(u: &[f64], coef: &[f64; 6], grid: &Grid2D) -> Result<Vec<f64>> {
    let p = fd_partials_2d(u, grid)?;
    let [a, b, c, d, e, f] = *coef;
    Ok((0..u.len())
        .map(|i| {
            a * p.u_xx[i] + b * p.u_xt[i] + c * p.u_tt[i] + d * p.u_x[i] + e * p.u_t[i] + f * u[i]
        })
        .collect())
}

/// One record with the default settings.
pub fn generate_record(op: &OperatorSpec, seed: u64) -> Result<DemoRecord> {
    generate_record_with(op, seed, &GenSettings::default())
}

/// Builds the record of `op` driven by `seed`. Inverse families swap the
/// condition and quantity of interest of the forward construction.
pub fn generate_record_with(op: &OperatorSpec, seed: u64, s: &GenSettings) -> Result<DemoRecord> {
    let fam = op.family_info()?;
    fam.check_params(&op.params).map_err(|e| e.in_family(fam.id))?;
    let mut rng = RngStream::new(seed, 0);
    let (cond, qoi) = forward_pair(fam.kind, op, &mut rng, s).map_err(|e| e.in_family(fam.id))?;
    let (condition, qoi) = match fam.direction {
        Direction::Forward => (cond, qoi),
        Direction::Inverse => (qoi, cond),
    };
    Ok(DemoRecord {
        operator: op.clone(),
        condition,
        qoi,
        seed,
    })
}
