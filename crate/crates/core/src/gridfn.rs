//! Uniform grids, sampled functions, finite-difference derivatives and the
//! boundary-blending helpers used by the u-first generators.
//!
//! Every stencil here is second order: three-point central differences in
//! the interior and three-point (first derivative) or four-point (second
//! derivative) one-sided formulas at the two ends.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Inclusive uniform grid on `[start, end]` with `n` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    start: f64,
    end: f64,
    n: usize,
}

impl Grid1D {
    pub fn new(start: f64, end: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Sizing(format!("grid needs at least 3 points, got {n}")));
        }
        if !(start.is_finite() && end.is_finite() && end > start) {
            return Err(Error::InvalidInput(format!(
                "grid bounds must be finite with end > start, got [{start}, {end}]"
            )));
        }
        Ok(Self { start, end, n })
    }

    /// The unit interval with `n` points.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(0.0, 1.0, n)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn spacing(&self) -> f64 {
        (self.end - self.start) / (self.n - 1) as f64
    }

    /// Normalized coordinate of point `i`, exactly 0 and 1 at the ends.
    pub fn fraction(&self, i: usize) -> f64 {
        i as f64 / (self.n - 1) as f64
    }

    /// Point `i`. Interpolates between the bounds so both ends are hit exactly.
    pub fn point(&self, i: usize) -> f64 {
        let s = self.fraction(i);
        self.start * (1.0 - s) + self.end * s
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }
}

/// Tensor-product grid. Values are stored row-major with `t` outer and `x`
/// inner: the value at `(t_j, x_i)` lives at index `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x: Grid1D,
    pub t: Grid1D,
}

impl Grid2D {
    pub fn new(x: Grid1D, t: Grid1D) -> Self {
        Self { x, t }
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn nt(&self) -> usize {
        self.t.len()
    }

    pub fn len(&self) -> usize {
        self.nx() * self.nt()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, it: usize, ix: usize) -> usize {
        it * self.nx() + ix
    }

    pub fn coords(&self) -> Vec<Coord> {
        let xs = self.x.points();
        self.t
            .points()
            .into_iter()
            .flat_map(|t| xs.iter().map(move |&x| Coord::new(t, x)))
            .collect()
    }
}

/// A sample location. One-dimensional problems in `t` keep `x = 0` and
/// problems in `x` keep `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Coord {
    pub t: f64,
    pub x: f64,
}

impl Coord {
    pub fn new(t: f64, x: f64) -> Self {
        Self { t, x }
    }

    pub fn in_t(t: f64) -> Self {
        Self { t, x: 0.0 }
    }

    pub fn in_x(x: f64) -> Self {
        Self { t: 0.0, x }
    }
}

impl From<[f64; 2]> for Coord {
    fn from([t, x]: [f64; 2]) -> Self {
        Self { t, x }
    }
}

impl From<Coord> for [f64; 2] {
    fn from(c: Coord) -> Self {
        [c.t, c.x]
    }
}

/// A scalar function sampled at labelled coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSample {
    pub coords: Vec<Coord>,
    pub values: Vec<f64>,
}

impl FunctionSample {
    pub fn new(coords: Vec<Coord>, values: Vec<f64>) -> Result<Self> {
        let fs = Self { coords, values };
        fs.validate()?;
        Ok(fs)
    }

    pub fn on_t_grid(grid: &Grid1D, values: Vec<f64>) -> Result<Self> {
        Self::new(grid.points().into_iter().map(Coord::in_t).collect(), values)
    }

    pub fn on_x_grid(grid: &Grid1D, values: Vec<f64>) -> Result<Self> {
        Self::new(grid.points().into_iter().map(Coord::in_x).collect(), values)
    }

    pub fn on_grid_2d(grid: &Grid2D, values: Vec<f64>) -> Result<Self> {
        Self::new(grid.coords(), values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.len() != self.values.len() {
            return Err(Error::Sizing(format!(
                "{} coordinates but {} values",
                self.coords.len(),
                self.values.len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.coords.len());
        for (i, c) in self.coords.iter().enumerate() {
            if !(c.t.is_finite() && c.x.is_finite()) {
                return Err(Error::NonFinite(format!("coordinate {i} = ({}, {})", c.t, c.x)));
            }
            // +0.0 and -0.0 are the same location
            if !seen.insert(((c.t + 0.0).to_bits(), (c.x + 0.0).to_bits())) {
                return Err(Error::InvalidInput(format!(
                    "duplicate coordinate ({}, {}) at index {i}",
                    c.t, c.x
                )));
            }
        }
        Ok(())
    }
}

/// First or second derivative of uniformly spaced samples.
pub fn fd_derivative_1d(values: &[f64], h: f64, order: u8) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 5 {
        return Err(Error::Sizing(format!(
            "finite differences need at least 5 samples, got {n}"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("spacing must be positive, got {h}")));
    }
    ensure_finite(values, "values")?;
    let u = values;
    let mut out = vec![0.0; n];
    match order {
        1 => {
            let inv = 1.0 / (2.0 * h);
            out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) * inv;
            for i in 1..n - 1 {
                out[i] = (u[i + 1] - u[i - 1]) * inv;
            }
            out[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) * inv;
        }
        2 => {
            let inv = 1.0 / (h * h);
            out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) * inv;
            for i in 1..n - 1 {
                out[i] = (u[i - 1] - 2.0 * u[i] + u[i + 1]) * inv;
            }
            out[n - 1] = (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) * inv;
        }
        _ => {
            return Err(Error::InvalidInput(format!(
                "derivative order must be 1 or 2, got {order}"
            )))
        }
    }
    Ok(out)
}

/// Partial derivatives of a function sampled on a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct Partials2D {
    pub u_x: Vec<f64>,
    pub u_t: Vec<f64>,
    pub u_xx: Vec<f64>,
    pub u_xt: Vec<f64>,
    pub u_tt: Vec<f64>,
}

fn along_x(u: &[f64], grid: &Grid2D, order: u8) -> Result<Vec<f64>> {
    let nx = grid.nx();
    let h = grid.x.spacing();
    let mut out = Vec::with_capacity(u.len());
    for row in u.chunks(nx) {
        out.extend(fd_derivative_1d(row, h, order)?);
    }
    Ok(out)
}

fn along_t(u: &[f64], grid: &Grid2D, order: u8) -> Result<Vec<f64>> {
    let (nx, nt) = (grid.nx(), grid.nt());
    let h = grid.t.spacing();
    let mut out = vec![0.0; u.len()];
    let mut column = vec![0.0; nt];
    for ix in 0..nx {
        for (it, c) in column.iter_mut().enumerate() {
            *c = u[grid.index(it, ix)];
        }
        for (it, d) in fd_derivative_1d(&column, h, order)?.into_iter().enumerate() {
            out[grid.index(it, ix)] = d;
        }
    }
    Ok(out)
}

fn check_grid_values(u: &[f64], grid: &Grid2D) -> Result<()> {
    if grid.nx() < 5 || grid.nt() < 5 {
        return Err(Error::Sizing(format!(
            "2D finite differences need at least a 5x5 grid, got {}x{}",
            grid.nx(),
            grid.nt()
        )));
    }
    if u.len() != grid.len() {
        return Err(Error::Sizing(format!(
            "grid has {} points but {} values were given",
            grid.len(),
            u.len()
        )));
    }
    Ok(())
}

/// All first and second partials. The mixed partial applies the x stencil
/// first, then the t stencil.
pub fn fd_partials_2d(u: &[f64], grid: &Grid2D) -> Result<Partials2D> {
    check_grid_values(u, grid)?;
    let u_x = along_x(u, grid, 1)?;
    let u_xt = along_t(&u_x, grid, 1)?;
    Ok(Partials2D {
        u_t: along_t(u, grid, 1)?,
        u_xx: along_x(u, grid, 2)?,
        u_tt: along_t(u, grid, 2)?,
        u_x,
        u_xt,
    })
}

/// Mixed partial with the stencils applied t first, then x.
pub fn fd_mixed_t_then_x(u: &[f64], grid: &Grid2D) -> Result<Vec<f64>> {
    check_grid_values(u, grid)?;
    along_x(&along_t(u, grid, 1)?, grid, 1)
}

/// Shift `u` by a function affine in the normalized coordinate so that it
/// takes the values `u0` and `u_end` at the two ends.
pub fn blend_to_boundaries_1d(u: &[f64], u0: f64, u_end: f64) -> Result<Vec<f64>> {
    let n = u.len();
    if n < 2 {
        return Err(Error::Sizing(format!("blending needs at least 2 samples, got {n}")));
    }
    let d0 = u0 - u[0];
    let d1 = u_end - u[n - 1];
    let last = (n - 1) as f64;
    let mut v: Vec<f64> = u
        .iter()
        .enumerate()
        .map(|(i, &ui)| {
            let s = i as f64 / last;
            ui + (1.0 - s) * d0 + s * d1
        })
        .collect();
    v[0] = u0;
    v[n - 1] = u_end;
    Ok(v)
}

/// `v(x,t) = u(x,t) + (1-t)[v0(x) - u(x,0)] + t[v1(x) - u(x,1)]` on a grid
/// whose t axis spans `[0, 1]`. The first and last time slices are set to
/// `v0` and `v1` exactly.
pub fn blend_to_time_slices_2d(
    u: &[f64],
    grid: &Grid2D,
    v0: &[f64],
    v1: &[f64],
) -> Result<Vec<f64>> {
    let (nx, nt) = (grid.nx(), grid.nt());
    if u.len() != grid.len() {
        return Err(Error::Sizing(format!(
            "grid has {} points but {} values were given",
            grid.len(),
            u.len()
        )));
    }
    if v0.len() != nx || v1.len() != nx {
        return Err(Error::Sizing(format!(
            "time slices must have {nx} values, got {} and {}",
            v0.len(),
            v1.len()
        )));
    }
    if grid.t.start() != 0.0 || grid.t.end() != 1.0 {
        return Err(Error::InvalidInput(format!(
            "time axis must span [0, 1], got [{}, {}]",
            grid.t.start(),
            grid.t.end()
        )));
    }
    let first = &u[..nx];
    let last = &u[(nt - 1) * nx..];
    let mut v = Vec::with_capacity(u.len());
    for it in 0..nt {
        let t = grid.t.point(it);
        for ix in 0..nx {
            v.push(
                u[grid.index(it, ix)]
                    + (1.0 - t) * (v0[ix] - first[ix])
                    + t * (v1[ix] - last[ix]),
            );
        }
    }
    v[..nx].copy_from_slice(v0);
    v[(nt - 1) * nx..].copy_from_slice(v1);
    Ok(v)
}
