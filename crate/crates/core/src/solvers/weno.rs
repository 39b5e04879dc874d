//! Fifth-order WENO for `u_t + f(u)_x = 0` on a periodic domain.
//!
//! Point values with global Lax-Friedrichs flux splitting (Shu-Osher finite
//! difference form), Jiang-Shu smoothness indicators and three-stage TVD
//! Runge-Kutta in time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Courant number used to pick the time step.
pub const CFL: f64 = 0.4;

const WENO_EPS: f64 = 1e-6;

/// Cubic flux `f(u) = a u^3 + b u^2 + c u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl FluxSpec {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::NonFinite(format!("flux coefficients ({a}, {b}, {c})")));
        }
        Ok(Self { a, b, c })
    }

    pub fn flux(&self, u: f64) -> f64 {
        ((self.a * u + self.b) * u + self.c) * u
    }

    pub fn speed(&self, u: f64) -> f64 {
        (3.0 * self.a * u + 2.0 * self.b) * u + self.c
    }
}

/// Left-biased fifth-order reconstruction at the right face of `v2`.
#[inline]
fn weno5(v0: f64, v1: f64, v2: f64, v3: f64, v4: f64) -> f64 {
    let q0 = (2.0 * v0 - 7.0 * v1 + 11.0 * v2) / 6.0;
    let q1 = (-v1 + 5.0 * v2 + 2.0 * v3) / 6.0;
    let q2 = (2.0 * v2 + 5.0 * v3 - v4) / 6.0;

    let b0 = 13.0 / 12.0 * (v0 - 2.0 * v1 + v2).powi(2) + 0.25 * (v0 - 4.0 * v1 + 3.0 * v2).powi(2);
    let b1 = 13.0 / 12.0 * (v1 - 2.0 * v2 + v3).powi(2) + 0.25 * (v1 - v3).powi(2);
    let b2 = 13.0 / 12.0 * (v2 - 2.0 * v3 + v4).powi(2) + 0.25 * (3.0 * v2 - 4.0 * v3 + v4).powi(2);

    let a0 = 0.1 / (WENO_EPS + b0).powi(2);
    let a1 = 0.6 / (WENO_EPS + b1).powi(2);
    let a2 = 0.3 / (WENO_EPS + b2).powi(2);
    (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)
}

struct Workspace {
    fp: Vec<f64>,
    fm: Vec<f64>,
    face: Vec<f64>,
}

/// Writes `-(F_{i+1/2} - F_{i-1/2}) / dx` into `out`.
fn rhs(u: &[f64], flux: &FluxSpec, dx: f64, ws: &mut Workspace, out: &mut [f64]) {
    let n = u.len();
    let alpha = u.iter().map(|&v| flux.speed(v).abs()).fold(0.0, f64::max);
    for i in 0..n {
        let f = flux.flux(u[i]);
        ws.fp[i] = 0.5 * (f + alpha * u[i]);
        ws.fm[i] = 0.5 * (f - alpha * u[i]);
    }
    let at = |i: isize| -> usize { i.rem_euclid(n as isize) as usize };
    // face[i] is the numerical flux at x_{i+1/2}
    for i in 0..n as isize {
        let (fp, fm) = (&ws.fp, &ws.fm);
        let plus = weno5(fp[at(i - 2)], fp[at(i - 1)], fp[at(i)], fp[at(i + 1)], fp[at(i + 2)]);
        let minus = weno5(fm[at(i + 3)], fm[at(i + 2)], fm[at(i + 1)], fm[at(i)], fm[at(i - 1)]);
        ws.face[i as usize] = plus + minus;
    }
    for i in 0..n {
        let left = ws.face[(i + n - 1) % n];
        out[i] = -(ws.face[i] - left) / dx;
    }
}

/// Evolves point values `u0` at `x_i = i * length / n` to time `tau`.
pub fn weno_evolve(u0: &[f64], flux: FluxSpec, tau: f64, length: f64) -> Result<Vec<f64>> {
    let n = u0.len();
    if n < 16 {
        return Err(Error::Sizing(format!("WENO needs at least 16 cells, got {n}")));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("final time must be >= 0, got {tau}")));
    }
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidInput(format!("domain length must be positive, got {length}")));
    }
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp { time: 0.0 });
    }
    let dx = length / n as f64;
    let mut ws = Workspace {
        fp: vec![0.0; n],
        fm: vec![0.0; n],
        face: vec![0.0; n],
    };
    let mut u = u0.to_vec();
    let mut stage = vec![0.0; n];
    let mut k = vec![0.0; n];
    let mut t = 0.0;
    while t < tau {
        let alpha = u.iter().map(|&v| flux.speed(v).abs()).fold(0.0, f64::max);
        let mut dt = if alpha > 0.0 { CFL * dx / alpha } else { tau - t };
        let last = t + dt >= tau;
        if last {
            dt = tau - t;
        }

        rhs(&u, &flux, dx, &mut ws, &mut k);
        for i in 0..n {
            stage[i] = u[i] + dt * k[i];
        }
        rhs(&stage, &flux, dx, &mut ws, &mut k);
        for i in 0..n {
            stage[i] = 0.75 * u[i] + 0.25 * (stage[i] + dt * k[i]);
        }
        rhs(&stage, &flux, dx, &mut ws, &mut k);
        for i in 0..n {
            u[i] = (u[i] + 2.0 * (stage[i] + dt * k[i])) / 3.0;
        }

        t = if last { tau } else { t + dt };
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t });
        }
    }
    Ok(u)
}
