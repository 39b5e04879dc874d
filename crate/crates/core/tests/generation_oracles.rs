use std::collections::BTreeMap;

use icon_core::families::{
    generate_corpus, generate_record, nonlinear_rd_condition, pde2d_condition, sample_operator_with_id, solve_forward,
    GenSettings, OperatorSpec,
};
use icon_core::gridfn::{blend_to_time_slices_2d, fd_derivative_1d};
use icon_core::randproc::{derive_seed, rbf_kernel, GpSampler};
use icon_core::solvers::LAMBDA;
use icon_core::{Grid1D, Grid2D, RbfKernelSpec, RngStream};
use proptest::prelude::*;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

#[test]
fn gp_marginal_and_pair_statistics() {
    let spec = RbfKernelSpec::new(0.2, 2.0).unwrap();
    let coords: Vec<[f64; 1]> = (0..20).map(|i| [i as f64 / 19.0]).collect();
    let sampler = GpSampler::new(&coords, &spec, 1e-10).unwrap();
    let mut rng = RngStream::new(77, 0);
    let draws: Vec<Vec<f64>> = (0..2000).map(|_| sampler.draw(&mut rng)).collect();
    let at = |i: usize| draws.iter().map(|d| d[i]).collect::<Vec<f64>>();
    let (a, b) = (at(5), at(7));
    let var = cov(&a, &a);
    assert!((1.7..=2.3).contains(&var), "{var}");
    assert!(mean(&a).abs() < 3.0 * (2.0f64 / 2000.0).sqrt());

    let k = rbf_kernel(&coords[5], &coords[7], &spec).unwrap();
    let c = cov(&a, &b);
    let se = ((var * cov(&b, &b) + c * c) / 2000.0).sqrt();
    assert!((c - k).abs() < 3.0 * se, "cov {c} kernel {k} se {se}");
}

fn central_second(u: &[f64], i: usize, h: f64) -> f64 {
    (u[i - 1] - 2.0 * u[i] + u[i + 1]) / (h * h)
}

#[test]
fn nonlinear_rd_records_replay() {
    let s = GenSettings::default();
    let grid = s.grid().unwrap();
    let h = 1.0 / (s.points - 1) as f64;
    for r in 0..100u64 {
        let op = sample_operator_with_id("nonlinear_rd_fwd", &mut RngStream::new(r, 5), r).unwrap();
        let rec = generate_record(&op, derive_seed(&[3, r])).unwrap();
        let (k, a) = (op.param("k"), op.param("a"));
        let u = &rec.qoi.values;
        let c = &rec.condition.values;
        let replay = nonlinear_rd_condition(u, k, a, &grid).unwrap();
        let uxx = fd_derivative_1d(u, grid.spacing(), 2).unwrap();
        for i in 1..u.len() - 1 {
            assert!((replay[i] - c[i]).abs() <= 1e-12);
            assert!((-LAMBDA * a * uxx[i] + k * u[i].powi(3) - c[i]).abs() <= 1e-12);
            let independent = -LAMBDA * a * central_second(u, i, h) + k * u[i].powi(3);
            assert!((independent - c[i]).abs() <= 1e-10 * c[i].abs().max(1.0));
        }
        assert_eq!(u[0], op.param("u0"));
        assert_eq!(u[u.len() - 1], op.param("uL"));
    }
}

const REFERENCE_COEFFICIENTS: [f64; 6] = [0.4563, 0.1500, -0.4341, -0.0525, -0.0457, 0.1578];

fn pde2d_operators() -> Vec<OperatorSpec> {
    let names = ["a", "b", "c", "d", "e", "f"];
    let fixed: BTreeMap<String, f64> = names.iter().map(|n| n.to_string()).zip(REFERENCE_COEFFICIENTS).collect();
    let mut ops = vec![OperatorSpec::new("pde2d_fwd", fixed, 0).unwrap()];
    for i in 1..20u64 {
        ops.push(sample_operator_with_id("pde2d_fwd", &mut RngStream::new(i, 6), i).unwrap());
    }
    ops
}

#[test]
fn pde2d_records_replay() {
    let s = GenSettings::default();
    let grid = s.pde_grid().unwrap();
    let n = grid.nx();
    let h = 1.0 / (n - 1) as f64;
    for op in pde2d_operators() {
        let coef = ["a", "b", "c", "d", "e", "f"].map(|k| op.param(k));
        let rec = generate_record(&op, derive_seed(&[4, op.operator_id])).unwrap();
        let u = &rec.qoi.values;
        let g = &rec.condition.values;
        let replay = pde2d_condition(u, &coef, &grid).unwrap();
        let at = |it: usize, ix: usize| u[grid.index(it, ix)];
        for it in 1..n - 1 {
            for ix in 1..n - 1 {
                let i = grid.index(it, ix);
                assert!((replay[i] - g[i]).abs() <= 1e-12);
                let uxx = (at(it, ix - 1) - 2.0 * at(it, ix) + at(it, ix + 1)) / (h * h);
                let utt = (at(it - 1, ix) - 2.0 * at(it, ix) + at(it + 1, ix)) / (h * h);
                let ux = (at(it, ix + 1) - at(it, ix - 1)) / (2.0 * h);
                let ut = (at(it + 1, ix) - at(it - 1, ix)) / (2.0 * h);
                let uxt = (at(it + 1, ix + 1) - at(it + 1, ix - 1) - at(it - 1, ix + 1) + at(it - 1, ix - 1)) / (4.0 * h * h);
                let [a, b, c, d, e, f] = coef;
                let independent = a * uxx + b * uxt + c * utt + d * ux + e * ut + f * at(it, ix);
                assert!((independent - g[i]).abs() <= 1e-9 * g[i].abs().max(1.0), "{independent} vs {}", g[i]);
            }
        }
        assert!(solve_forward(&op, &rec.condition, &s).unwrap().is_none());
    }
}

#[test]
fn time_slice_blend_endpoints_exact() {
    let axis = Grid1D::unit(9).unwrap();
    let grid = Grid2D::new(axis, axis);
    let mut rng = RngStream::new(1, 0);
    for _ in 0..20 {
        let u: Vec<f64> = (0..grid.len()).map(|_| rng.normal()).collect();
        let v0: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
        let v1: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
        let v = blend_to_time_slices_2d(&u, &grid, &v0, &v1).unwrap();
        for ix in 0..9 {
            assert!((v[grid.index(0, ix)] - v0[ix]).abs() <= 1e-15);
            assert!((v[grid.index(8, ix)] - v1[ix]).abs() <= 1e-15);
        }
        let t = axis.point(3);
        let i = grid.index(3, 4);
        let expect = u[i] + (1.0 - t) * (v0[4] - u[grid.index(0, 4)]) + t * (v1[4] - u[grid.index(8, 4)]);
        assert!((v[i] - expect).abs() < 1e-14);
    }
}

#[test]
fn forward_records_replay_through_their_solver() {
    let s = GenSettings::default();
    for fam in ["ode1_fwd", "ode2_fwd", "ode3_fwd", "poisson_fwd", "linear_rd_fwd", "conservation_fwd", "heat_fwd"] {
        let c = generate_corpus(fam, 3, 6, 11, &s).unwrap();
        for rec in &c.records {
            let replay = solve_forward(&rec.operator, &rec.condition, &s).unwrap().unwrap();
            if fam == "conservation_fwd" {
                // stored on the resampled 50-point grid
                assert_eq!(replay.coords, rec.qoi.coords);
            } else {
                assert_eq!(replay, rec.qoi, "{fam}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric_and_bounded(p in -2.0f64..2.0, q in -2.0f64..2.0, l in 0.05f64..2.0, s2 in 0.1f64..5.0) {
        let spec = RbfKernelSpec::new(l, s2).unwrap();
        let a = rbf_kernel(&[p], &[q], &spec).unwrap();
        prop_assert_eq!(a, rbf_kernel(&[q], &[p], &spec).unwrap());
        prop_assert!(a > 0.0 && a <= s2);
        prop_assert!((a - s2 * (-(p - q) * (p - q) / (2.0 * l * l)).exp()).abs() < 1e-14 * s2);
    }

    #[test]
    fn grid_endpoints_exact(a in -10.0f64..10.0, len in 0.01f64..10.0, n in 2usize..500) {
        let g = Grid1D::new(a, a + len, n).unwrap();
        prop_assert_eq!(g.point(0), a);
        prop_assert_eq!(g.point(n - 1), a + len);
        let pts = g.points();
        prop_assert!(pts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn generation_is_a_pure_function_of_the_seed(seed in any::<u64>()) {
        let op = sample_operator_with_id("ode3_fwd", &mut RngStream::new(seed, 0), 0).unwrap();
        prop_assert_eq!(generate_record(&op, seed).unwrap(), generate_record(&op, seed).unwrap());
    }
}
