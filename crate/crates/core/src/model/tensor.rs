//! Thin wrappers over `matrixmultiply::dgemm` for row-major matrices.

/// A read-only strided matrix view starting at `off`.
#[derive(Clone, Copy)]
pub(super) struct View<'a> {
    pub data: &'a [f64],
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows x cols` matrix.
    pub fn rm(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            off: 0,
            rs: cols,
            cs: 1,
        }
    }

    /// Columns `off..off + w` of a row-major matrix with `cols` columns.
    pub fn cols(data: &'a [f64], cols: usize, off: usize) -> Self {
        Self {
            data,
            off,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.off + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `C = beta C + A B` with `A: m x k`, `B: k x n`. `C` is written at
/// `c_off` with row stride `c_rs` and unit column stride.
#[allow(clippy::too_many_arguments)]
pub(super) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: View,
    b: View,
    beta: f64,
    c: &mut [f64],
    c_off: usize,
    c_rs: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for x in &mut c[c_off + i * c_rs..c_off + i * c_rs + n] {
                *x *= beta;
            }
        }
        return;
    }
    assert!(a.last(m, k) < a.data.len(), "gemm: A out of bounds");
    assert!(b.last(k, n) < b.data.len(), "gemm: B out of bounds");
    assert!(c_off + (m - 1) * c_rs + n - 1 < c.len(), "gemm: C out of bounds");
    // SAFETY: the asserts above keep every accessed element in bounds and
    // `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.off),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            c_rs as isize,
            1,
        );
    }
}

/// `Y = X W + b` for row-major `X: n x din`, `W: din x dout`.
pub(super) fn linear(x: &[f64], n: usize, din: usize, w: &[f64], b: &[f64], dout: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(n * dout);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    gemm(n, din, dout, View::rm(x, din), View::rm(w, dout), 1.0, &mut y, 0, dout);
    y
}

/// Accumulates the gradients of [`linear`]: `dW += X^T dY`, `db += sum dY`,
/// and returns `dX = dY W^T`.
#[allow(clippy::too_many_arguments)]
pub(super) fn linear_back(
    x: &[f64],
    n: usize,
    din: usize,
    w: &[f64],
    dout: usize,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    gemm(din, n, dout, View::rm(x, din).t(), View::rm(dy, dout), 1.0, dw, 0, dout);
    for row in dy.chunks_exact(dout) {
        for (g, v) in db.iter_mut().zip(row) {
            *g += v;
        }
    }
    let mut dx = vec![0.0; n * din];
    gemm(n, dout, din, View::rm(dy, dout), View::rm(w, dout).t(), 0.0, &mut dx, 0, din);
    dx
}
