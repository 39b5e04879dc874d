//! Deterministic random streams and Gaussian-process sampling.
//!
//! [`RngStream`] is ChaCha12 keyed by a 64-bit seed (expanded to 256 bits
//! with SplitMix64) and positioned on a 64-bit ChaCha stream. Uniform
//! variates take the top 53 bits of each 64-bit output; normal variates use
//! the Box-Muller transform, consuming two uniforms per pair.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Largest point count for which a dense covariance is factorized.
pub const MAX_GP_POINTS: usize = 4096;

/// Default jitter added to the covariance diagonal, relative to the variance.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-6;

const JITTER_ESCALATIONS: usize = 3;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of integers into one seed. Order matters.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C909, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha12Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = seed;
        for chunk in key.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut inner = ChaCha12Rng::from_seed(key);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` by rejection, so no modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot choose {k} of {n}");
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

/// Squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RbfKernelSpec {
    pub length_scale: f64,
    pub variance: f64,
}

impl RbfKernelSpec {
    pub fn new(length_scale: f64, variance: f64) -> Result<Self> {
        let spec = Self {
            length_scale,
            variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Length scale one fifth of the domain, variance 2.
    pub fn for_domain(length: f64) -> Self {
        Self {
            length_scale: 0.2 * length,
            variance: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.length_scale) && ok(self.variance) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "kernel length scale and variance must be positive and finite, got ({}, {})",
                self.length_scale, self.variance
            )))
        }
    }
}

pub fn rbf_kernel(p: &[f64], q: &[f64], spec: &RbfKernelSpec) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() || p.len() > 3 {
        return Err(Error::InvalidInput(format!(
            "kernel arguments must share dimension 1..=3, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(rbf_unchecked(p, q, spec))
}

fn rbf_unchecked(p: &[f64], q: &[f64], spec: &RbfKernelSpec) -> f64 {
    let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
    spec.variance * (-d2 / (2.0 * spec.length_scale * spec.length_scale)).exp()
}

/// Dense covariance matrix, row-major.
pub fn covariance<P: AsRef<[f64]>>(coords: &[P], spec: &RbfKernelSpec) -> Result<Vec<f64>> {
    let n = coords.len();
    let dim = coords.first().map_or(0, |c| c.as_ref().len());
    if coords.iter().any(|c| c.as_ref().len() != dim) || !(1..=3).contains(&dim) {
        return Err(Error::InvalidInput(
            "all coordinates must share one dimension in 1..=3".into(),
        ));
    }
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = spec.variance;
        for j in 0..i {
            let v = rbf_unchecked(coords[i].as_ref(), coords[j].as_ref(), spec);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    Ok(k)
}

/// Lower Cholesky factor of a symmetric matrix, or the failing pivot.
fn cholesky(a: &[f64], n: usize) -> std::result::Result<Vec<f64>, usize> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let row_j = j * n;
        let mut d = a[row_j + j];
        for k in 0..j {
            d -= l[row_j + k] * l[row_j + k];
        }
        if !(d > 0.0 && d.is_finite()) {
            return Err(j);
        }
        let d = d.sqrt();
        l[row_j + j] = d;
        for i in j + 1..n {
            let row_i = i * n;
            let mut s = a[row_i + j];
            for k in 0..j {
                s -= l[row_i + k] * l[row_j + k];
            }
            l[row_i + j] = s / d;
        }
    }
    Ok(l)
}

/// A factorized zero-mean Gaussian process restricted to fixed coordinates.
#[derive(Debug, Clone)]
pub struct GpSampler {
    n: usize,
    factor: Vec<f64>,
    jitter: f64,
}

impl GpSampler {
    pub fn new<P: AsRef<[f64]>>(coords: &[P], spec: &RbfKernelSpec, jitter: f64) -> Result<Self> {
        spec.validate()?;
        let n = coords.len();
        if n == 0 {
            return Err(Error::Sizing("GP sample needs at least one coordinate".into()));
        }
        if n > MAX_GP_POINTS {
            return Err(Error::CovarianceCap { n, cap: MAX_GP_POINTS });
        }
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(Error::InvalidInput(format!("jitter must be >= 0, got {jitter}")));
        }
        let mut k = covariance(coords, spec)?;
        let base = spec.variance * DEFAULT_RELATIVE_JITTER;
        let mut current = jitter;
        let mut added = 0.0;
        let mut last_pivot = 0;
        for attempt in 0..=JITTER_ESCALATIONS {
            if attempt > 0 {
                current = if current > 0.0 { current * 10.0 } else { base };
            }
            for i in 0..n {
                k[i * n + i] += current - added;
            }
            added = current;
            match cholesky(&k, n) {
                Ok(factor) => {
                    return Ok(Self {
                        n,
                        factor,
                        jitter: current,
                    })
                }
                Err(pivot) => last_pivot = pivot,
            }
        }
        Err(Error::Conditioning(format!(
            "covariance of {n} points not positive definite at pivot {last_pivot} \
             even with diagonal jitter {current:e}; coordinates may be duplicated \
             or the length scale too long for the spacing"
        )))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn draw(&self, rng: &mut RngStream) -> Vec<f64> {
        let n = self.n;
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        (0..n)
            .map(|i| {
                let row = &self.factor[i * n..i * n + i + 1];
                row.iter().zip(&z).map(|(l, z)| l * z).sum()
            })
            .collect()
    }
}

/// One zero-mean draw at `coords`.
pub fn gp_sample<P: AsRef<[f64]>>(
    coords: &[P],
    spec: &RbfKernelSpec,
    rng: &mut RngStream,
    jitter: f64,
) -> Result<Vec<f64>> {
    Ok(GpSampler::new(coords, spec, jitter)?.draw(rng))
}
