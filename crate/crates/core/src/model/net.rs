use crate::error::{Error, Result};
use crate::prompt::{Prompt, FEATURE_WIDTH};

use super::slot::*;
use super::tensor::{gemm, linear, linear_back, View};
use super::ModelParams;

const LN_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`, several times cheaper than the libm call.
fn fast_tanh(y: f64) -> f64 {
    if y.abs() > 20.0 {
        return y.signum();
    }
    let e = (2.0 * y).exp();
    (e - 1.0) / (e + 1.0)
}

/// The inner `tanh` of the GELU approximation.
fn gelu_tanh(z: f64) -> f64 {
    fast_tanh(GELU_C * (z + GELU_A * z * z * z))
}

#[cfg(test)]
fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + gelu_tanh(z))
}

/// Derivative of [`gelu`] given `t = gelu_tanh(z)`.
fn gelu_grad(z: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back(dy: &[f64], c: &LnCache, d: usize, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n = c.rstd.len();
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let (dyr, xh) = (&dy[i * d..(i + 1) * d], &c.xhat[i * d..(i + 1) * d]);
        let (mut m1, mut m2) = (0.0, 0.0);
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for j in 0..d {
            dx[i * d + j] = c.rstd[i] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

struct LayerCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, one `n x n` block per head.
    p: Vec<f64>,
    o: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    z: Vec<f64>,
    th: Vec<f64>,
    act: Vec<f64>,
}

struct Cache {
    feats: Vec<f64>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Vec<f64>,
}

fn check_prompt(prompt: &Prompt) -> Result<(usize, Vec<usize>)> {
    let n = prompt.tokens.len();
    if prompt.mask.len() != n * n {
        return Err(Error::Contract(format!(
            "mask has {} entries for {n} tokens",
            prompt.mask.len()
        )));
    }
    let queries = prompt.query_positions();
    if queries.is_empty() {
        return Err(Error::Contract("prompt has no query tokens".into()));
    }
    for i in 0..n {
        if !prompt.mask[i * n..(i + 1) * n].iter().any(|&m| m) {
            return Err(Error::Contract(format!("token {i} may attend to nothing")));
        }
    }
    Ok((n, queries))
}

/// Masked multi-head attention; returns the concatenated head outputs and,
/// when `keep`, the attention weights.
fn attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    mask: &[bool],
    n: usize,
    heads: usize,
    hd: usize,
    keep: bool,
) -> (Vec<f64>, Vec<f64>) {
    let a = heads * hd;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut o = vec![0.0; n * a];
    let mut kept = Vec::with_capacity(if keep { heads * n * n } else { 0 });
    let mut s = vec![0.0; n * n];
    for h in 0..heads {
        gemm(n, hd, n, View::cols(q, a, h * hd), View::cols(k, a, h * hd).t(), 0.0, &mut s, 0, n);
        for i in 0..n {
            let row = &mut s[i * n..(i + 1) * n];
            let allowed = &mask[i * n..(i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for (x, &m) in row.iter_mut().zip(allowed) {
                if m {
                    *x *= scale;
                    max = max.max(*x);
                } else {
                    *x = f64::NEG_INFINITY;
                }
            }
            let mut sum = 0.0;
            for (x, &m) in row.iter_mut().zip(allowed) {
                *x = if m { (*x - max).exp() } else { 0.0 };
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        gemm(n, n, hd, View::rm(&s, n), View::cols(v, a, h * hd), 0.0, &mut o, h * hd, a);
        if keep {
            kept.extend_from_slice(&s);
        }
    }
    (o, kept)
}

fn run(params: &ModelParams, prompt: &Prompt, keep: bool) -> Result<(Vec<f64>, Option<Cache>)> {
    let cfg = params.config;
    let (n, queries) = check_prompt(prompt)?;
    let (d, a, hid) = (cfg.model_dim, cfg.attn_dim(), cfg.hidden_dim());
    let feats: Vec<f64> = prompt.tokens.iter().flat_map(|t| t.features()).collect();
    let mut x = linear(&feats, n, FEATURE_WIDTH, &params.blocks[0].data, &params.blocks[1].data, d);
    let mut layers = Vec::new();
    for l in 0..cfg.layers {
        let w = |s| params.layer(l, s);
        let (h1, ln1) = layer_norm(&x, d, w(LN1_G), w(LN1_B));
        let q = linear(&h1, n, d, w(WQ), w(BQ), a);
        let k = linear(&h1, n, d, w(WK), w(BK), a);
        let v = linear(&h1, n, d, w(WV), w(BV), a);
        let (o, p) = attention(&q, &k, &v, &prompt.mask, n, cfg.heads, cfg.head_dim, keep);
        let att = linear(&o, n, a, w(WO), w(BO), d);
        for (xi, ai) in x.iter_mut().zip(&att) {
            *xi += ai;
        }
        let (h2, ln2) = layer_norm(&x, d, w(LN2_G), w(LN2_B));
        let z = linear(&h2, n, d, w(W1), w(B1), hid);
        let th: Vec<f64> = z.iter().map(|&v| gelu_tanh(v)).collect();
        let act: Vec<f64> = z.iter().zip(&th).map(|(&v, &t)| 0.5 * v * (1.0 + t)).collect();
        let f = linear(&act, n, hid, w(W2), w(B2), d);
        for (xi, fi) in x.iter_mut().zip(&f) {
            *xi += fi;
        }
        if keep {
            layers.push(LayerCache { ln1, h1, q, k, v, p, o, ln2, h2, z, th, act });
        }
    }
    let (hf, lnf) = layer_norm(&x, d, params.tail(0), params.tail(1));
    let (wr, br) = (params.tail(2), params.tail(3)[0]);
    let preds: Vec<f64> = queries
        .iter()
        .map(|&i| br + hf[i * d..(i + 1) * d].iter().zip(wr).map(|(h, w)| h * w).sum::<f64>())
        .collect();
    let cache = keep.then_some(Cache { feats, layers, lnf, hf });
    Ok((preds, cache))
}

/// One prediction per query token, in token order.
pub fn forward(params: &ModelParams, prompt: &Prompt) -> Result<Vec<f64>> {
    Ok(run(params, prompt, false)?.0)
}

fn mse(preds: &[f64], prompt: &Prompt) -> Result<f64> {
    if prompt.targets.len() != preds.len() {
        return Err(Error::Contract(format!(
            "{} targets for {} queries",
            prompt.targets.len(),
            preds.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(&prompt.targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64)
}

/// Mean squared error over all query tokens.
pub fn loss(params: &ModelParams, prompt: &Prompt) -> Result<f64> {
    mse(&forward(params, prompt)?, prompt)
}

pub fn grad(params: &ModelParams, prompt: &Prompt) -> Result<ModelParams> {
    Ok(loss_and_grad(params, prompt)?.1)
}

fn pair_mut(g: &mut ModelParams, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i < j);
    let (lo, hi) = g.blocks.split_at_mut(j);
    (&mut lo[i].data, &mut hi[0].data)
}

/// Loss and its exact gradient with respect to every parameter.
pub fn loss_and_grad(params: &ModelParams, prompt: &Prompt) -> Result<(f64, ModelParams)> {
    let (preds, cache) = run(params, prompt, true)?;
    let loss = mse(&preds, prompt)?;
    let cache = cache.expect("cache kept");
    let cfg = params.config;
    let n = prompt.tokens.len();
    let (d, a, hid, heads, hd) = (cfg.model_dim, cfg.attn_dim(), cfg.hidden_dim(), cfg.heads, cfg.head_dim);
    let mut g = params.zeros_like();
    let tail = 2 + 16 * cfg.layers;

    let queries = prompt.query_positions();
    let scale_out = 2.0 / preds.len() as f64;
    let mut dx = vec![0.0; n * d];
    {
        let wr = params.tail(2);
        let (dwr, dbr) = pair_mut(&mut g, tail + 2, tail + 3);
        for ((&i, p), t) in queries.iter().zip(&preds).zip(&prompt.targets) {
            let dp = scale_out * (p - t);
            dbr[0] += dp;
            for j in 0..d {
                dwr[j] += dp * cache.hf[i * d + j];
                dx[i * d + j] += dp * wr[j];
            }
        }
    }
    {
        let (dgf, dbf) = pair_mut(&mut g, tail, tail + 1);
        dx = layer_norm_back(&dx, &cache.lnf, d, params.tail(0), dgf, dbf);
    }

    let scale = 1.0 / (hd as f64).sqrt();
    for l in (0..cfg.layers).rev() {
        let c = &cache.layers[l];
        let w = |s| params.layer(l, s);
        let base = 2 + 16 * l;

        let dact = {
            let (dw2, db2) = pair_mut(&mut g, base + W2, base + B2);
            linear_back(&c.act, n, hid, w(W2), d, &dx, dw2, db2)
        };
        let dz: Vec<f64> = dact
            .iter()
            .zip(c.z.iter().zip(&c.th))
            .map(|(da, (&z, &t))| da * gelu_grad(z, t))
            .collect();
        let dh2 = {
            let (dw1, db1) = pair_mut(&mut g, base + W1, base + B1);
            linear_back(&c.h2, n, d, w(W1), hid, &dz, dw1, db1)
        };
        {
            let (dg2, db2) = pair_mut(&mut g, base + LN2_G, base + LN2_B);
            let d2 = layer_norm_back(&dh2, &c.ln2, d, w(LN2_G), dg2, db2);
            for (x, y) in dx.iter_mut().zip(&d2) {
                *x += y;
            }
        }

        let d_o = {
            let (dwo, dbo) = pair_mut(&mut g, base + WO, base + BO);
            linear_back(&c.o, n, a, w(WO), d, &dx, dwo, dbo)
        };
        let mut dq = vec![0.0; n * a];
        let mut dk = vec![0.0; n * a];
        let mut dv = vec![0.0; n * a];
        let mut dp = vec![0.0; n * n];
        for h in 0..heads {
            let p = &c.p[h * n * n..(h + 1) * n * n];
            let off = h * hd;
            gemm(n, hd, n, View::cols(&d_o, a, off), View::cols(&c.v, a, off).t(), 0.0, &mut dp, 0, n);
            gemm(n, n, hd, View::rm(p, n).t(), View::cols(&d_o, a, off), 0.0, &mut dv, off, a);
            for i in 0..n {
                let pr = &p[i * n..(i + 1) * n];
                let dr = &mut dp[i * n..(i + 1) * n];
                let dot: f64 = pr.iter().zip(dr.iter()).map(|(x, y)| x * y).sum();
                for (x, &pv) in dr.iter_mut().zip(pr) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            gemm(n, n, hd, View::rm(&dp, n), View::cols(&c.k, a, off), 0.0, &mut dq, off, a);
            gemm(n, n, hd, View::rm(&dp, n).t(), View::cols(&c.q, a, off), 0.0, &mut dk, off, a);
        }
        let mut dh1 = {
            let (dw, db) = pair_mut(&mut g, base + WQ, base + BQ);
            linear_back(&c.h1, n, d, w(WQ), a, &dq, dw, db)
        };
        for (dwi, dbi, dy) in [(WK, BK, &dk), (WV, BV, &dv)] {
            let (dw, db) = pair_mut(&mut g, base + dwi, base + dbi);
            let part = linear_back(&c.h1, n, d, w(dwi), a, dy, dw, db);
            for (x, y) in dh1.iter_mut().zip(&part) {
                *x += y;
            }
        }
        let (dg1, db1) = pair_mut(&mut g, base + LN1_G, base + LN1_B);
        let d1 = layer_norm_back(&dh1, &c.ln1, d, w(LN1_G), dg1, db1);
        for (x, y) in dx.iter_mut().zip(&d1) {
            *x += y;
        }
    }
    {
        let (dwe, dbe) = pair_mut(&mut g, 0, 1);
        linear_back(&cache.feats, n, FEATURE_WIDTH, &params.blocks[0].data, d, &dx, dwe, dbe);
    }
    if let Some(name) = g.first_non_finite() {
        return Err(Error::NonFiniteGradient { block: name.to_string() });
    }
    Ok((loss, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::prompt::{build_mask, Role, Token};
    use crate::randproc::RngStream;

    fn tok(t: f64, role: Role, value: f64, ex: usize) -> Token {
        Token { t, x: 0.0, role, value, example_index: ex }
    }

    fn small_prompt() -> Prompt {
        let tokens = vec![
            tok(0.1, Role::DemoCond, 0.3, 1),
            tok(0.4, Role::DemoCond, -0.2, 1),
            tok(0.2, Role::DemoQoi, 0.9, 1),
            tok(0.7, Role::QuestionCond, 0.5, 2),
            tok(0.3, Role::QuestionCond, -0.6, 2),
            tok(0.2, Role::Query, 0.0, 2),
            tok(0.9, Role::Query, 0.0, 2),
        ];
        let mask = build_mask(&tokens);
        Prompt { tokens, mask, n_examples: 1, targets: vec![0.4, -0.1] }
    }

    #[test]
    fn gelu_derivative() {
        for z in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
            assert!((fd - gelu_grad(z, gelu_tanh(z))).abs() < 1e-8);
            assert!((gelu_tanh(z) - (GELU_C * (z + GELU_A * z * z * z)).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let cfg = ModelConfig::with_dims(1, 2, 8, 2);
        let params = init_params(&cfg, &mut RngStream::new(1, 0)).unwrap();
        let mut p = small_prompt();
        p.targets = forward(&params, &p).unwrap();
        let (l, g) = loss_and_grad(&params, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.blocks.iter().all(|b| b.data.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn missing_queries_is_contract_error() {
        let cfg = ModelConfig::with_dims(1, 1, 4, 1);
        let params = init_params(&cfg, &mut RngStream::new(1, 0)).unwrap();
        let mut p = small_prompt();
        p.tokens.truncate(5);
        p.mask = build_mask(&p.tokens);
        p.targets.clear();
        assert!(matches!(forward(&params, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn loss_of_constant_predictions() {
        let cfg = ModelConfig::with_dims(1, 1, 4, 1);
        let mut params = ModelParams::zeros(cfg).unwrap();
        params.blocks.iter_mut().filter(|b| b.name.ends_with(".scale")).for_each(|b| b.data.fill(1.0));
        let mut p = small_prompt();
        p.targets = vec![1.0, 1.0];
        assert_eq!(loss(&params, &p).unwrap(), 1.0);
    }
}
