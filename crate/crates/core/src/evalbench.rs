//! Error metrics, demo-count sweeps, the out-of-distribution heat study and
//! the inference-time scaling benchmark.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{
    generate_record_with, sample_operator_with_id, Corpus, DemoRecord, GenSettings,
};
use crate::gridfn::Coord;
use crate::io::write_atomic;
use crate::model::{forward, ModelParams};
use crate::prompt::{build_eval_prompt, build_prompt, subsample_function, subsample_record, MAX_DEMOS};
use crate::randproc::{derive_seed, RngStream};
use crate::solvers::poisson_solve;
use crate::training::split_operators;

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `|pred - truth|_2 / |truth|_2`.
pub fn relative_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Sizing(format!(
            "{} predictions for {} reference values",
            pred.len(),
            truth.len()
        )));
    }
    let denom = l2(truth.iter().copied());
    if denom == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(l2(pred.iter().zip(truth).map(|(p, t)| p - t)) / denom)
}

/// Relative error, or the absolute L2 error when the reference is zero.
/// The flag reports which one was used.
pub fn relative_or_absolute(pred: &[f64], truth: &[f64]) -> Result<(f64, bool)> {
    match relative_error(pred, truth) {
        Ok(e) => Ok((e, false)),
        Err(Error::ZeroNorm) => Ok((l2(pred.iter().copied()), true)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalPattern {
    /// Squared Frobenius norm of the element-wise difference over the
    /// element count.
    pub token_error: f64,
    /// Mean squared difference between the column means.
    pub average_error: f64,
}

/// Compares `E x P` prediction and truth matrices (rows are examples,
/// columns are points) token by token and through their column averages.
pub fn global_pattern_metrics(preds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<GlobalPattern> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::Sizing(format!(
            "{} prediction rows for {} truth rows",
            preds.len(),
            truths.len()
        )));
    }
    let p = preds[0].len();
    if p == 0 || preds.iter().chain(truths).any(|r| r.len() != p) {
        return Err(Error::Sizing("rows must share one non-zero length".into()));
    }
    let e = preds.len() as f64;
    let mut sq = 0.0;
    let mut avg = 0.0;
    for j in 0..p {
        let mut diff_mean = 0.0;
        for (pr, tr) in preds.iter().zip(truths) {
            let d = pr[j] - tr[j];
            sq += d * d;
            diff_mean += d;
        }
        diff_mean /= e;
        avg += diff_mean * diff_mean;
    }
    Ok(GlobalPattern {
        token_error: sq / (e * p as f64),
        average_error: avg / p as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub family: String,
    pub demo_count: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Examples scored with the absolute error because the truth was zero.
    pub zero_norm_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub family: String,
    pub demo_count: usize,
    pub prompt_index: usize,
    pub operator_id: u64,
    pub error: f64,
    pub coords: Vec<Coord>,
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Per-example results, kept when requested.
    pub examples: Vec<ExampleResult>,
}

impl EvalReport {
    pub fn row(&self, family: &str, demo_count: usize) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.family == family && r.demo_count == demo_count)
    }

    /// Mean errors of `family` in demo-count order.
    pub fn means(&self, family: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.family == family).map(|r| r.mean).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,demo_count,mean_rel_error,std_rel_error,count,zero_norm_fallbacks\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.family, r.demo_count, r.mean, r.std, r.count, r.zero_norm_fallbacks
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn write_examples_json(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(&self.examples)?.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub demo_counts: Vec<usize>,
    pub n_eval: usize,
    pub seed: u64,
    /// Points kept per demo function and for the question condition. The
    /// question QoI is always queried in full.
    pub tokens_per_function: Option<usize>,
    pub keep_examples: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            demo_counts: (1..=MAX_DEMOS).collect(),
            n_eval: 200,
            seed: 0,
            tokens_per_function: Some(12),
            keep_examples: false,
        }
    }
}

impl EvalOptions {
    fn validate(&self) -> Result<()> {
        if self.n_eval == 0 {
            return Err(Error::InvalidInput("at least one evaluation prompt is required".into()));
        }
        if self.demo_counts.is_empty() || self.demo_counts.iter().any(|&n| n == 0 || n > MAX_DEMOS) {
            return Err(Error::InvalidInput(format!(
                "demo counts must lie in 1..={MAX_DEMOS}, got {:?}",
                self.demo_counts
            )));
        }
        Ok(())
    }

    fn max_demos(&self) -> usize {
        self.demo_counts.iter().copied().max().unwrap_or(1)
    }
}

/// One question with a fixed pool of demos. Prompts for smaller demo
/// counts use a prefix of the same pool, so the sweep is paired.
struct Case {
    family: String,
    operator_id: u64,
    question: DemoRecord,
    demos: Vec<DemoRecord>,
}

fn prepare_case(group: &[DemoRecord], n_demos: usize, k: Option<usize>, rng: &mut RngStream) -> Result<Case> {
    if group.len() < n_demos + 1 {
        return Err(Error::Sizing(format!(
            "operator has {} records, {} needed",
            group.len(),
            n_demos + 1
        )));
    }
    let idx = rng.choose_distinct(group.len(), n_demos + 1);
    let q = &group[idx[0]];
    let cond = match k {
        Some(k) => subsample_function(&q.condition, k.min(q.condition.len()), rng)?,
        None => q.condition.clone(),
    };
    let demos = idx[1..]
        .iter()
        .map(|&i| subsample_record(&group[i], k, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Case {
        family: q.operator.family.clone(),
        operator_id: q.operator.operator_id,
        question: DemoRecord {
            condition: cond,
            ..q.clone()
        },
        demos,
    })
}

fn score_cases(params: &ModelParams, cases: &[Case], opts: &EvalOptions) -> Result<EvalReport> {
    let scored = cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            opts.demo_counts
                .iter()
                .map(|&n| {
                    let prompt = build_eval_prompt(&c.demos[..n], &c.question.qoi, &c.question.condition)?;
                    let pred = forward(params, &prompt)?;
                    let (err, flagged) = relative_or_absolute(&pred, &c.question.qoi.values)?;
                    Ok((
                        ExampleResult {
                            family: c.family.clone(),
                            demo_count: n,
                            prompt_index: i,
                            operator_id: c.operator_id,
                            error: err,
                            coords: c.question.qoi.coords.clone(),
                            pred,
                            truth: c.question.qoi.values.clone(),
                        },
                        flagged,
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut families: Vec<String> = Vec::new();
    for c in cases {
        if !families.contains(&c.family) {
            families.push(c.family.clone());
        }
    }
    let mut report = EvalReport::default();
    for fam in &families {
        for &n in &opts.demo_counts {
            let errs: Vec<(f64, bool)> = scored
                .iter()
                .flatten()
                .filter(|(e, _)| &e.family == fam && e.demo_count == n)
                .map(|(e, f)| (e.error, *f))
                .collect();
            let count = errs.len();
            let mean = errs.iter().map(|e| e.0).sum::<f64>() / count as f64;
            let var = if count > 1 {
                errs.iter().map(|e| (e.0 - mean).powi(2)).sum::<f64>() / (count - 1) as f64
            } else {
                0.0
            };
            report.rows.push(EvalRow {
                family: fam.clone(),
                demo_count: n,
                mean,
                std: var.sqrt(),
                count,
                zero_norm_fallbacks: errs.iter().filter(|e| e.1).count(),
            });
        }
    }
    if opts.keep_examples {
        report.examples = scored.into_iter().flatten().map(|(e, _)| e).collect();
    }
    Ok(report)
}

/// Mean relative error on held-out operators for each demo count.
pub fn error_vs_demos(params: &ModelParams, corpus: &Corpus, opts: &EvalOptions) -> Result<EvalReport> {
    opts.validate()?;
    let pool = split_operators(corpus)?;
    let max = opts.max_demos();
    let cases = (0..opts.n_eval)
        .map(|i| {
            let mut rng = RngStream::new(derive_seed(&[opts.seed, i as u64]), 0);
            let group = &pool.test[rng.below(pool.test.len())];
            prepare_case(group, max, opts.tokens_per_function, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    score_cases(params, &cases, opts)
}

/// Heat variants used as out-of-distribution probes.
pub const HEAT_VARIANTS: [&str; 2] = ["heat_hom_fwd", "heat_fwd"];

/// Error versus demo count on heat operators the model never trained on,
/// separately for the homogeneous and the nonhomogeneous variant. Example
/// results are always kept for the global-pattern analysis.
pub fn heat_ood_study(
    params: &ModelParams,
    trained_families: &[String],
    n_cases: usize,
    opts: &EvalOptions,
    settings: &GenSettings,
) -> Result<EvalReport> {
    if let Some(f) = trained_families.iter().find(|f| f.starts_with("heat")) {
        return Err(Error::Contract(format!(
            "model was trained on {f}; heat is no longer out of distribution"
        )));
    }
    if n_cases == 0 {
        return Err(Error::InvalidInput("at least one heat case is required".into()));
    }
    let opts = EvalOptions {
        n_eval: n_cases,
        keep_examples: true,
        ..opts.clone()
    };
    opts.validate()?;
    let max = opts.max_demos();
    let mut cases = Vec::new();
    for (v, fam) in HEAT_VARIANTS.iter().enumerate() {
        for c in 0..n_cases {
            let base = derive_seed(&[opts.seed, v as u64, c as u64]);
            let op = sample_operator_with_id(fam, &mut RngStream::new(base, 0), c as u64)?;
            let group = (0..=max as u64)
                .map(|r| generate_record_with(&op, derive_seed(&[base, r]), settings))
                .collect::<Result<Vec<_>>>()?;
            let mut rng = RngStream::new(base, 1);
            cases.push(prepare_case(&group, max, opts.tokens_per_function, &mut rng)?);
        }
    }
    score_cases(params, &cases, &opts)
}

/// Question predictions and truths of one family and demo count as
/// matrices for [`global_pattern_metrics`].
pub fn prediction_matrix(report: &EvalReport, family: &str, demo_count: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    report
        .examples
        .iter()
        .filter(|e| e.family == family && e.demo_count == demo_count)
        .map(|e| (e.pred.clone(), e.truth.clone()))
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub model_time_s: f64,
    pub solver_time_s: f64,
    pub model_rel_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,model_time_s,solver_time_s,model_rel_error\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:e},{:e},{}", r.n, r.model_time_s, r.solver_time_s, r.model_rel_error);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Largest Poisson grid the benchmark accepts.
pub const MAX_BENCH_SIZE: usize = 500;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time of model inference on an `N`-point Poisson prompt and
/// of the tridiagonal solve of the same question, for each `N` in `sizes`.
pub fn bench_scaling(
    params: &ModelParams,
    sizes: &[usize],
    repeats: usize,
    n_demos: usize,
    seed: u64,
) -> Result<BenchReport> {
    if repeats < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 repeats, got {repeats}")));
    }
    if sizes.is_empty() || sizes.iter().any(|&n| !(3..=MAX_BENCH_SIZE).contains(&n)) {
        return Err(Error::InvalidInput(format!(
            "sizes must lie in 3..={MAX_BENCH_SIZE}, got {sizes:?}"
        )));
    }
    if n_demos == 0 || n_demos > MAX_DEMOS {
        return Err(Error::InvalidInput(format!("demo count must lie in 1..={MAX_DEMOS}")));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    let mut report = BenchReport::default();
    for n in sorted {
        let settings = GenSettings {
            points: n,
            ..GenSettings::default()
        };
        let grid = settings.grid()?;
        let base = derive_seed(&[seed, n as u64]);
        let op = sample_operator_with_id("poisson_fwd", &mut RngStream::new(base, 0), 0)?;
        let records = (0..=n_demos as u64)
            .map(|r| generate_record_with(&op, derive_seed(&[base, r]), &settings))
            .collect::<Result<Vec<_>>>()?;
        let (question, demos) = records.split_last().expect("at least two records");
        let prompt = build_prompt(demos, &question.condition, &question.qoi.coords)?;
        let (u0, ul) = (op.param("u0"), op.param("uL"));

        let mut model_times = Vec::with_capacity(repeats);
        let mut pred = Vec::new();
        for _ in 0..repeats {
            let t = Instant::now();
            pred = forward(params, &prompt)?;
            model_times.push(t.elapsed().as_secs_f64());
        }
        let mut solver_times = Vec::with_capacity(repeats);
        let mut reference = Vec::new();
        for _ in 0..repeats {
            let t = Instant::now();
            reference = poisson_solve(&question.condition.values, u0, ul, &grid)?;
            solver_times.push(t.elapsed().as_secs_f64());
        }
        let (err, _) = relative_or_absolute(&pred, &reference)?;
        report.rows.push(BenchRow {
            n,
            model_time_s: median(model_times),
            solver_time_s: median(solver_times),
            model_rel_error: err,
        });
    }
    Ok(report)
}
