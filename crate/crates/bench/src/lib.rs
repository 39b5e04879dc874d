//! Fixtures shared by the benchmarks.

use icon_core::families::{generate_record_with, sample_operator_with_id, GenSettings};
use icon_core::prompt::{build_eval_prompt, build_training_prompt, subsample_record};
use icon_core::randproc::derive_seed;
use icon_core::{DemoRecord, Prompt, Result, RngStream};

/// `n + 1` records of one operator of `family` on an `points`-point grid.
pub fn records(family: &str, n: usize, points: usize, seed: u64) -> Result<Vec<DemoRecord>> {
    let s = GenSettings {
        points,
        ..GenSettings::default()
    };
    let op = sample_operator_with_id(family, &mut RngStream::new(seed, 0), 0)?;
    (0..=n as u64)
        .map(|r| generate_record_with(&op, derive_seed(&[seed, r]), &s))
        .collect()
}

/// Evaluation prompt with `n` demos, every function kept in full.
pub fn eval_prompt(family: &str, n: usize, points: usize, seed: u64) -> Result<Prompt> {
    let recs = records(family, n, points, seed)?;
    let (q, demos) = recs.split_last().expect("at least one record");
    build_eval_prompt(demos, &q.qoi, &q.condition)
}

/// Training prompt with `n` demos and `k` points per function.
pub fn training_prompt(family: &str, n: usize, k: usize, seed: u64) -> Result<Prompt> {
    let mut rng = RngStream::new(seed, 1);
    let recs = records(family, n, 50, seed)?
        .iter()
        .map(|r| subsample_record(r, Some(k), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let (q, demos) = recs.split_last().expect("at least one record");
    build_training_prompt(demos, q, false)
}
