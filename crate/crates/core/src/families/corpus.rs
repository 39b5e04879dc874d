use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridfn::FunctionSample;
use crate::io::write_atomic_with;
use crate::randproc::{derive_seed, RbfKernelSpec, RngStream};

use super::generate::{generate_record_with, GenSettings};
use super::{family, sample_operator_with_id, DemoRecord, Direction, OperatorSpec};

pub const CORPUS_FORMAT_VERSION: u64 = 1;

/// Five demonstrations plus one question.
pub const MIN_RECORDS_PER_OPERATOR: usize = 6;

/// First line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub format_version: u64,
    pub family: String,
    pub direction: Direction,
    pub grids: GenSettings,
    pub gp: RbfKernelSpec,
    pub ranges: BTreeMap<String, [f64; 2]>,
    pub base_seed: u64,
    pub n_operators: usize,
    pub records_per_operator: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    operator_id: u64,
    params: BTreeMap<String, f64>,
    seed: u64,
    cond: FunctionSample,
    qoi: FunctionSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub meta: CorpusMeta,
    pub records: Vec<DemoRecord>,
}

impl Corpus {
    /// Records grouped by operator id, in id order.
    pub fn by_operator(&self) -> Vec<Vec<&DemoRecord>> {
        let mut groups: BTreeMap<u64, Vec<&DemoRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry(r.operator.operator_id).or_default().push(r);
        }
        groups.into_values().collect()
    }
}

/// Seed of the stream that draws the parameters of operator `op`.
fn operator_seed(base_seed: u64, op: u64) -> u64 {
    derive_seed(&[base_seed, op, u64::MAX])
}

/// Generates `n_operators` operators of one family with
/// `records_per_operator` records each. Output depends only on the
/// arguments, not on the thread count.
pub fn generate_corpus(
    family_id: &str,
    n_operators: usize,
    records_per_operator: usize,
    base_seed: u64,
    settings: &GenSettings,
) -> Result<Corpus> {
    let fam = family(family_id)?;
    if n_operators == 0 {
        return Err(Error::InvalidInput("a corpus needs at least one operator".into()));
    }
    if records_per_operator < MIN_RECORDS_PER_OPERATOR {
        return Err(Error::InvalidInput(format!(
            "{records_per_operator} records per operator cannot fill a {}-demo prompt and its question",
            MIN_RECORDS_PER_OPERATOR - 1
        )));
    }
    let ops: Vec<OperatorSpec> = (0..n_operators as u64)
        .map(|op| {
            let mut rng = RngStream::new(operator_seed(base_seed, op), 0);
            sample_operator_with_id(fam.id, &mut rng, op)
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..n_operators)
        .flat_map(|op| (0..records_per_operator as u64).map(move |r| (op, r)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(op, rec)| {
            let seed = derive_seed(&[base_seed, op as u64, rec]);
            generate_record_with(&ops[op], seed, settings)
        })
        .collect::<Result<Vec<_>>>()?;
    let gp = match fam.kind {
        super::Kind::ConservationLaw | super::Kind::Pde2d => RbfKernelSpec::for_domain(1.0),
        _ => settings.gp(),
    };
    Ok(Corpus {
        meta: CorpusMeta {
            format_version: CORPUS_FORMAT_VERSION,
            family: fam.id.to_string(),
            direction: fam.direction,
            grids: settings.clone(),
            gp,
            ranges: fam.ranges(),
            base_seed,
            n_operators,
            records_per_operator,
        },
        records,
    })
}

/// Writes JSON lines through a temporary file in the same directory, so a
/// failed write never leaves a truncated corpus behind.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_atomic_with(path, |w| {
        serde_json::to_writer(&mut *w, &corpus.meta)?;
        w.write_all(b"\n")?;
        for r in &corpus.records {
            let line = RecordLine {
                operator_id: r.operator.operator_id,
                params: r.operator.params.clone(),
                seed: r.seed,
                cond: r.condition.clone(),
                qoi: r.qoi.clone(),
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn parse_err(line: usize, msg: impl ToString) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let first = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(parse_err(1, "empty corpus file")),
    };
    let head: serde_json::Value = serde_json::from_str(&first).map_err(|e| parse_err(1, e))?;
    let version = head
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| parse_err(1, "missing format_version"))?;
    if version != CORPUS_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CORPUS_FORMAT_VERSION,
        });
    }
    let meta: CorpusMeta = serde_json::from_value(head).map_err(|e| parse_err(1, e))?;
    let fam = family(&meta.family)?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(no, e))?;
        let operator = OperatorSpec::new(fam.id, rec.params, rec.operator_id)
            .map_err(|e| parse_err(no, e))?;
        rec.cond.validate().map_err(|e| parse_err(no, e))?;
        rec.qoi.validate().map_err(|e| parse_err(no, e))?;
        records.push(DemoRecord {
            operator,
            condition: rec.cond,
            qoi: rec.qoi,
            seed: rec.seed,
        });
    }
    Ok(Corpus { meta, records })
}
