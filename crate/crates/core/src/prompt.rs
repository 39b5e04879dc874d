//! Packing demonstrations and a question into a token sequence with its
//! attention mask.
//!
//! Token order is `demo1-cond, demo1-qoi, ..., demoN-cond, demoN-qoi,
//! question-cond, queries`. Example `i` (the question is example `N + 1`)
//! sees data of examples `1..i-1` in full. Within example `i`, condition
//! tokens see only the condition, QoI tokens see the condition and the QoI,
//! and query tokens see only the condition. Query tokens are never visible
//! to anything, so values placed on them cannot leak.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::families::DemoRecord;
use crate::gridfn::{Coord, FunctionSample};
use crate::randproc::RngStream;

/// Largest number of demonstrations in one prompt.
pub const MAX_DEMOS: usize = 5;

/// Largest example index: five demos plus the question.
pub const MAX_EXAMPLES: usize = MAX_DEMOS + 1;

/// Frequencies of the sinusoidal coordinate features.
const FOURIER_MODES: usize = 4;

/// Width of [`Token::features`].
pub const FEATURE_WIDTH: usize = 3 + 4 * FOURIER_MODES + 4 + MAX_EXAMPLES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    DemoCond,
    DemoQoi,
    QuestionCond,
    Query,
}

impl Role {
    fn slot(self) -> usize {
        match self {
            Role::DemoCond => 0,
            Role::DemoQoi => 1,
            Role::QuestionCond => 2,
            Role::Query => 3,
        }
    }

    pub fn is_condition(self) -> bool {
        matches!(self, Role::DemoCond | Role::QuestionCond)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub t: f64,
    pub x: f64,
    pub role: Role,
    pub value: f64,
    /// One-based example number; the question comes after the demos.
    pub example_index: usize,
}

impl Token {
    /// Model input: coordinates, value, sinusoidal coordinate features and
    /// one-hot role and example index.
    pub fn features(&self) -> [f64; FEATURE_WIDTH] {
        let mut f = [0.0; FEATURE_WIDTH];
        f[0] = self.t;
        f[1] = self.x;
        f[2] = self.value;
        for m in 0..FOURIER_MODES {
            let w = std::f64::consts::PI * (m + 1) as f64;
            let o = 3 + 4 * m;
            f[o] = (w * self.t).sin();
            f[o + 1] = (w * self.t).cos();
            f[o + 2] = (w * self.x).sin();
            f[o + 3] = (w * self.x).cos();
        }
        let base = 3 + 4 * FOURIER_MODES;
        f[base + self.role.slot()] = 1.0;
        f[base + 4 + self.example_index - 1] = 1.0;
        f
    }
}

/// Whether token `q` may attend to token `k`.
pub fn visible(q: &Token, k: &Token) -> bool {
    if k.role == Role::Query {
        return false;
    }
    if k.example_index < q.example_index {
        return true;
    }
    if k.example_index > q.example_index {
        return false;
    }
    match q.role {
        Role::DemoQoi => true,
        Role::DemoCond | Role::QuestionCond | Role::Query => k.role.is_condition(),
    }
}

/// Row-major visibility matrix: entry `q * n + k` is true when token `q`
/// may attend to token `k`.
pub fn build_mask(tokens: &[Token]) -> Vec<bool> {
    let n = tokens.len();
    let mut mask = Vec::with_capacity(n * n);
    for q in tokens {
        mask.extend(tokens.iter().map(|k| visible(q, k)));
    }
    mask
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub tokens: Vec<Token>,
    #[serde(skip)]
    pub mask: Vec<bool>,
    /// Number of demonstrations.
    pub n_examples: usize,
    /// Known values at the query tokens, in query order. Empty when the
    /// prompt was built for inference without a reference.
    pub targets: Vec<f64>,
}

impl Prompt {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn query_positions(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::Query)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_queries(&self) -> usize {
        self.tokens.iter().filter(|t| t.role == Role::Query).count()
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.mask[q * self.tokens.len() + k]
    }

    /// Coordinates of the query tokens that belong to the question.
    pub fn question_queries(&self) -> Vec<usize> {
        let q = self.n_examples + 1;
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::Query && t.example_index == q)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks token ordering, roles, values and target alignment.
    pub fn validate(&self) -> Result<()> {
        let q = self.n_examples + 1;
        if self.n_examples > MAX_DEMOS {
            return Err(Error::Capacity {
                max: MAX_DEMOS,
                got: self.n_examples,
            });
        }
        let mut last = (0usize, 0usize);
        let mut in_queries = false;
        for (i, t) in self.tokens.iter().enumerate() {
            if !(t.t.is_finite() && t.x.is_finite() && t.value.is_finite()) {
                return Err(Error::NonFinite(format!("token {i}")));
            }
            if t.example_index == 0 || t.example_index > q {
                return Err(Error::Contract(format!(
                    "token {i} has example index {} outside 1..={q}",
                    t.example_index
                )));
            }
            let expected_question = t.example_index == q;
            match t.role {
                Role::Query => {
                    if t.value != 0.0 {
                        return Err(Error::Contract(format!("query token {i} carries a value")));
                    }
                    in_queries = true;
                }
                role => {
                    if in_queries {
                        return Err(Error::Contract(format!("data token {i} follows the queries")));
                    }
                    if (role == Role::QuestionCond) != expected_question {
                        return Err(Error::Contract(format!(
                            "token {i}: role {role:?} does not match example index {}",
                            t.example_index
                        )));
                    }
                    let key = (t.example_index, role.slot());
                    if key < last {
                        return Err(Error::Contract(format!("token {i} is out of order")));
                    }
                    last = key;
                }
            }
        }
        if !self.targets.is_empty() && self.targets.len() != self.n_queries() {
            return Err(Error::Sizing(format!(
                "{} targets for {} query tokens",
                self.targets.len(),
                self.n_queries()
            )));
        }
        ensure_finite(&self.targets, "target")
    }

    /// Reads a prompt file. The mask is always rebuilt from the tokens.
    pub fn load(path: &Path) -> Result<Prompt> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Prompt> {
        let mut p: Prompt = serde_json::from_str(text)?;
        p.validate()?;
        p.mask = build_mask(&p.tokens);
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn push_fn(tokens: &mut Vec<Token>, fs: &FunctionSample, role: Role, example_index: usize) {
    tokens.extend(fs.coords.iter().zip(&fs.values).map(|(c, &v)| Token {
        t: c.t,
        x: c.x,
        role,
        value: v,
        example_index,
    }));
}

fn push_queries(tokens: &mut Vec<Token>, coords: &[Coord], example_index: usize) {
    tokens.extend(coords.iter().map(|c| Token {
        t: c.t,
        x: c.x,
        role: Role::Query,
        value: 0.0,
        example_index,
    }));
}

fn check_demos(demos: &[DemoRecord]) -> Result<()> {
    if demos.len() > MAX_DEMOS {
        return Err(Error::Capacity {
            max: MAX_DEMOS,
            got: demos.len(),
        });
    }
    if let Some(first) = demos.first() {
        if let Some(other) = demos.iter().find(|d| d.operator != first.operator) {
            return Err(Error::Contract(format!(
                "demos mix operators {} #{} and {} #{}",
                first.operator.family,
                first.operator.operator_id,
                other.operator.family,
                other.operator.operator_id
            )));
        }
    }
    Ok(())
}

/// Inference prompt: demos, the question condition and queries for the
/// question only. Targets are left empty.
pub fn build_prompt(
    demos: &[DemoRecord],
    question_cond: &FunctionSample,
    query_coords: &[Coord],
) -> Result<Prompt> {
    check_demos(demos)?;
    if question_cond.is_empty() || query_coords.is_empty() {
        return Err(Error::Sizing("question needs condition and query points".into()));
    }
    let mut tokens = Vec::new();
    for (i, d) in demos.iter().enumerate() {
        push_fn(&mut tokens, &d.condition, Role::DemoCond, i + 1);
        push_fn(&mut tokens, &d.qoi, Role::DemoQoi, i + 1);
    }
    let q = demos.len() + 1;
    push_fn(&mut tokens, question_cond, Role::QuestionCond, q);
    push_queries(&mut tokens, query_coords, q);
    let mask = build_mask(&tokens);
    Ok(Prompt {
        tokens,
        mask,
        n_examples: demos.len(),
        targets: Vec::new(),
    })
}

/// Same as [`build_prompt`] with the question's reference values attached.
pub fn build_eval_prompt(demos: &[DemoRecord], question: &FunctionSample, cond: &FunctionSample) -> Result<Prompt> {
    let mut p = build_prompt(demos, cond, &question.coords)?;
    p.targets = question.values.clone();
    Ok(p)
}

/// Training prompt with queries for every demo's QoI (from the second demo
/// on, or from the first when `include_first_demo`) and for the question.
/// `question` must come from the same operator as the demos.
pub fn build_training_prompt(
    demos: &[DemoRecord],
    question: &DemoRecord,
    include_first_demo: bool,
) -> Result<Prompt> {
    check_demos(demos)?;
    if demos.first().is_some_and(|d| d.operator != question.operator) {
        return Err(Error::Contract("question comes from a different operator".into()));
    }
    let mut tokens = Vec::new();
    for (i, d) in demos.iter().enumerate() {
        push_fn(&mut tokens, &d.condition, Role::DemoCond, i + 1);
        push_fn(&mut tokens, &d.qoi, Role::DemoQoi, i + 1);
    }
    let q = demos.len() + 1;
    push_fn(&mut tokens, &question.condition, Role::QuestionCond, q);
    let mut targets = Vec::new();
    let skip = usize::from(!include_first_demo);
    for (i, d) in demos.iter().enumerate().skip(skip) {
        push_queries(&mut tokens, &d.qoi.coords, i + 1);
        targets.extend_from_slice(&d.qoi.values);
    }
    push_queries(&mut tokens, &question.qoi.coords, q);
    targets.extend_from_slice(&question.qoi.values);
    ensure_finite(&targets, "target")?;
    let mask = build_mask(&tokens);
    Ok(Prompt {
        tokens,
        mask,
        n_examples: demos.len(),
        targets,
    })
}

/// `k` points drawn uniformly without replacement, in draw order.
pub fn subsample_function(fs: &FunctionSample, k: usize, rng: &mut RngStream) -> Result<FunctionSample> {
    if k > fs.len() {
        return Err(Error::Sizing(format!(
            "cannot keep {k} of {} points",
            fs.len()
        )));
    }
    let idx = rng.choose_distinct(fs.len(), k);
    Ok(FunctionSample {
        coords: idx.iter().map(|&i| fs.coords[i]).collect(),
        values: idx.iter().map(|&i| fs.values[i]).collect(),
    })
}

/// Subsamples condition and QoI of a record; `None` keeps every point.
pub fn subsample_record(r: &DemoRecord, k: Option<usize>, rng: &mut RngStream) -> Result<DemoRecord> {
    let Some(k) = k else { return Ok(r.clone()) };
    Ok(DemoRecord {
        operator: r.operator.clone(),
        condition: subsample_function(&r.condition, k.min(r.condition.len()), rng)?,
        qoi: subsample_function(&r.qoi, k.min(r.qoi.len()), rng)?,
        seed: r.seed,
    })
}
