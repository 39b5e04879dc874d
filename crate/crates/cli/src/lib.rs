//! Command-line front end for `icon-core`.
//!
//! Every command is deterministic given its flags and writes its outputs
//! atomically. Inputs are never modified.

pub mod solve;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use icon_core::evalbench::{
    bench_scaling, error_vs_demos, global_pattern_metrics, heat_ood_study, prediction_matrix,
    relative_or_absolute, EvalOptions, EvalReport, HEAT_VARIANTS,
};
use icon_core::families::{generate_corpus, read_corpus, write_corpus};
use icon_core::io::write_atomic;
use icon_core::model::forward;
use icon_core::prompt::{build_eval_prompt, subsample_function, subsample_record, MAX_DEMOS};
use icon_core::randproc::derive_seed;
use icon_core::training::{train_with, LogEntry, TrainLog, TrainStart};
use icon_core::{Checkpoint, Coord, Corpus, GenSettings, ModelConfig, Prompt, RngStream, TrainConfig};

use solve::{solve, SolveSpec};

#[derive(Debug, Parser)]
#[command(name = "icon", version, about = "In-context operator learning for differential equations")]
pub struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a corpus of demo records for one family.
    Gen(GenArgs),
    /// Train a model on one or more corpora.
    Train(TrainArgs),
    /// Predict the question QoI of a prompt.
    Infer(InferArgs),
    /// Error versus number of demos, in distribution and on heat operators.
    Eval(EvalArgs),
    /// Inference time against the tridiagonal Poisson solver.
    Bench(BenchArgs),
    /// Solve one equation described by a JSON request.
    Solve(SolveArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub family: String,
    #[arg(long, default_value_t = 100)]
    pub operators: usize,
    #[arg(long, default_value_t = 8)]
    pub records: usize,
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus file; repeat for several families.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 20_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1_000)]
    pub warmup: u64,
    #[arg(long, default_value_t = 500)]
    pub checkpoint_every: u64,
    /// Points kept per function in training prompts; 0 keeps all.
    #[arg(long, default_value_t = 12)]
    pub tokens_per_function: usize,
    /// Train only on these families (default: every corpus given).
    #[arg(long = "family")]
    pub families: Vec<String>,
    /// Model size preset.
    #[arg(long, value_parser = ["toy", "default"], default_value = "toy")]
    pub model: String,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub model_dim: Option<usize>,
    /// Continue from a checkpoint with optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also keep the checkpoint with the lowest test loss as best.json.
    #[arg(long)]
    pub keep_best: bool,
    #[arg(long, default_value_t = 64)]
    pub test_prompts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for checkpoint.json and train_log.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prompt JSON file.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub prompt: Option<PathBuf>,
    /// Corpus to draw demos and a question from.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Operator id within the corpus (random when omitted).
    #[arg(long, requires = "data")]
    pub operator: Option<u64>,
    #[arg(long, default_value_t = 5)]
    pub demos: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus whose held-out operators are evaluated.
    #[arg(long, required_unless_present = "heat_cases")]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub demos: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub n_eval: usize,
    /// Also run the out-of-distribution heat study with this many operators
    /// per variant.
    #[arg(long)]
    pub heat_cases: Option<usize>,
    /// Points kept per demo function (default: as in training; 0 keeps all).
    #[arg(long)]
    pub tokens_per_function: Option<usize>,
    /// Per-example predictions as JSON.
    #[arg(long)]
    pub examples: Option<PathBuf>,
    /// Global-pattern metrics of the heat study as CSV.
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,500")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 5)]
    pub demos: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Request JSON.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Solve(a) => cmd_solve(&a),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    if !path.exists() {
        bail!("data file {} does not exist", path.display());
    }
    read_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn cmd_gen(a: &GenArgs) -> Result<()> {
    let settings = GenSettings {
        points: a.points,
        ..GenSettings::default()
    };
    let corpus = generate_corpus(&a.family, a.operators, a.records, a.seed, &settings)?;
    write_corpus(&corpus, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} records to {}", corpus.records.len(), a.out.display());
    Ok(())
}

fn model_config(a: &TrainArgs) -> Result<ModelConfig> {
    let base = if a.model == "toy" {
        ModelConfig::toy()
    } else {
        ModelConfig::default()
    };
    let layers = a.layers.unwrap_or(base.layers);
    let heads = a.heads.unwrap_or(base.heads);
    let model_dim = a.model_dim.unwrap_or(base.model_dim);
    if heads == 0 || model_dim % heads != 0 {
        bail!("model dimension {model_dim} must be a multiple of the head count {heads}");
    }
    let cfg = ModelConfig::with_dims(layers, heads, model_dim, base.widening);
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        learning_rate: a.lr,
        warmup_steps: a.warmup,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        families: a.families.clone(),
        tokens_per_function: (a.tokens_per_function > 0).then_some(a.tokens_per_function),
        test_prompts: a.test_prompts,
        keep_best: a.keep_best,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let start = match &a.resume {
        Some(p) => TrainStart::Resume(load_checkpoint(p)?),
        None => TrainStart::Fresh(model_config(a)?),
    };
    let corpora = a.data.iter().map(|p| load_corpus(p)).collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let ck_path = a.out.join("checkpoint.json");
    let log_path = a.out.join("train_log.csv");
    let mut log = TrainLog::default();
    let mut saved = false;
    let mut on_checkpoint = |ck: &Checkpoint, e: &LogEntry| -> icon_core::Result<()> {
        ck.save(&ck_path)?;
        log.entries.push(e.clone());
        log.write_csv(&log_path)?;
        saved = true;
        eprintln!(
            "step {:>7}  train {:.6}  test {:.6}  {:.1}s",
            e.step, e.train_loss, e.test_loss, e.wall_time_s
        );
        Ok(())
    };
    let outcome = match train_with(&corpora, start, &cfg, &mut on_checkpoint) {
        Ok(o) => o,
        Err(e) if saved => {
            return Err(e).context(format!("last checkpoint: {}", ck_path.display()));
        }
        Err(e) => return Err(e.into()),
    };
    outcome.checkpoint.save(&ck_path)?;
    outcome.log.write_csv(&log_path)?;
    if let Some(best) = &outcome.best {
        best.save(&a.out.join("best.json"))?;
    }
    println!(
        "trained {} steps; checkpoint {}; log {}",
        outcome.checkpoint.step,
        ck_path.display(),
        log_path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct InferOutput {
    coords: Vec<Coord>,
    prediction: Vec<f64>,
    reference: Option<Vec<f64>>,
    relative_error: Option<f64>,
    absolute_error_fallback: bool,
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let params = ck.params()?;
    let prompt = match (&a.prompt, &a.data) {
        (Some(p), _) => {
            Prompt::load(p).with_context(|| format!("reading prompt {}", p.display()))?
        }
        (None, Some(d)) => prompt_from_corpus(&load_corpus(d)?, a, ck.tokens_per_function)?,
        (None, None) => bail!("either --prompt or --data is required"),
    };
    let prediction = forward(&params, &prompt)?;
    let coords: Vec<Coord> = prompt
        .question_queries()
        .iter()
        .map(|&i| Coord::new(prompt.tokens[i].t, prompt.tokens[i].x))
        .collect();
    let (reference, relative_error, fallback) = if prompt.targets.is_empty() {
        (None, None, false)
    } else {
        let (e, f) = relative_or_absolute(&prediction, &prompt.targets)?;
        (Some(prompt.targets.clone()), Some(e), f)
    };
    write_json(
        &a.out,
        &InferOutput {
            coords,
            prediction,
            reference,
            relative_error,
            absolute_error_fallback: fallback,
        },
    )?;
    match relative_error {
        Some(e) => println!("wrote prediction to {} (relative error {e:.4})", a.out.display()),
        None => println!("wrote prediction to {}", a.out.display()),
    }
    Ok(())
}

fn prompt_from_corpus(corpus: &Corpus, a: &InferArgs, k: Option<usize>) -> Result<Prompt> {
    if a.demos == 0 || a.demos > MAX_DEMOS {
        bail!("--demos must lie in 1..={MAX_DEMOS}");
    }
    let groups = corpus.by_operator();
    let mut rng = RngStream::new(derive_seed(&[a.seed]), 0);
    let group = match a.operator {
        Some(id) => groups
            .iter()
            .find(|g| g[0].operator.operator_id == id)
            .with_context(|| format!("operator {id} not in corpus"))?,
        None if groups.is_empty() => bail!("corpus is empty"),
        None => &groups[rng.below(groups.len())],
    };
    if group.len() < a.demos + 1 {
        bail!("operator has {} records; {} demos need {}", group.len(), a.demos, a.demos + 1);
    }
    let idx = rng.choose_distinct(group.len(), a.demos + 1);
    let q = group[idx[0]];
    let cond = match k {
        Some(k) => subsample_function(&q.condition, k.min(q.condition.len()), &mut rng)?,
        None => q.condition.clone(),
    };
    let demos = idx[1..]
        .iter()
        .map(|&i| subsample_record(group[i], k, &mut rng))
        .collect::<icon_core::Result<Vec<_>>>()?;
    Ok(build_eval_prompt(&demos, &q.qoi, &cond)?)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let params = ck.params()?;
    let opts = EvalOptions {
        demo_counts: a.demos.clone(),
        n_eval: a.n_eval,
        seed: a.seed,
        tokens_per_function: match a.tokens_per_function {
            Some(0) => None,
            Some(k) => Some(k),
            None => ck.tokens_per_function,
        },
        keep_examples: a.examples.is_some(),
    };
    let mut report = EvalReport::default();
    if let Some(d) = &a.data {
        let r = error_vs_demos(&params, &load_corpus(d)?, &opts)?;
        report.rows.extend(r.rows);
        report.examples.extend(r.examples);
    }
    if let Some(n) = a.heat_cases {
        let r = heat_ood_study(&params, &ck.families, n, &opts, &GenSettings::default())?;
        let max = opts.demo_counts.iter().copied().max().unwrap_or(1);
        let mut csv = String::from("family,demo_count,token_error,average_error\n");
        for fam in HEAT_VARIANTS {
            let (p, t) = prediction_matrix(&r, fam, max);
            let m = global_pattern_metrics(&p, &t)?;
            println!("{fam} ({max} demos): token error {:.6}, average error {:.6}", m.token_error, m.average_error);
            csv.push_str(&format!("{fam},{max},{},{}\n", m.token_error, m.average_error));
        }
        if let Some(p) = &a.patterns {
            write_atomic(p, csv.as_bytes()).with_context(|| format!("writing {}", p.display()))?;
        }
        report.rows.extend(r.rows);
        if a.examples.is_some() {
            report.examples.extend(r.examples);
        }
    }
    report.write_csv(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(p) = &a.examples {
        report.write_examples_json(p).with_context(|| format!("writing {}", p.display()))?;
    }
    for r in &report.rows {
        println!("{:<16} demos {}  mean {:.5}  std {:.5}  n {}", r.family, r.demo_count, r.mean, r.std, r.count);
    }
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let report = bench_scaling(&ck.params()?, &a.sizes, a.repeats, a.demos, a.seed)?;
    report.write_csv(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    for r in &report.rows {
        println!(
            "N {:>4}  model {:.3e}s  solver {:.3e}s  error {:.4}",
            r.n, r.model_time_s, r.solver_time_s, r.model_rel_error
        );
    }
    Ok(())
}

pub fn cmd_solve(a: &SolveArgs) -> Result<()> {
    let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let spec = SolveSpec::from_json(&text).with_context(|| format!("parsing {}", a.spec.display()))?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let out = solve(&spec, &ck, a.seed)?;
    write_json(&a.out, &out)?;
    let mut line = format!("wrote prediction to {}", a.out.display());
    if let Some(e) = out.relative_error {
        line.push_str(&format!(" (relative error {e:.4})"));
    }
    if !out.flags.is_empty() {
        line.push_str(&format!(" [{}]", out.flags.join(", ")));
    }
    println!("{line}");
    Ok(())
}
