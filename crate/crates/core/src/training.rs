//! Adam, batch assembly and the training loop.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{Corpus, DemoRecord, MIN_RECORDS_PER_OPERATOR};
use crate::io::write_atomic;
use crate::model::{init_params, loss, loss_and_grad, Checkpoint, ModelConfig, ModelParams, OptimizerState};
use crate::prompt::{build_training_prompt, subsample_record, Prompt, MAX_DEMOS};
use crate::randproc::{derive_seed, RngStream};

/// Stream tags that keep the different uses of the run seed apart.
const INIT_STREAM: u64 = 0x1417;
const TEST_TAG: u64 = 0x7e57;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Steps between log entries, test-loss evaluations and checkpoints.
    pub checkpoint_every: u64,
    /// Families to train on; empty means every corpus supplied.
    pub families: Vec<String>,
    /// Points kept per function in a prompt; `None` keeps all of them.
    pub tokens_per_function: Option<usize>,
    /// Also query the first demo's QoI, whose context is only its condition.
    pub include_first_demo: bool,
    /// Held-out prompts evaluated for the test loss.
    pub test_prompts: usize,
    /// Keep the checkpoint with the lowest test loss besides the final one.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 16,
            learning_rate: 1e-4,
            warmup_steps: 1_000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            checkpoint_every: 500,
            families: Vec::new(),
            tokens_per_function: Some(12),
            include_first_demo: false,
            test_prompts: 64,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidInput("training needs at least one step".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0) {
            return Err(Error::InvalidInput("Adam needs betas in [0, 1) and a positive epsilon".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidInput("checkpoint interval must be positive".into()));
        }
        if self.tokens_per_function == Some(0) {
            return Err(Error::InvalidInput("tokens per function must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at 1-based optimizer step `t`.
    pub fn learning_rate_at(&self, t: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * (t as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

impl OptimizerState {
    pub fn zeros_for(params: &ModelParams) -> Self {
        let z: Vec<Vec<f64>> = params.blocks.iter().map(|b| vec![0.0; b.data.len()]).collect();
        Self {
            step: 0,
            m: z.clone(),
            v: z,
        }
    }
}

/// One Adam update with bias correction and linear warmup. Nothing is
/// modified when some block would receive a non-finite value.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    let t = state.step + 1;
    let lr = cfg.learning_rate_at(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let mut next = Vec::with_capacity(params.blocks.len());
    for (i, (p, g)) in params.blocks.iter().zip(&grads.blocks).enumerate() {
        if p.data.len() != g.data.len() {
            return Err(Error::Sizing(format!("gradient for {} has the wrong size", p.name)));
        }
        let mut m = state.m[i].clone();
        let mut v = state.v[i].clone();
        let mut w = p.data.clone();
        for j in 0..w.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g.data[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g.data[j] * g.data[j];
            w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.epsilon);
        }
        if w.iter().chain(&m).chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteUpdate { block: p.name.clone() });
        }
        next.push((w, m, v));
    }
    for (i, (w, m, v)) in next.into_iter().enumerate() {
        params.blocks[i].data = w;
        state.m[i] = m;
        state.v[i] = v;
    }
    state.step = t;
    Ok(())
}

/// Operators of one family split into training and held-out groups.
#[derive(Debug, Clone)]
pub struct TaskPool {
    pub family: String,
    pub train: Vec<Vec<DemoRecord>>,
    pub test: Vec<Vec<DemoRecord>>,
}

/// Number of operators held out from `n`: 10%, at least one.
pub fn held_out_count(n: usize) -> usize {
    ((n as f64 * 0.1).round() as usize).max(1)
}

/// The last 10% of operators (by id) are held out.
pub fn split_operators(corpus: &Corpus) -> Result<TaskPool> {
    let groups: Vec<Vec<DemoRecord>> = corpus
        .by_operator()
        .into_iter()
        .map(|g| g.into_iter().cloned().collect())
        .collect();
    if groups.len() < 2 {
        return Err(Error::Sizing(format!(
            "family {} needs at least two operators for a held-out split",
            corpus.meta.family
        )));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < MIN_RECORDS_PER_OPERATOR) {
        return Err(Error::Sizing(format!(
            "operator {} of {} has {} records, {} needed",
            g[0].operator.operator_id,
            corpus.meta.family,
            g.len(),
            MIN_RECORDS_PER_OPERATOR
        )));
    }
    let n_test = held_out_count(groups.len());
    let mut train = groups;
    let test = train.split_off(train.len() - n_test);
    Ok(TaskPool {
        family: corpus.meta.family.clone(),
        train,
        test,
    })
}

/// Pools for the families selected by `cfg` (all corpora when empty).
pub fn task_pools(corpora: &[Corpus], families: &[String]) -> Result<Vec<TaskPool>> {
    let chosen: Vec<&Corpus> = if families.is_empty() {
        corpora.iter().collect()
    } else {
        families
            .iter()
            .map(|f| {
                corpora
                    .iter()
                    .find(|c| &c.meta.family == f)
                    .ok_or_else(|| Error::InvalidInput(format!("no corpus supplied for family {f}")))
            })
            .collect::<Result<_>>()?
    };
    if chosen.is_empty() {
        return Err(Error::InvalidInput("no training families".into()));
    }
    let mut seen = BTreeSet::new();
    for c in &chosen {
        if !seen.insert(c.meta.family.as_str()) {
            return Err(Error::InvalidInput(format!("family {} supplied twice", c.meta.family)));
        }
        if !crate::families::family(&c.meta.family)?.trainable {
            return Err(Error::InvalidInput(format!(
                "family {} is reserved for out-of-distribution evaluation",
                c.meta.family
            )));
        }
    }
    chosen.into_iter().map(split_operators).collect()
}

/// A training prompt: random family, operator, demo count in `1..=5`, demos
/// and a distinct question record, each function subsampled.
pub fn sample_prompt(
    pools: &[TaskPool],
    held_out: bool,
    rng: &mut RngStream,
    tokens_per_function: Option<usize>,
    include_first_demo: bool,
) -> Result<Prompt> {
    let pool = &pools[rng.below(pools.len())];
    let groups = if held_out { &pool.test } else { &pool.train };
    let group = &groups[rng.below(groups.len())];
    let n_demos = 1 + rng.below(MAX_DEMOS);
    let idx = rng.choose_distinct(group.len(), n_demos + 1);
    let question = subsample_record(&group[idx[0]], tokens_per_function, rng)?;
    let demos = idx[1..]
        .iter()
        .map(|&i| subsample_record(&group[i], tokens_per_function, rng))
        .collect::<Result<Vec<_>>>()?;
    build_training_prompt(&demos, &question, include_first_demo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    /// Mean batch loss since the previous entry.
    pub train_loss: f64,
    pub test_loss: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,train_loss,test_loss,wall_time_s\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{},{:.3}", e.step, e.train_loss, e.test_loss, e.wall_time_s);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Where a run starts.
pub enum TrainStart {
    Fresh(ModelConfig),
    /// Continue from a checkpoint that carries optimizer state.
    Resume(Checkpoint),
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
    /// Final state including the optimizer moments.
    pub checkpoint: Checkpoint,
    /// Lowest test-loss checkpoint, when requested.
    pub best: Option<Checkpoint>,
}

fn batch_seed(seed: u64, step: u64, b: usize) -> u64 {
    derive_seed(&[seed, step, b as u64])
}

/// Trains from scratch. See [`train_with`].
pub fn train(corpora: &[Corpus], model_config: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(corpora, TrainStart::Fresh(*model_config), cfg, &mut |_, _| Ok(()))
}

/// Runs optimizer steps until `cfg.steps`. Batch element `b` of step `s`
/// draws its prompt from a stream seeded by `(seed, s, b)`, so a resumed
/// run continues exactly where the interrupted one stopped. `on_checkpoint`
/// sees every interval checkpoint as it is produced.
pub fn train_with(
    corpora: &[Corpus],
    start: TrainStart,
    cfg: &TrainConfig,
    on_checkpoint: &mut dyn FnMut(&Checkpoint, &LogEntry) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pools = task_pools(corpora, &cfg.families)?;
    let families: Vec<String> = pools.iter().map(|p| p.family.clone()).collect();
    let (mut params, mut opt) = match start {
        TrainStart::Fresh(mc) => {
            let p = init_params(&mc, &mut RngStream::new(cfg.seed, INIT_STREAM))?;
            let o = OptimizerState::zeros_for(&p);
            (p, o)
        }
        TrainStart::Resume(ck) => {
            let p = ck.params()?;
            let o = ck
                .optimizer
                .clone()
                .ok_or_else(|| Error::InvalidInput("checkpoint has no optimizer state to resume".into()))?;
            (p, o)
        }
    };
    if opt.step >= cfg.steps {
        return Err(Error::InvalidInput(format!(
            "checkpoint is already at step {} of {}",
            opt.step, cfg.steps
        )));
    }

    let test_set: Vec<Prompt> = (0..cfg.test_prompts)
        .map(|i| {
            let mut rng = RngStream::new(derive_seed(&[cfg.seed, TEST_TAG, i as u64]), 0);
            sample_prompt(&pools, true, &mut rng, cfg.tokens_per_function, cfg.include_first_demo)
        })
        .collect::<Result<_>>()?;
    let test_loss = |p: &ModelParams| -> Result<f64> {
        if test_set.is_empty() {
            return Ok(f64::NAN);
        }
        let losses = test_set.par_iter().map(|t| loss(p, t)).collect::<Result<Vec<_>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    };

    let snapshot = |p: &ModelParams, o: &OptimizerState| {
        let mut ck = Checkpoint::new(p, o.step, cfg.seed, families.clone(), cfg.tokens_per_function);
        ck.optimizer = Some(o.clone());
        ck
    };

    let clock = Instant::now();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    let (mut acc, mut acc_n) = (0.0, 0u64);
    while opt.step < cfg.steps {
        let step = opt.step + 1;
        let results = (0..cfg.batch_size)
            .into_par_iter()
            .map(|b| {
                let mut rng = RngStream::new(batch_seed(cfg.seed, step, b), 0);
                let prompt = sample_prompt(&pools, false, &mut rng, cfg.tokens_per_function, cfg.include_first_demo)?;
                loss_and_grad(&params, &prompt)
            })
            .collect::<Result<Vec<_>>>();
        let results = match results {
            Ok(r) => r,
            Err(Error::NonFiniteGradient { .. }) => {
                return Err(Error::TrainDiverged { step: step as usize, loss: f64::NAN })
            }
            Err(e) => return Err(e),
        };
        let mut grads = params.zeros_like();
        let mut batch_loss = 0.0;
        for (l, g) in &results {
            batch_loss += l;
            grads.add_assign(g);
        }
        let inv = 1.0 / cfg.batch_size as f64;
        batch_loss *= inv;
        grads.scale(inv);
        if !batch_loss.is_finite() {
            return Err(Error::TrainDiverged { step: step as usize, loss: batch_loss });
        }
        adam_step(&mut params, &grads, &mut opt, cfg)?;
        acc += batch_loss;
        acc_n += 1;

        if step % cfg.checkpoint_every == 0 || step == cfg.steps {
            let entry = LogEntry {
                step,
                train_loss: acc / acc_n as f64,
                test_loss: test_loss(&params)?,
                wall_time_s: clock.elapsed().as_secs_f64(),
            };
            (acc, acc_n) = (0.0, 0);
            let ck = snapshot(&params, &opt);
            if cfg.keep_best && best.as_ref().map_or(true, |(l, _)| entry.test_loss < *l) {
                best = Some((entry.test_loss, ck.clone()));
            }
            on_checkpoint(&ck, &entry)?;
            log.entries.push(entry);
        }
    }
    let checkpoint = snapshot(&params, &opt);
    Ok(TrainOutcome {
        params,
        log,
        checkpoint,
        best: best.map(|(_, c)| c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{generate_corpus, GenSettings};
    use crate::model::ParamBlock;

    fn scalar_params(x: f64) -> ModelParams {
        ModelParams {
            config: ModelConfig::with_dims(1, 1, 1, 1),
            blocks: vec![ParamBlock {
                name: "w".into(),
                shape: vec![1],
                data: vec![x],
            }],
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = scalar_params(0.5);
        let mut st = OptimizerState::zeros_for(&p);
        st.m[0][0] = 0.2;
        st.v[0][0] = 0.04;
        let g = scalar_params(0.0);
        let cfg = TrainConfig { warmup_steps: 0, ..TrainConfig::default() };
        let before = p.clone();
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert_eq!(st.m[0][0], 0.9 * 0.2);
        assert_eq!(st.v[0][0], 0.999 * 0.04);
        // bias-corrected moment is nonzero so the parameter does move here;
        // from a fresh state it must not
        let mut p2 = before.clone();
        let mut fresh = OptimizerState::zeros_for(&p2);
        adam_step(&mut p2, &g, &mut fresh, &cfg).unwrap();
        assert_eq!(p2, before);
    }

    #[test]
    fn constant_gradient_steps_at_learning_rate() {
        let mut p = scalar_params(0.0);
        let mut st = OptimizerState::zeros_for(&p);
        let cfg = TrainConfig { warmup_steps: 0, learning_rate: 1e-3, ..TrainConfig::default() };
        let g = scalar_params(0.37);
        let mut prev = 0.0;
        for _ in 0..200 {
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
            let step = prev - p.blocks[0].data[0];
            assert!((step / 1e-3 - 1.0).abs() < 0.01, "{step}");
            prev = p.blocks[0].data[0];
        }
    }

    #[test]
    fn warmup_is_linear() {
        let cfg = TrainConfig { warmup_steps: 10, learning_rate: 1.0, ..TrainConfig::default() };
        assert_eq!(cfg.learning_rate_at(1), 0.1);
        assert_eq!(cfg.learning_rate_at(10), 1.0);
        assert_eq!(cfg.learning_rate_at(50), 1.0);
    }

    #[test]
    fn non_finite_update_names_block() {
        let mut p = scalar_params(0.0);
        let mut st = OptimizerState::zeros_for(&p);
        let g = scalar_params(f64::NAN);
        let err = adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteUpdate { ref block } if block == "w"));
        assert_eq!(p.blocks[0].data[0], 0.0);
        assert_eq!(st.step, 0);
    }

    fn tiny_run_config() -> (ModelConfig, TrainConfig) {
        let mc = ModelConfig::with_dims(1, 2, 8, 2);
        let tc = TrainConfig {
            steps: 2,
            batch_size: 2,
            checkpoint_every: 1,
            tokens_per_function: Some(5),
            test_prompts: 2,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        (mc, tc)
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let corpus = generate_corpus("ode1_fwd", 4, 6, 3, &GenSettings::default()).unwrap();
        let (mc, tc) = tiny_run_config();
        let full = train(std::slice::from_ref(&corpus), &mc, &tc).unwrap();
        let one = train(std::slice::from_ref(&corpus), &mc, &TrainConfig { steps: 1, ..tc.clone() }).unwrap();
        let text = one.checkpoint.to_json().unwrap();
        let loaded = Checkpoint::from_json(&text).unwrap();
        let resumed = train_with(std::slice::from_ref(&corpus), TrainStart::Resume(loaded), &tc, &mut |_, _| Ok(())).unwrap();
        assert_eq!(resumed.params, full.params);
        assert_eq!(resumed.checkpoint, full.checkpoint);
        assert_eq!(full.log.entries.len(), 2);
        assert_eq!(full.checkpoint.families, vec!["ode1_fwd".to_string()]);
    }

    #[test]
    fn rejects_bad_configs_and_pools() {
        let corpus = generate_corpus("ode1_fwd", 4, 6, 3, &GenSettings::default()).unwrap();
        let (mc, tc) = tiny_run_config();
        assert!(train(&[], &mc, &tc).is_err());
        assert!(train(std::slice::from_ref(&corpus), &mc, &TrainConfig { steps: 0, ..tc.clone() }).is_err());
        let heat = generate_corpus("heat_fwd", 2, 6, 3, &GenSettings::default()).unwrap();
        assert!(train(&[heat], &mc, &tc).is_err());
        let one_op = generate_corpus("ode1_fwd", 1, 6, 3, &GenSettings::default()).unwrap();
        assert!(split_operators(&one_op).is_err());
    }

    #[test]
    fn split_holds_out_last_tenth() {
        let corpus = generate_corpus("ode1_fwd", 20, 6, 3, &GenSettings::default()).unwrap();
        let pool = split_operators(&corpus).unwrap();
        assert_eq!(pool.train.len(), 18);
        assert_eq!(pool.test.len(), 2);
        assert_eq!(pool.test[0][0].operator.operator_id, 18);
    }
}
