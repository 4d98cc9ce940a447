//! Two-phase training: next-token SFT, then preference optimization with
//! DPO or SGDPO against a frozen copy of the SFT policy.

mod optim;
mod schedule;

pub use optim::{Optimizer, OptimizerKind};
pub use schedule::{lr_at, warmup_steps, Schedule};

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor};
use crate::data::{tokenize_all, PreferenceExample, TokenizedExample};
use crate::error::{Error, Result};
use crate::losses::{preference_loss, ExampleRewards, LossInput, Method};
use crate::math::Beta;
use crate::policy::{clone_frozen, ordered_sum, FrozenModel, ModelParams, SequenceTrace, TokenSeq};
use crate::subsequence::{build_spans, check_ratio, span_seed, splitmix64, SpanMode, SpanSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub beta: Beta,
    pub method: Method,
    pub r1: f64,
    pub r2: f64,
    pub span_mode: SpanMode,
    pub sft_lr: f64,
    pub po_lr: f64,
    pub batch_size: usize,
    pub sft_steps: usize,
    pub po_steps: usize,
    pub schedule: Schedule,
    pub warmup_ratio: f64,
    pub optimizer: OptimizerKind,
    pub ccr_window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: Beta::DEFAULT,
            method: Method::Sgdpo,
            r1: 0.9,
            r2: 0.9,
            span_mode: SpanMode::DifferentIndex,
            sft_lr: 3e-3,
            po_lr: 1e-3,
            batch_size: 16,
            sft_steps: 300,
            po_steps: 500,
            schedule: Schedule::Cosine,
            warmup_ratio: 0.1,
            optimizer: OptimizerKind::default(),
            ccr_window: 80,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_ratio("r1", self.r1)?;
        check_ratio("r2", self.r2)?;
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::config("warmup_ratio must lie in [0, 1)"));
        }
        if self.ccr_window == 0 {
            return Err(Error::config("ccr_window must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        for (name, lr) in [("sft_lr", self.sft_lr), ("po_lr", self.po_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config(alloc::format!(
                    "{name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Epoch-wise shuffled minibatches. Incomplete tail batches are dropped;
/// a dataset smaller than the batch yields the whole dataset every step.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: usize,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("dataset"));
        }
        let mut s = Self {
            n,
            batch: batch.clamp(1, n),
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        self.order = (0..self.n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ self.epoch as u64));
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    /// Example indices of the next batch and the epoch they belong to.
    pub fn next_batch(&mut self) -> (Vec<usize>, usize) {
        if self.pos + self.batch > self.n {
            self.epoch += 1;
            self.shuffle();
        }
        let ids = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        (ids, self.epoch)
    }
}

/// One SFT sequence; the loss covers `response` only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftExample {
    pub prompt: TokenSeq,
    pub response: TokenSeq,
}

/// Prompt plus chosen response of every preference pair.
pub fn sft_corpus(data: &[TokenizedExample]) -> Vec<SftExample> {
    data.iter()
        .map(|ex| SftExample {
            prompt: ex.prompt.clone(),
            response: ex.chosen.clone(),
        })
        .collect()
}

/// Mean per-token negative log-likelihood of the responses.
pub fn cross_entropy(params: &ModelParams, corpus: &[SftExample]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut sums = Vec::with_capacity(corpus.len());
    let mut count = 0usize;
    for ex in corpus {
        let t = params.seq_logprob(&ex.prompt, &ex.response)?;
        sums.push(t.total_logprob);
        count += t.len();
    }
    Ok(-ordered_sum(&sums) / count as f64)
}

fn all_finite(ts: &[Tensor]) -> bool {
    ts.iter().all(Tensor::all_finite)
}

#[derive(Debug, Clone)]
pub struct SftOutcome {
    pub params: ModelParams,
    /// Training loss of every step, before its update.
    pub losses: Vec<f64>,
}

pub fn sft_train(
    params: &ModelParams,
    corpus: &[SftExample],
    cfg: &TrainConfig,
) -> Result<SftOutcome> {
    cfg.validate()?;
    let mut params = params.clone();
    let mut sampler = BatchSampler::new(corpus.len(), cfg.batch_size, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, params.tensors());
    let mut losses = Vec::with_capacity(cfg.sft_steps);

    for step in 0..cfg.sft_steps {
        let lr = lr_at(
            cfg.schedule,
            cfg.sft_lr,
            step,
            cfg.sft_steps,
            cfg.warmup_ratio,
        );
        let (ids, _) = sampler.next_batch();
        let mut g = Graph::new();
        let vars = params.bind(&mut g, true);
        let mut sums = Vec::with_capacity(ids.len());
        let mut count = 0usize;
        for &i in &ids {
            let ex = &corpus[i];
            let lp = params
                .response_log_probs(&mut g, &vars, &ex.prompt, &ex.response)
                .map_err(|e| Error::in_example(i, e))?;
            count += ex.response.len();
            sums.push(g.sum(lp)?);
        }
        let mut total = sums[0];
        for &s in &sums[1..] {
            total = g.add(total, s)?;
        }
        let loss = g.scale(total, -1.0 / count as f64)?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss)?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
        if !value.is_finite() || !all_finite(&grads) {
            return Err(Error::Diverged { step });
        }
        opt.step(params.tensors_mut(), &grads, lr);
        if !all_finite(params.tensors()) {
            return Err(Error::Diverged { step });
        }
        losses.push(value);
    }
    Ok(SftOutcome { params, losses })
}

/// Reference-model traces of one pair, computed once before training.
#[derive(Debug, Clone, PartialEq)]
pub struct RefTraces {
    pub chosen: SequenceTrace,
    pub rejected: SequenceTrace,
}

pub fn reference_traces(
    reference: &FrozenModel,
    data: &[TokenizedExample],
) -> Result<Vec<RefTraces>> {
    data.iter()
        .enumerate()
        .map(|(i, ex)| {
            let r = || -> Result<RefTraces> {
                Ok(RefTraces {
                    chosen: reference.seq_logprob(&ex.prompt, &ex.chosen)?,
                    rejected: reference.seq_logprob(&ex.prompt, &ex.rejected)?,
                })
            };
            r().map_err(|e| Error::in_example(i, e))
        })
        .collect()
}

/// Loss, batch-mean rewards and parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub rewards: ExampleRewards,
    pub grads: Vec<Tensor>,
}

/// One batch of pairs with their reference traces and pilot windows.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub index: usize,
    pub example: &'a TokenizedExample,
    pub refs: &'a RefTraces,
    pub span: SpanSpec,
}

pub fn preference_gradients(
    params: &ModelParams,
    method: Method,
    beta: Beta,
    batch: &[BatchItem<'_>],
) -> Result<BatchGradients> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let mut inputs = Vec::with_capacity(batch.len());
    for item in batch {
        let ex = item.example;
        let wrap = |e| Error::in_example(item.index, e);
        let pc = params
            .response_log_probs(&mut g, &vars, &ex.prompt, &ex.chosen)
            .map_err(wrap)?;
        let pr = params
            .response_log_probs(&mut g, &vars, &ex.prompt, &ex.rejected)
            .map_err(wrap)?;
        inputs.push(LossInput {
            policy_chosen: pc,
            policy_rejected: pr,
            ref_chosen: &item.refs.chosen,
            ref_rejected: &item.refs.rejected,
            span: item.span,
        });
    }
    let out = preference_loss(&mut g, method, &inputs, beta).map_err(|e| match e {
        Error::NonFinite { index } => Error::NonFinite {
            index: batch[index].index,
        },
        other => other,
    })?;
    let grads = g.backward(out.loss)?;
    Ok(BatchGradients {
        loss: out.value(&g),
        rewards: out.mean_rewards(),
        grads: vars.iter().map(|&v| grads.wrt(v)).collect(),
    })
}

/// One optimizer step of preference training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub chosen_reward: f64,
    pub rejected_reward: f64,
    pub margin: f64,
    pub lr: f64,
}

pub type TrainHistory = Vec<StepRecord>;

/// Step-at-a-time preference trainer.
#[derive(Debug, Clone)]
pub struct PoTrainer {
    cfg: TrainConfig,
    params: ModelParams,
    reference: FrozenModel,
    data: Vec<TokenizedExample>,
    refs: Vec<RefTraces>,
    sampler: BatchSampler,
    opt: Optimizer,
    history: TrainHistory,
}

impl PoTrainer {
    pub fn new(
        sft_params: &ModelParams,
        data: Vec<TokenizedExample>,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let reference = clone_frozen(sft_params);
        let refs = reference_traces(&reference, &data)?;
        let sampler = BatchSampler::new(data.len(), cfg.batch_size, cfg.seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            params: sft_params.clone(),
            opt: Optimizer::new(cfg.optimizer, sft_params.tensors()),
            reference,
            data,
            refs,
            sampler,
            history: Vec::with_capacity(cfg.po_steps),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn reference(&self) -> &FrozenModel {
        &self.reference
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn steps_done(&self) -> usize {
        self.history.len()
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.history.len();
        let cfg = &self.cfg;
        let lr = lr_at(
            cfg.schedule,
            cfg.po_lr,
            step,
            cfg.po_steps,
            cfg.warmup_ratio,
        );
        let (ids, epoch) = self.sampler.next_batch();
        let mut batch = Vec::with_capacity(ids.len());
        for &i in &ids {
            let ex = &self.data[i];
            let span = build_spans(
                ex.chosen.len(),
                ex.rejected.len(),
                cfg.r1,
                cfg.r2,
                cfg.span_mode,
                span_seed(cfg.seed, i, epoch),
            )
            .map_err(|e| Error::in_example(i, e))?;
            batch.push(BatchItem {
                index: i,
                example: ex,
                refs: &self.refs[i],
                span,
            });
        }
        let bg = preference_gradients(&self.params, cfg.method, cfg.beta, &batch)?;
        if !bg.loss.is_finite() || !all_finite(&bg.grads) {
            return Err(Error::Diverged { step });
        }
        self.opt.step(self.params.tensors_mut(), &bg.grads, lr);
        if !all_finite(self.params.tensors()) {
            return Err(Error::Diverged { step });
        }
        let rec = StepRecord {
            step,
            loss: bg.loss,
            chosen_reward: bg.rewards.chosen_reward,
            rejected_reward: bg.rewards.rejected_reward,
            margin: bg.rewards.margin,
            lr,
        };
        self.history.push(rec);
        Ok(rec)
    }

    /// Run the remaining configured steps.
    pub fn run(mut self) -> Result<PoOutcome> {
        while self.history.len() < self.cfg.po_steps {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> PoOutcome {
        PoOutcome {
            params: self.params,
            history: self.history,
            reference: self.reference,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PoOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub reference: FrozenModel,
}

pub fn po_train(
    sft_params: &ModelParams,
    dataset: &[PreferenceExample],
    cfg: &TrainConfig,
) -> Result<PoOutcome> {
    let data = tokenize_all(dataset, sft_params.vocab())?;
    po_train_tokenized(sft_params, data, cfg)
}

pub fn po_train_tokenized(
    sft_params: &ModelParams,
    data: Vec<TokenizedExample>,
    cfg: &TrainConfig,
) -> Result<PoOutcome> {
    PoTrainer::new(sft_params, data, cfg)?.run()
}

/// Mean chosen and rejected reward over the last `min(window, len)` steps.
pub fn ccr_crr(history: &[StepRecord], window: usize) -> Result<(f64, f64)> {
    if history.is_empty() {
        return Err(Error::Empty("history"));
    }
    if window == 0 {
        return Err(Error::config("window must be at least 1"));
    }
    let tail = &history[history.len() - window.min(history.len())..];
    let n = tail.len() as f64;
    let c: Vec<f64> = tail.iter().map(|r| r.chosen_reward).collect();
    let r: Vec<f64> = tail.iter().map(|r| r.rejected_reward).collect();
    Ok((ordered_sum(&c) / n, ordered_sum(&r) / n))
}

/// Implicit margins `β(log X1 − log X2)` of every pair.
pub fn implicit_margins(
    policy: &ModelParams,
    reference: &ModelParams,
    data: &[TokenizedExample],
    beta: Beta,
) -> Result<Vec<f64>> {
    let b = beta.value();
    data.iter()
        .enumerate()
        .map(|(i, ex)| {
            let m = || -> Result<f64> {
                let x1 = policy.seq_logprob(&ex.prompt, &ex.chosen)?.total_logprob
                    - reference.seq_logprob(&ex.prompt, &ex.chosen)?.total_logprob;
                let x2 = policy.seq_logprob(&ex.prompt, &ex.rejected)?.total_logprob
                    - reference
                        .seq_logprob(&ex.prompt, &ex.rejected)?
                        .total_logprob;
                Ok(b * x1 - b * x2)
            };
            m().map_err(|e| Error::in_example(i, e))
        })
        .collect()
}

/// Fraction of pairs whose chosen reward strictly exceeds the rejected
/// reward. Ties count as failures.
pub fn margin_accuracy_tokenized(
    policy: &ModelParams,
    reference: &ModelParams,
    heldout: &[TokenizedExample],
    beta: Beta,
) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::Empty("heldout"));
    }
    let margins = implicit_margins(policy, reference, heldout, beta)?;
    let wins = margins.iter().filter(|&&m| m > 0.0).count();
    Ok(wins as f64 / heldout.len() as f64)
}

pub fn evaluate_margin_accuracy(
    policy: &ModelParams,
    reference: &ModelParams,
    heldout: &[PreferenceExample],
    beta: Beta,
) -> Result<f64> {
    let data = tokenize_all(heldout, policy.vocab())?;
    margin_accuracy_tokenized(policy, reference, &data, beta)
}
