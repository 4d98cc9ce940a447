//! Tiny causal self-attention language model used as the policy, the frozen
//! reference and the pilot.
//!
//! Input layout is `[bos] ++ prompt ++ response`; position `i` predicts token
//! `i + 1`, so the log-probability of response token `t` is read from
//! position `prompt.len() + t`. Prompt tokens never contribute to a trace.

mod vocab;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub use vocab::{TokenId, TokenSeq, Vocab, MAX_VOCAB};

const NORM_EPS: f64 = 1e-6;
const PER_LAYER: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Maximum number of positions, `prompt.len() + response.len()`.
    pub context: usize,
    pub max_params: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            d_ff: 128,
            context: 256,
            max_params: 200_000,
        }
    }
}

impl ModelConfig {
    /// Shapes of every parameter tensor, in storage order.
    pub fn shapes(&self, vocab_size: usize) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d_model, self.d_ff);
        let mut out = vec![
            (String::from("tok_emb"), vec![vocab_size, d]),
            (String::from("pos_emb"), vec![self.context, d]),
        ];
        for l in 0..self.n_layers {
            for (name, shape) in [
                ("wq", vec![d, d]),
                ("wk", vec![d, d]),
                ("wv", vec![d, d]),
                ("wo", vec![d, d]),
                ("w1", vec![d, f]),
                ("b1", vec![f]),
                ("w2", vec![f, d]),
                ("b2", vec![d]),
            ] {
                out.push((format!("layer{l}.{name}"), shape));
            }
        }
        out.push((String::from("w_out"), vec![d, vocab_size]));
        out.push((String::from("b_out"), vec![vocab_size]));
        out
    }

    pub fn param_count(&self, vocab_size: usize) -> usize {
        self.shapes(vocab_size)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.d_model == 0 || self.d_ff == 0 || self.context == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if vocab_size > MAX_VOCAB {
            return Err(Error::config(format!(
                "vocabulary of {vocab_size} exceeds {MAX_VOCAB}"
            )));
        }
        let n = self.param_count(vocab_size);
        if n > self.max_params {
            return Err(Error::config(format!(
                "{n} parameters exceed the cap of {}",
                self.max_params
            )));
        }
        Ok(())
    }
}

/// Per-token conditional log-probabilities of one response.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTrace {
    pub tokens: TokenSeq,
    pub per_token_logprob: Vec<f64>,
    pub total_logprob: f64,
}

impl SequenceTrace {
    pub fn new(tokens: TokenSeq, per_token_logprob: Vec<f64>) -> Result<Self> {
        if tokens.len() != per_token_logprob.len() {
            return Err(Error::TraceMismatch(tokens.len(), per_token_logprob.len()));
        }
        let total_logprob = ordered_sum(&per_token_logprob);
        Ok(Self {
            tokens,
            per_token_logprob,
            total_logprob,
        })
    }

    pub fn len(&self) -> usize {
        self.per_token_logprob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_token_logprob.is_empty()
    }
}

pub(crate) fn ordered_sum(xs: &[f64]) -> f64 {
    let mut s = 0.0;
    for &x in xs {
        s += x;
    }
    s
}

/// Sum of `per_token_logprob[start .. start + len]`.
pub fn span_logprob(trace: &SequenceTrace, start: usize, len: usize) -> Result<f64> {
    let n = trace.len();
    if len == 0 || start + len > n {
        return Err(Error::SpanOutOfRange {
            start,
            len,
            seq_len: n,
        });
    }
    Ok(ordered_sum(&trace.per_token_logprob[start..start + len]))
}

/// Policy weights: the vocabulary, the architecture and the flat list of
/// parameter tensors in [`ModelConfig::shapes`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    vocab: Vocab,
    tensors: Vec<Tensor>,
}

fn uniform_fill(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let a = libm::sqrt(3.0) * std;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

impl ModelParams {
    /// Random initialisation: uniform weights with standard deviation
    /// `1/sqrt(fan_in)`, zero biases, residual output projections scaled
    /// down by `1/sqrt(2 n_layers)`.
    pub fn init(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate(vocab.size())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let resid = 1.0 / libm::sqrt(2.0 * config.n_layers.max(1) as f64);
        let tensors = config
            .shapes(vocab.size())
            .iter()
            .map(|(name, shape)| {
                let leaf = name.rsplit('.').next().unwrap_or(name);
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let std = match leaf {
                    "tok_emb" | "pos_emb" => 0.5,
                    "wo" | "w2" => resid / libm::sqrt(shape[0] as f64),
                    _ => 1.0 / libm::sqrt(shape[0] as f64),
                };
                uniform_fill(&mut rng, shape, std)
            })
            .collect();
        Ok(Self {
            config,
            vocab,
            tensors,
        })
    }

    /// Rebuild from stored tensors, checking every shape.
    pub fn from_tensors(config: ModelConfig, vocab: Vocab, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate(vocab.size())?;
        let shapes = config.shapes(vocab.size());
        if shapes.len() != tensors.len() {
            return Err(Error::config(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::config(format!(
                    "tensor {name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config,
            vocab,
            tensors,
        })
    }

    /// Zero the output projection so every next-token distribution is
    /// uniform over the vocabulary.
    pub fn zero_head(&mut self) {
        let n = self.tensors.len();
        for t in &mut self.tensors[n - 2..] {
            t.data_mut().fill(0.0);
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Add the parameters to `g`, as leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    fn check_input(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<()> {
        for &id in prompt.iter().chain(response) {
            self.vocab.check(id)?;
        }
        let len = prompt.len() + response.len();
        if len > self.config.context {
            return Err(Error::ContextOverflow {
                len,
                context: self.config.context,
            });
        }
        Ok(())
    }

    /// Log-softmax over the vocabulary at each position of
    /// `[bos] ++ tokens`, as an `[1 + tokens.len(), V]` matrix.
    pub fn next_token_log_probs(
        &self,
        g: &mut Graph,
        vars: &[Var],
        tokens: &[TokenId],
    ) -> Result<Var> {
        let n = tokens.len() + 1;
        if n > self.config.context {
            return Err(Error::ContextOverflow {
                len: n,
                context: self.config.context,
            });
        }
        let mut ids = Vec::with_capacity(n);
        ids.push(self.vocab.bos() as usize);
        for &t in tokens {
            self.vocab.check(t)?;
            ids.push(t as usize);
        }

        let d = self.config.d_model;
        let scale = 1.0 / libm::sqrt(d as f64);
        let tok = g.select_rows(vars[0], ids)?;
        let pos = g.select_rows(vars[1], (0..n).collect())?;
        let mut h = g.add(tok, pos)?;

        for l in 0..self.config.n_layers {
            let w = &vars[2 + l * PER_LAYER..2 + (l + 1) * PER_LAYER];
            let a = g.rms_norm(h, NORM_EPS)?;
            let q = g.matmul(a, w[0])?;
            let k = g.matmul(a, w[1])?;
            let v = g.matmul(a, w[2])?;
            let s = g.matmul_nt(q, k)?;
            let s = g.scale(s, scale)?;
            let p = g.causal_softmax(s)?;
            let o = g.matmul(p, v)?;
            let o = g.matmul(o, w[3])?;
            h = g.add(h, o)?;

            let m = g.rms_norm(h, NORM_EPS)?;
            let f = g.matmul(m, w[4])?;
            let f = g.add_row(f, w[5])?;
            let f = g.tanh(f)?;
            let f = g.matmul(f, w[6])?;
            let f = g.add_row(f, w[7])?;
            h = g.add(h, f)?;
        }

        let last = vars.len();
        let hf = g.rms_norm(h, NORM_EPS)?;
        let logits = g.matmul(hf, vars[last - 2])?;
        let logits = g.add_row(logits, vars[last - 1])?;
        g.log_softmax(logits)
    }

    /// Vector node of the per-token log-probabilities of `response` given
    /// `prompt`.
    pub fn response_log_probs(
        &self,
        g: &mut Graph,
        vars: &[Var],
        prompt: &[TokenId],
        response: &[TokenId],
    ) -> Result<Var> {
        if response.is_empty() {
            return Err(Error::Empty("response"));
        }
        self.check_input(prompt, response)?;
        let mut tokens = Vec::with_capacity(prompt.len() + response.len());
        tokens.extend_from_slice(prompt);
        tokens.extend_from_slice(response);
        // the final token is never an input position
        let lp = self.next_token_log_probs(g, vars, &tokens[..tokens.len() - 1])?;
        let idx = response
            .iter()
            .enumerate()
            .map(|(t, &id)| (prompt.len() + t, id as usize))
            .collect();
        g.gather(lp, idx)
    }

    pub fn seq_logprob(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<SequenceTrace> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let lp = self.response_log_probs(&mut g, &vars, prompt, response)?;
        SequenceTrace::new(response.to_vec(), g.value(lp).data().to_vec())
    }

    /// Ancestral sampling from `[bos] ++ prompt`. Stops at `eos` (not
    /// returned), after `max_len` tokens, or when the context is full.
    /// `temperature == 0` is greedy decoding.
    pub fn sample(&self, prompt: &[TokenId], cfg: &SampleConfig) -> Result<TokenSeq> {
        self.check_input(prompt, &[])?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut tokens: TokenSeq = prompt.to_vec();
        let mut out = TokenSeq::new();
        while out.len() < cfg.max_len && tokens.len() < self.config.context {
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let lp = self.next_token_log_probs(&mut g, &vars, &tokens)?;
            let v = self.vocab.size();
            let row = &g.value(lp).data()[tokens.len() * v..(tokens.len() + 1) * v];
            let next = if cfg.temperature <= 0.0 {
                argmax(row)
            } else {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = row
                    .iter()
                    .map(|x| libm::exp((x - m) / cfg.temperature))
                    .collect();
                let total = ordered_sum(&w);
                let mut u = rng.gen::<f64>() * total;
                let mut pick = w.len() - 1;
                for (i, wi) in w.iter().enumerate() {
                    if u < *wi {
                        pick = i;
                        break;
                    }
                    u -= wi;
                }
                pick
            } as TokenId;
            if next == self.vocab.eos() {
                break;
            }
            tokens.push(next);
            out.push(next);
        }
        Ok(out)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct SampleConfig {
    pub max_len: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            max_len: 32,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Read-only snapshot of a policy. There is no mutable access to the
/// weights, so a frozen model can serve as `π_ref` or a fixed pilot.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel(ModelParams);

impl FrozenModel {
    pub fn params(&self) -> &ModelParams {
        &self.0
    }

    pub fn seq_logprob(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<SequenceTrace> {
        self.0.seq_logprob(prompt, response)
    }
}

pub fn clone_frozen(params: &ModelParams) -> FrozenModel {
    FrozenModel(params.clone())
}
