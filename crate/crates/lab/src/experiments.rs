//! Desk-scale training studies: the r sweep over pilot window ratios and
//! the end-to-end held-out accuracy run.

use rayon::prelude::*;

use sgdpo_core::data::{synth_dataset, tokenize_all, vocab_for, SynthSpec};
use sgdpo_core::losses::Method;
use sgdpo_core::policy::{ModelConfig, ModelParams, Vocab};
use sgdpo_core::trainer::{
    ccr_crr, margin_accuracy_tokenized, po_train_tokenized, sft_corpus, sft_train, TrainConfig,
    TrainHistory,
};
use sgdpo_core::Result;

pub fn study_model() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_layers: 1,
        d_ff: 64,
        context: 32,
        max_params: 200_000,
    }
}

#[derive(Debug, Clone)]
pub struct TrendSettings {
    pub ratios: Vec<f64>,
    pub n_examples: usize,
    pub alphabet: Vec<u8>,
    pub rule: String,
    pub sft_steps: usize,
    pub po_steps: usize,
    pub po_lr: f64,
    pub window: usize,
}

impl Default for TrendSettings {
    fn default() -> Self {
        Self {
            ratios: vec![0.6, 0.7, 0.8, 0.9],
            n_examples: 300,
            alphabet: b"abcdefgh".to_vec(),
            rule: "suffix".into(),
            sft_steps: 200,
            po_steps: 300,
            po_lr: 1e-3,
            window: 80,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedTrend {
    pub seed: u64,
    pub dpo: (f64, f64),
    /// `(r, ccr, crr)` in the order of [`TrendSettings::ratios`].
    pub sgdpo: Vec<(f64, f64, f64)>,
}

fn strictly_decreasing(v: impl Iterator<Item = f64>) -> bool {
    let v: Vec<f64> = v.collect();
    v.windows(2).all(|w| w[1] < w[0])
}

impl SeedTrend {
    /// CCR and CRR both fall as r grows.
    pub fn monotone(&self) -> bool {
        strictly_decreasing(self.sgdpo.iter().map(|t| t.1))
            && strictly_decreasing(self.sgdpo.iter().map(|t| t.2))
    }

    /// CRR at the smallest r exceeds the DPO CRR.
    pub fn beats_dpo(&self) -> bool {
        self.sgdpo.first().is_some_and(|t| t.2 > self.dpo.1)
    }
}

fn trend_seed(s: &TrendSettings, seed: u64) -> Result<SeedTrend> {
    let data = synth_dataset(&SynthSpec {
        alphabet: s.alphabet.clone(),
        n_examples: s.n_examples,
        rule: s.rule.clone(),
        seed,
        ..SynthSpec::default()
    })?;
    let vocab = vocab_for(&data);
    let toks = tokenize_all(&data, &vocab)?;
    let base = TrainConfig {
        seed,
        sft_steps: s.sft_steps,
        po_steps: s.po_steps,
        po_lr: s.po_lr,
        ccr_window: s.window,
        ..TrainConfig::default()
    };
    let init = ModelParams::init(study_model(), vocab, seed)?;
    let sft = sft_train(&init, &sft_corpus(&toks), &base)?.params;

    let mut methods: Vec<Option<f64>> = vec![None];
    methods.extend(s.ratios.iter().map(|&r| Some(r)));
    let runs: Vec<(f64, f64)> = methods
        .par_iter()
        .map(|r| {
            let cfg = match *r {
                None => TrainConfig {
                    method: Method::Dpo,
                    ..base.clone()
                },
                Some(r) => TrainConfig {
                    r1: r,
                    r2: r,
                    ..base.clone()
                },
            };
            let out = po_train_tokenized(&sft, toks.clone(), &cfg)?;
            ccr_crr(&out.history, s.window)
        })
        .collect::<Result<_>>()?;
    Ok(SeedTrend {
        seed,
        dpo: runs[0],
        sgdpo: s
            .ratios
            .iter()
            .zip(&runs[1..])
            .map(|(&r, &(c, d))| (r, c, d))
            .collect(),
    })
}

pub fn trend_study(s: &TrendSettings, seeds: &[u64]) -> Result<Vec<SeedTrend>> {
    seeds.par_iter().map(|&seed| trend_seed(s, seed)).collect()
}

#[derive(Debug, Clone)]
pub struct EndToEnd {
    pub seed: u64,
    pub accuracy: f64,
    pub history: TrainHistory,
    pub params: ModelParams,
}

/// 500 training pairs of the copy-run rule, 200 held out, SFT then 200
/// SGDPO steps.
pub fn end_to_end(seed: u64) -> Result<EndToEnd> {
    let spec = SynthSpec {
        n_examples: 700,
        rule: "copy-run".into(),
        seed,
        ..SynthSpec::default()
    };
    let data = synth_dataset(&spec)?;
    let (train, held) = data.split_at(500);
    let vocab = Vocab::from_bytes(&spec.alphabet);
    let train = tokenize_all(train, &vocab)?;
    let held = tokenize_all(held, &vocab)?;
    let cfg = TrainConfig {
        seed,
        sft_steps: 200,
        po_steps: 200,
        ..TrainConfig::default()
    };
    let init = ModelParams::init(study_model(), vocab, seed)?;
    let sft = sft_train(&init, &sft_corpus(&train), &cfg)?.params;
    let out = po_train_tokenized(&sft, train, &cfg)?;
    let accuracy = margin_accuracy_tokenized(&out.params, out.reference.params(), &held, cfg.beta)?;
    Ok(EndToEnd {
        seed,
        accuracy,
        history: out.history,
        params: out.params,
    })
}
