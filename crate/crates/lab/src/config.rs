//! Flat `key = value` run configuration. `#` starts a comment; keys are
//! the [`TrainConfig`] and [`ModelConfig`] field names.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sgdpo_core::losses::Method;
use sgdpo_core::math::Beta;
use sgdpo_core::policy::ModelConfig;
use sgdpo_core::subsequence::SpanMode;
use sgdpo_core::trainer::{OptimizerKind, Schedule, TrainConfig};

use crate::error::{io_err, LabError, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

pub const KEYS: &[&str] = &[
    "beta",
    "method",
    "r1",
    "r2",
    "span_mode",
    "sft_lr",
    "po_lr",
    "batch_size",
    "sft_steps",
    "po_steps",
    "schedule",
    "warmup_ratio",
    "optimizer",
    "weight_decay",
    "ccr_window",
    "seed",
    "d_model",
    "n_layers",
    "d_ff",
    "context",
    "max_params",
];

fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| format!("`{key}`: cannot parse `{v}`: {e}"))
}

pub fn parse_method(v: &str) -> std::result::Result<Method, String> {
    match v.to_ascii_lowercase().as_str() {
        "dpo" => Ok(Method::Dpo),
        "sgdpo" => Ok(Method::Sgdpo),
        _ => Err(format!("unknown method `{v}` (dpo, sgdpo)")),
    }
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Dpo => "dpo",
        Method::Sgdpo => "sgdpo",
    }
}

pub fn parse_span_mode(v: &str) -> std::result::Result<SpanMode, String> {
    match v.to_ascii_lowercase().as_str() {
        "same" | "same-index" | "pilot_s" => Ok(SpanMode::SameIndex),
        "different" | "different-index" | "pilot_d" => Ok(SpanMode::DifferentIndex),
        _ => Err(format!("unknown span mode `{v}` (same, different)")),
    }
}

impl RunConfig {
    /// Set one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        let m = &mut self.model;
        match key {
            "beta" => t.beta = Beta::new(num(key, value)?).map_err(|e| e.to_string())?,
            "method" => t.method = parse_method(value)?,
            "r1" => t.r1 = num(key, value)?,
            "r2" => t.r2 = num(key, value)?,
            "span_mode" => t.span_mode = parse_span_mode(value)?,
            "sft_lr" => t.sft_lr = num(key, value)?,
            "po_lr" => t.po_lr = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "sft_steps" => t.sft_steps = num(key, value)?,
            "po_steps" => t.po_steps = num(key, value)?,
            "schedule" => {
                t.schedule = match value {
                    "cosine" => Schedule::Cosine,
                    "constant" => Schedule::Constant,
                    _ => return Err(format!("unknown schedule `{value}` (cosine, constant)")),
                }
            }
            "warmup_ratio" => t.warmup_ratio = num(key, value)?,
            "optimizer" => {
                let wd = match t.optimizer {
                    OptimizerKind::AdamW { weight_decay, .. } => weight_decay,
                    OptimizerKind::Sgd => 0.0,
                };
                t.optimizer = match value {
                    "adamw" => OptimizerKind::adamw(wd),
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(format!("unknown optimizer `{value}` (adamw, sgd)")),
                }
            }
            "weight_decay" => match &mut t.optimizer {
                OptimizerKind::AdamW { weight_decay, .. } => *weight_decay = num(key, value)?,
                OptimizerKind::Sgd => return Err("weight_decay needs optimizer = adamw".into()),
            },
            "ccr_window" => t.ccr_window = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "d_model" => m.d_model = num(key, value)?,
            "n_layers" => m.n_layers = num(key, value)?,
            "d_ff" => m.d_ff = num(key, value)?,
            "context" => m.context = num(key, value)?,
            "max_params" => m.max_params = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Apply every assignment of a config document.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| LabError::ConfigFile {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            self.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Serialize every key; `apply_text` of the output reproduces `self`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("beta", t.beta.value().to_string());
        kv("method", method_name(t.method).into());
        kv("r1", t.r1.to_string());
        kv("r2", t.r2.to_string());
        kv(
            "span_mode",
            match t.span_mode {
                SpanMode::SameIndex => "same",
                SpanMode::DifferentIndex => "different",
            }
            .into(),
        );
        kv("sft_lr", t.sft_lr.to_string());
        kv("po_lr", t.po_lr.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("sft_steps", t.sft_steps.to_string());
        kv("po_steps", t.po_steps.to_string());
        kv(
            "schedule",
            match t.schedule {
                Schedule::Cosine => "cosine",
                Schedule::Constant => "constant",
            }
            .into(),
        );
        kv("warmup_ratio", t.warmup_ratio.to_string());
        match t.optimizer {
            OptimizerKind::AdamW { weight_decay, .. } => {
                kv("optimizer", "adamw".into());
                kv("weight_decay", weight_decay.to_string());
            }
            OptimizerKind::Sgd => kv("optimizer", "sgd".into()),
        }
        kv("ccr_window", t.ccr_window.to_string());
        kv("seed", t.seed.to_string());
        kv("d_model", m.d_model.to_string());
        kv("n_layers", m.n_layers.to_string());
        kv("d_ff", m.d_ff.to_string());
        kv("context", m.context.to_string());
        kv("max_params", m.max_params.to_string());
        s
    }
}
