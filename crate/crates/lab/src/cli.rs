//! The `sgdpo` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use sgdpo_core::data::{synth_dataset, tokenize_all, vocab_for, PreferenceExample, SynthSpec};
use sgdpo_core::gradflow::{
    field_grid, fz_landscape, partial_landscape, AxisRange, FieldGrid, FieldMethod, PartialKind,
    PilotParams,
};
use sgdpo_core::math::Beta;
use sgdpo_core::policy::ModelParams;
use sgdpo_core::trainer::{ccr_crr, po_train_tokenized, sft_corpus, sft_train};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::error::{LabError, Result};
use crate::experiments::{end_to_end, trend_study, TrendSettings};
use crate::fsutil::{output_dir, OUT_DIR_ENV};
use crate::jsonl::{load_jsonl, save_jsonl};
use crate::output::{field_csv, history_csv, landscape_csv, losses_csv, write_file};
use crate::{svg, verify};

#[derive(Parser, Debug)]
#[command(name = "sgdpo", version, about = "DPO and SGDPO at desk scale")]
pub struct Cli {
    /// Output directory [default: $SGDPO_OUT_DIR, else ./sgdpo-out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic preference dataset as JSONL.
    Synth(SynthArgs),
    /// Supervised fine-tuning on prompt + chosen.
    Sft(RunArgs),
    /// Preference optimization; runs SFT first unless `--init` is given.
    Train(TrainArgs),
    /// Flow field of the log-likelihood over (X1, X2).
    Gradflow(GradflowArgs),
    /// f(z) or pilot partial-derivative landscapes.
    Landscape(LandscapeArgs),
    /// Run the oracle suite; exit 1 on any failure.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value = "copy-run")]
    pub rule: String,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "abcdefghijklmnop")]
    pub alphabet: String,
    #[arg(long, default_value_t = 2)]
    pub suffix_k: usize,
    /// File name inside the output directory.
    #[arg(long, default_value = "synth.jsonl")]
    pub file: String,
}

impl SynthArgs {
    fn spec(&self) -> SynthSpec {
        SynthSpec {
            alphabet: self.alphabet.as_bytes().to_vec(),
            n_examples: self.n,
            rule: self.rule.clone(),
            suffix_k: self.suffix_k,
            seed: self.seed,
            ..SynthSpec::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// JSONL dataset; without it a copy-run dataset is generated from the seed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sft_steps: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Start from this checkpoint instead of running SFT.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub r1: Option<f64>,
    #[arg(long)]
    pub r2: Option<f64>,
    #[arg(long)]
    pub span_mode: Option<String>,
    #[arg(long)]
    pub po_steps: Option<usize>,
    #[arg(long)]
    pub po_lr: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum FieldKind {
    Dpo,
    Pilot,
}

#[derive(Args, Debug, Clone)]
pub struct GradflowArgs {
    #[arg(long, value_enum, default_value = "dpo")]
    pub method: FieldKind,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.025)]
    pub lo: f64,
    #[arg(long, default_value_t = 1.5)]
    pub hi: f64,
    #[arg(long, default_value_t = 60)]
    pub resolution: usize,
    #[arg(long, default_value_t = 1.5)]
    pub truncation: f64,
    /// Fixed pilot ratios `Y1,Y2`.
    #[arg(long, value_name = "Y1,Y2", conflicts_with = "p")]
    pub y: Option<String>,
    /// Fixed residuals `p1,p2`; pilot ratios follow the grid point.
    #[arg(long, value_name = "P1,P2")]
    pub p: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum LandscapeKind {
    Fz,
    Dx1,
    Dx2,
}

#[derive(Args, Debug, Clone)]
pub struct LandscapeArgs {
    #[arg(long, value_enum, default_value = "fz")]
    pub kind: LandscapeKind,
    /// `Y1/Y2` for the f(z) landscape.
    #[arg(long, default_value_t = 1.0)]
    pub z: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lo: f64,
    #[arg(long, default_value_t = 2.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 40)]
    pub resolution: usize,
}

#[derive(Args, Debug, Clone)]
pub struct VerifyArgs {
    /// Also run the training studies (several minutes).
    #[arg(long)]
    pub full: bool,
}

fn usage(msg: impl Into<String>) -> LabError {
    LabError::Usage(msg.into())
}

fn pair(s: &str, name: &str) -> Result<(f64, f64)> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| usage(format!("--{name} expects two comma-separated numbers")))?;
    let p = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| usage(format!("--{name}: `{v}`: {e}")))
    };
    Ok((p(a)?, p(b)?))
}

fn beta(v: f64) -> Result<Beta> {
    Ok(Beta::new(v)?)
}

impl RunArgs {
    fn config(&self, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut set = |k: &str, v: &str| cfg.set(k, v).map_err(|e| usage(format!("--{k}: {e}")));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            set("seed", &s.to_string())?;
        }
        if let Some(s) = self.sft_steps {
            set("sft_steps", &s.to_string())?;
        }
        for (k, v) in extra {
            if let Some(v) = v {
                set(k, v)?;
            }
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    fn dataset(&self, seed: u64) -> Result<Vec<PreferenceExample>> {
        match &self.data {
            Some(p) => load_jsonl(p),
            None => Ok(synth_dataset(&SynthSpec {
                seed,
                ..SynthSpec::default()
            })?),
        }
    }
}

fn run_sft(cfg: &RunConfig, data: &[PreferenceExample], dir: &Path) -> Result<ModelParams> {
    let vocab = vocab_for(data);
    let toks = tokenize_all(data, &vocab)?;
    let init = ModelParams::init(cfg.model.clone(), vocab, cfg.train.seed)?;
    eprintln!(
        "sft: {} examples, {} params, {} steps",
        data.len(),
        init.param_count(),
        cfg.train.sft_steps
    );
    let out = sft_train(&init, &sft_corpus(&toks), &cfg.train)?;
    write_file(&dir.join("sft_losses.csv"), &losses_csv(&out.losses)?)?;
    save_checkpoint(dir.join("sft.ckpt"), &out.params)?;
    Ok(out.params)
}

fn cmd_synth(a: &SynthArgs, dir: &Path) -> Result<()> {
    let data = synth_dataset(&a.spec())?;
    let path = dir.join(&a.file);
    save_jsonl(&path, &data)?;
    println!("wrote {} examples to {}", data.len(), path.display());
    Ok(())
}

fn cmd_sft(a: &RunArgs, dir: &Path) -> Result<()> {
    let cfg = a.config(&[])?;
    let data = a.dataset(cfg.train.seed)?;
    run_sft(&cfg, &data, dir)?;
    write_file(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
    println!("wrote {}", dir.join("sft.ckpt").display());
    Ok(())
}

fn cmd_train(a: &TrainArgs, dir: &Path) -> Result<()> {
    let s = |v: Option<f64>| v.map(|x| x.to_string());
    let cfg = a.run.config(&[
        ("method", a.method.clone()),
        ("beta", s(a.beta)),
        ("r1", s(a.r1)),
        ("r2", s(a.r2)),
        ("span_mode", a.span_mode.clone()),
        ("po_steps", a.po_steps.map(|v| v.to_string())),
        ("po_lr", s(a.po_lr)),
    ])?;
    let data = a.run.dataset(cfg.train.seed)?;
    let sft = match &a.init {
        Some(p) => load_checkpoint(p)?,
        None => run_sft(&cfg, &data, dir)?,
    };
    let toks = tokenize_all(&data, sft.vocab())?;
    eprintln!(
        "train: {} for {} steps",
        crate::config::method_name(cfg.train.method),
        cfg.train.po_steps
    );
    let out = po_train_tokenized(&sft, toks, &cfg.train)?;
    write_file(&dir.join("history.csv"), &history_csv(&out.history)?)?;
    save_checkpoint(dir.join("policy.ckpt"), &out.params)?;
    write_file(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
    if !out.history.is_empty() {
        let (c, r) = ccr_crr(&out.history, cfg.train.ccr_window)?;
        println!("ccr {c:.6} crr {r:.6}");
    }
    println!("wrote {}", dir.join("history.csv").display());
    Ok(())
}

fn cmd_gradflow(a: &GradflowArgs, dir: &Path) -> Result<()> {
    let grid = FieldGrid {
        x1: AxisRange::new(a.lo, a.hi),
        x2: AxisRange::new(a.lo, a.hi),
        resolution: a.resolution,
        truncation: a.truncation,
    };
    let (method, pilot, name) = match a.method {
        FieldKind::Dpo => (FieldMethod::Dpo, None, "dpo"),
        FieldKind::Pilot => {
            let p = match (&a.y, &a.p) {
                (Some(y), _) => {
                    let (y1, y2) = pair(y, "y")?;
                    PilotParams::FixedY { y1, y2 }
                }
                (None, Some(p)) => {
                    let (p1, p2) = pair(p, "p")?;
                    PilotParams::FixedP { p1, p2 }
                }
                (None, None) => PilotParams::FixedP { p1: 1.0, p2: 1.0 },
            };
            (FieldMethod::Pilot, Some(p), "pilot")
        }
    };
    let pts = field_grid(method, beta(a.beta)?, &grid, pilot.as_ref())?;
    let csv = dir.join(format!("field_{name}.csv"));
    write_file(&csv, &field_csv(&pts)?)?;
    let title = format!("{name} flow, beta {}", a.beta);
    write_file(
        &dir.join(format!("field_{name}.svg")),
        svg::quiver(&pts, &title).as_bytes(),
    )?;
    println!("wrote {}", csv.display());
    Ok(())
}

fn cmd_landscape(a: &LandscapeArgs, dir: &Path) -> Result<()> {
    let range = AxisRange::new(a.lo, a.hi);
    let b = beta(a.beta)?;
    let (l, name, al, bl) = match a.kind {
        LandscapeKind::Fz => (
            fz_landscape(a.z, range, range, a.resolution, b)?,
            "fz",
            "p1",
            "p2",
        ),
        LandscapeKind::Dx1 => (
            partial_landscape(PartialKind::Dx1, range, range, a.resolution, b)?,
            "dx1",
            "X1",
            "Y2",
        ),
        LandscapeKind::Dx2 => (
            partial_landscape(PartialKind::Dx2, range, range, a.resolution, b)?,
            "dx2",
            "X2",
            "Y1",
        ),
    };
    let csv = dir.join(format!("landscape_{name}.csv"));
    write_file(&csv, &landscape_csv(&l)?)?;
    let title = format!("{name}, beta {}", a.beta);
    write_file(
        &dir.join(format!("landscape_{name}.svg")),
        svg::heatmap(&l, &title, al, bl).as_bytes(),
    )?;
    println!("wrote {}", csv.display());
    Ok(())
}

/// Names of the failed checks.
fn cmd_verify(a: &VerifyArgs) -> Result<Vec<String>> {
    let mut failed = Vec::new();
    for c in verify::run_all() {
        println!("{}", c.line());
        if !c.passed {
            failed.push(c.name.to_string());
        }
    }
    if a.full {
        let seeds: Vec<u64> = (0..5).collect();
        let trend = trend_study(&TrendSettings::default(), &seeds)?;
        for t in &trend {
            println!(
                "  seed {}: dpo crr {:.4}; sgdpo {:?}; monotone {}; beats dpo {}",
                t.seed,
                t.dpo.1,
                t.sgdpo,
                t.monotone(),
                t.beats_dpo()
            );
        }
        let mono = trend.iter().filter(|t| t.monotone()).count();
        let beats = trend.iter().filter(|t| t.beats_dpo()).count();
        let ok = mono >= 4 && beats >= 4;
        println!(
            "[{}] r sweep trend: monotone in {mono}/5 seeds, beats DPO in {beats}/5",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed.push("r sweep trend".into());
        }
        let mut wins = 0;
        for seed in 0..3 {
            let e = end_to_end(seed)?;
            println!("  seed {seed}: held-out margin accuracy {:.3}", e.accuracy);
            wins += usize::from(e.accuracy > 0.9);
        }
        println!(
            "[{}] end-to-end accuracy > 0.9 in {wins}/3 seeds",
            if wins == 3 { "PASS" } else { "FAIL" }
        );
        if wins < 3 {
            failed.push("end-to-end accuracy".into());
        }
    }
    Ok(failed)
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let dir = output_dir(cli.out.as_deref());
    let res = match &cli.command {
        Command::Synth(a) => cmd_synth(a, &dir),
        Command::Sft(a) => cmd_sft(a, &dir),
        Command::Train(a) => cmd_train(a, &dir),
        Command::Gradflow(a) => cmd_gradflow(a, &dir),
        Command::Landscape(a) => cmd_landscape(a, &dir),
        Command::Verify(a) => match cmd_verify(a) {
            Ok(failed) if failed.is_empty() => {
                println!("all checks passed");
                Ok(())
            }
            Ok(failed) => {
                eprintln!("verification failed: {}", failed.join(", "));
                return 1;
            }
            Err(e) => Err(e),
        },
    };
    match res {
        Ok(()) => 0,
        Err(LabError::Usage(m)) => {
            eprintln!("error: {m}\n(see `sgdpo --help`; output directory also via {OUT_DIR_ENV})");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
