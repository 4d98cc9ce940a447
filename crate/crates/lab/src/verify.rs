//! Oracle checks behind `sgdpo verify`: every closed form against an
//! independent evaluation, the model-level gradient checks and the
//! emitted flow field.

use std::time::Instant;

use sgdpo_core::autodiff::{
    analytic_gradient, grad_check, relative_error, richardson_partial, Coord, GradCheckConfig,
    Graph, Var,
};
use sgdpo_core::data::TokenizedExample;
use sgdpo_core::gradflow::{field_grid, FieldGrid, FieldMethod};
use sgdpo_core::losses::{preference_loss, LossInput, Method};
use sgdpo_core::math::*;
use sgdpo_core::policy::{clone_frozen, ModelConfig, ModelParams, Vocab};
use sgdpo_core::subsequence::{build_spans, SpanMode, SpanSpec};
use sgdpo_core::trainer::{
    preference_gradients, reference_traces, BatchItem, OptimizerKind, PoTrainer, RefTraces,
    Schedule, TrainConfig,
};

use crate::output::field_csv;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {} ({:.2}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Check {
    let t = Instant::now();
    let (passed, detail) = f();
    Check {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

pub const SWEEP_BETAS: [f64; 3] = [0.05, 0.1, 0.5];

/// `0.05, 0.10, …, 1.50`.
pub fn sweep_axis() -> Vec<f64> {
    (1..=30).map(|k| 0.05 * k as f64).collect()
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Maximum relative error of the DPO partials and of the pilot partials
/// against central differences of their surrogates.
pub fn closed_form_errors(pilot_axis: &[f64]) -> (f64, f64) {
    let xs = sweep_axis();
    let mut dpo = 0.0f64;
    let mut pilot = 0.0f64;
    for &b in &SWEEP_BETAS {
        let beta = Beta::new(b).unwrap();
        for &x1 in &xs {
            for &x2 in &xs {
                let p = RatioPoint::new(x1, x2).unwrap();
                let n1 = central(
                    |t| l_dpo_surrogate(RatioPoint::new(t, x2).unwrap(), beta),
                    x1,
                );
                let n2 = central(
                    |t| l_dpo_surrogate(RatioPoint::new(x1, t).unwrap(), beta),
                    x2,
                );
                dpo = dpo.max(rel(n1, dpo_partial_x1(p, beta)));
                dpo = dpo.max(rel(n2, dpo_partial_x2(p, beta)));
                for &y1 in pilot_axis {
                    for &y2 in pilot_axis {
                        let l = |a: f64, c: f64| {
                            l_pilot_surrogate(PilotPoint::new(a, c, y1, y2).unwrap(), beta)
                        };
                        let n1 = central(|t| l(t, x2), x1);
                        let n2 = central(|t| l(x1, t), x2);
                        pilot = pilot.max(rel(n1, pilot_partial_x1(x1, y2, beta).unwrap()));
                        pilot = pilot.max(rel(n2, pilot_partial_x2(x2, y1, beta).unwrap()));
                    }
                }
            }
        }
    }
    (dpo, pilot)
}

pub fn check_closed_forms() -> Check {
    timed("closed-form partials vs finite differences", || {
        let (d, p) = closed_form_errors(&sweep_axis());
        (
            d < 1e-6 && p < 1e-6,
            format!("max rel err DPO {d:.2e}, pilot {p:.2e} (tol 1e-6)"),
        )
    })
}

/// Maximum relative deviation of `|∂1/∂2|` from `X2/X1` and from
/// `(X2/X1)·f(z)`.
pub fn ratio_identity_errors() -> (f64, f64) {
    let xs = sweep_axis();
    let mut dpo = 0.0f64;
    let mut pilot = 0.0f64;
    for &b in &SWEEP_BETAS {
        let beta = Beta::new(b).unwrap();
        for &x1 in &xs {
            for &x2 in &xs {
                let p = RatioPoint::new(x1, x2).unwrap();
                let direct = (dpo_partial_x1(p, beta) / dpo_partial_x2(p, beta)).abs();
                dpo = dpo.max(rel(direct, x2 / x1));
                for &y1 in xs.iter().step_by(3) {
                    for &y2 in xs.iter().step_by(3) {
                        let q = PilotPoint::new(x1, x2, y1, y2).unwrap();
                        let direct = (pilot_partial_x1(x1, y2, beta).unwrap()
                            / pilot_partial_x2(x2, y1, beta).unwrap())
                        .abs();
                        let want = x2 / x1 * f_z(y1 / y2, x1 / y1, x2 / y2, beta).unwrap();
                        pilot = pilot.max(rel(direct, want));
                        pilot = pilot.max(rel(pilot_grad_ratio(q, beta), want));
                    }
                }
            }
        }
    }
    (dpo, pilot)
}

pub fn check_ratio_identities() -> Check {
    timed("gradient ratio identities", || {
        let (d, p) = ratio_identity_errors();
        (
            d < 1e-10 && p < 1e-10,
            format!("max rel err X2/X1 {d:.2e}, (X2/X1)f(z) {p:.2e} (tol 1e-10)"),
        )
    })
}

/// Count of strict-monotonicity violations of the pilot partials over
/// 100-point sweeps of the opposing pilot ratio.
pub fn monotonicity_violations() -> usize {
    let sweep: Vec<f64> = (0..100).map(|k| 0.1 + 1.4 * k as f64 / 99.0).collect();
    let mut bad = 0;
    for &b in &SWEEP_BETAS {
        let beta = Beta::new(b).unwrap();
        for &x in &sweep_axis() {
            let d1: Vec<f64> = sweep
                .iter()
                .map(|&y2| pilot_partial_x1(x, y2, beta).unwrap())
                .collect();
            let d2: Vec<f64> = sweep
                .iter()
                .map(|&y1| pilot_partial_x2(x, y1, beta).unwrap().abs())
                .collect();
            bad += d1.windows(2).filter(|w| !(w[1] > w[0])).count();
            bad += d2.windows(2).filter(|w| !(w[1] < w[0])).count();
        }
    }
    bad
}

pub fn check_monotonicity() -> Check {
    timed("pilot partial monotonicity in Y2 and Y1", || {
        let v = monotonicity_violations();
        (v == 0, format!("{v} violations over 100-point sweeps"))
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FzReport {
    pub max_unit_dev: f64,
    pub increasing_violations: usize,
    pub decreasing_violations: usize,
    pub below_one: usize,
    pub sampled_below: usize,
}

pub fn fz_report() -> FzReport {
    let b = Beta::DEFAULT;
    let zs: Vec<f64> = (0..200)
        .map(|k| 0.05 * 400f64.powf(k as f64 / 199.0))
        .collect();
    let ps: Vec<f64> = (0..25).map(|k| 0.1 * 40f64.powf(k as f64 / 24.0)).collect();
    let mut r = FzReport::default();
    for &z in &zs {
        r.max_unit_dev = r
            .max_unit_dev
            .max((f_z(z, 1.0, 1.0, b).unwrap() - 1.0).abs());
    }
    for &p1 in &ps {
        for &p2 in &ps {
            let prod = p1 * p2;
            if (prod - 1.0).abs() < 1e-9 {
                continue;
            }
            let v: Vec<f64> = zs.iter().map(|&z| f_z(z, p1, p2, b).unwrap()).collect();
            if prod < 1.0 {
                r.increasing_violations += v.windows(2).filter(|w| !(w[1] > w[0])).count();
                r.below_one += v.iter().filter(|&&f| !(f > 1.0)).count();
                r.sampled_below += v.len();
            } else {
                r.decreasing_violations += v.windows(2).filter(|w| !(w[1] < w[0])).count();
            }
        }
    }
    r
}

pub fn check_fz() -> Check {
    timed("f(z) identity, monotonicity and lower bound", || {
        let r = fz_report();
        let ok = r.max_unit_dev < 1e-12
            && r.increasing_violations == 0
            && r.decreasing_violations == 0
            && r.below_one == 0;
        (
            ok,
            format!(
                "|f-1| at p1=p2=1 {:.1e}; violations inc {} dec {}; f<=1 at {} of {} points with p1p2<1",
                r.max_unit_dev, r.increasing_violations, r.decreasing_violations, r.below_one, r.sampled_below
            ),
        )
    })
}

/// States with `Y2 > X2` where the pilot chosen partial fails to exceed
/// the DPO one, out of the number sampled.
pub fn chosen_boost_violations() -> (usize, usize) {
    let xs = sweep_axis();
    let mut bad = 0;
    let mut n = 0;
    for &b in &SWEEP_BETAS {
        let beta = Beta::new(b).unwrap();
        for &x1 in &xs {
            for &x2 in &xs {
                let d = dpo_partial_x1(RatioPoint::new(x1, x2).unwrap(), beta);
                for &y2 in xs.iter().filter(|&&y| y > x2) {
                    n += 1;
                    if !(pilot_partial_x1(x1, y2, beta).unwrap() > d) {
                        bad += 1;
                    }
                }
            }
        }
    }
    (bad, n)
}

pub fn check_chosen_boost() -> Check {
    timed("pilot enlarges chosen partial where Y2 > X2", || {
        let (bad, n) = chosen_boost_violations();
        (bad == 0 && n > 0, format!("{bad} violations in {n} states"))
    })
}

// ---------------------------------------------------------------------
// model level

/// The 4-pair batch, reference and policy of the model-level checks.
pub struct ModelFixture {
    pub policy: ModelParams,
    pub reference: ModelParams,
    pub data: Vec<TokenizedExample>,
    pub refs: Vec<RefTraces>,
    pub spans: Vec<SpanSpec>,
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_layers: 2,
        d_ff: 32,
        context: 16,
        max_params: 5_000,
    }
}

impl ModelFixture {
    /// With `full_windows`, every pair has equal lengths and the windows
    /// cover both responses.
    pub fn new(full_windows: bool) -> Self {
        let vocab = Vocab::from_bytes(b"abcd");
        let pairs: [(&[u8], &[u8], &[u8]); 4] = [
            (b"abca", b"aaa", b"dcbd"),
            (b"dd", b"ddd", b"abc"),
            (b"bcab", b"bbbb", b"cadb"),
            (b"cab", b"bb", b"ad"),
        ];
        let data: Vec<TokenizedExample> = pairs
            .iter()
            .map(|&(p, c, r)| {
                let (c, r) = if full_windows {
                    let n = c.len().min(r.len());
                    (&c[..n], &r[..n])
                } else {
                    (c, r)
                };
                TokenizedExample {
                    prompt: vocab.encode(p).unwrap(),
                    chosen: vocab.encode_response(c).unwrap(),
                    rejected: vocab.encode_response(r).unwrap(),
                }
            })
            .collect();
        let reference = ModelParams::init(small_model_config(), vocab.clone(), 11).unwrap();
        let policy = ModelParams::init(small_model_config(), vocab, 12).unwrap();
        let refs = reference_traces(&clone_frozen(&reference), &data).unwrap();
        let (r, mode) = if full_windows {
            (1.0, SpanMode::SameIndex)
        } else {
            (0.6, SpanMode::DifferentIndex)
        };
        let spans = data
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                build_spans(ex.chosen.len(), ex.rejected.len(), r, r, mode, i as u64).unwrap()
            })
            .collect();
        Self {
            policy,
            reference,
            data,
            refs,
            spans,
        }
    }

    pub fn items(&self) -> Vec<BatchItem<'_>> {
        self.data
            .iter()
            .zip(&self.refs)
            .zip(&self.spans)
            .enumerate()
            .map(|(i, ((ex, rt), s))| BatchItem {
                index: i,
                example: ex,
                refs: rt,
                span: *s,
            })
            .collect()
    }

    /// The library loss as a closure over parameter leaves.
    pub fn loss(
        &self,
        method: Method,
    ) -> impl FnMut(&mut Graph, &[Var]) -> sgdpo_core::Result<Var> + '_ {
        move |g, vars| {
            let mut inputs = Vec::new();
            for ((ex, rt), span) in self.data.iter().zip(&self.refs).zip(&self.spans) {
                inputs.push(LossInput {
                    policy_chosen: self
                        .policy
                        .response_log_probs(g, vars, &ex.prompt, &ex.chosen)?,
                    policy_rejected: self.policy.response_log_probs(
                        g,
                        vars,
                        &ex.prompt,
                        &ex.rejected,
                    )?,
                    ref_chosen: &rt.chosen,
                    ref_rejected: &rt.rejected,
                    span: *span,
                });
            }
            Ok(preference_loss(g, method, &inputs, Beta::DEFAULT)?.loss)
        }
    }

    /// SGDPO objective rebuilt from graph primitives, with the pilot ratios
    /// frozen at their values under the unperturbed policy.
    pub fn frozen_pilot_loss(
        &self,
    ) -> impl FnMut(&mut Graph, &[Var]) -> sgdpo_core::Result<Var> + '_ {
        let b = Beta::DEFAULT.value();
        let win = |t: &[f64], (s, l): (usize, usize)| t[s..s + l].iter().sum::<f64>();
        let pilots: Vec<(f64, f64)> = self
            .data
            .iter()
            .zip(&self.refs)
            .zip(&self.spans)
            .map(|((ex, rt), sp)| {
                let pc = self.policy.seq_logprob(&ex.prompt, &ex.chosen).unwrap();
                let pr = self.policy.seq_logprob(&ex.prompt, &ex.rejected).unwrap();
                (
                    win(&pc.per_token_logprob, sp.chosen())
                        - win(&rt.chosen.per_token_logprob, sp.chosen()),
                    win(&pr.per_token_logprob, sp.rejected())
                        - win(&rt.rejected.per_token_logprob, sp.rejected()),
                )
            })
            .collect();
        move |g, vars| {
            let mut total = g.scalar(0.0);
            for ((ex, rt), &(y1, y2)) in self.data.iter().zip(&self.refs).zip(&pilots) {
                let pc = self
                    .policy
                    .response_log_probs(g, vars, &ex.prompt, &ex.chosen)?;
                let pr = self
                    .policy
                    .response_log_probs(g, vars, &ex.prompt, &ex.rejected)?;
                let sc = g.sum(pc)?;
                let sr = g.sum(pr)?;
                let a = g.scalar(-rt.chosen.total_logprob - y2);
                let c = g.scalar(rt.rejected.total_logprob + y1);
                let m1 = g.add(sc, a)?;
                let m1 = g.scale(m1, b)?;
                let t1 = g.log_sigmoid(m1)?;
                let m2 = g.sub(c, sr)?;
                let m2 = g.scale(m2, b)?;
                let t2 = g.log_sigmoid(m2)?;
                total = g.add(total, t1)?;
                total = g.add(total, t2)?;
            }
            g.scale(total, -0.5 / self.data.len() as f64)
        }
    }
}

pub fn model_check_config() -> GradCheckConfig {
    GradCheckConfig {
        tol: 1e-6,
        max_coords: Some(200),
        rel_step: 1e-4,
        richardson: true,
        ..GradCheckConfig::default()
    }
}

/// Worst relative error of the DPO and SGDPO parameter gradients against
/// finite differences on the fixture.
pub fn model_gradient_errors() -> sgdpo_core::Result<(f64, f64, usize)> {
    let fx = ModelFixture::new(false);
    let cfg = model_check_config();
    let dpo = grad_check(fx.policy.tensors(), fx.loss(Method::Dpo), &cfg);
    if let Some(f) = dpo.failure {
        return Err(sgdpo_core::Error::Config(format!("grad check: {f:?}")));
    }

    let (_, auto) = analytic_gradient(fx.policy.tensors(), &mut fx.loss(Method::Sgdpo))?;
    let mut oracle = fx.frozen_pilot_loss();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (t, tensor) in fx.policy.tensors().iter().enumerate() {
        let stride = (tensor.numel() / 12).max(1);
        for i in (0..tensor.numel()).step_by(stride) {
            let n = richardson_partial(
                fx.policy.tensors(),
                &mut oracle,
                Coord {
                    tensor: t,
                    index: i,
                },
                cfg.rel_step,
            )?;
            worst = worst.max(relative_error(auto[t].data()[i], n, cfg.abs_floor));
            checked += 1;
        }
    }
    Ok((dpo.max_rel_err, worst, checked.min(dpo.checked)))
}

pub fn check_model_gradients() -> Check {
    timed("model-level gradient check, both losses", || {
        let params = ModelFixture::new(false).policy.param_count();
        match model_gradient_errors() {
            Ok((d, s, n)) => (
                d < 1e-6 && s < 1e-6 && params <= 5_000,
                format!("{params} params, batch 4, >= {n} coords: DPO {d:.2e}, SGDPO {s:.2e} (tol 1e-6)"),
            ),
            Err(e) => (false, e.to_string()),
        }
    })
}

/// Max `|g_sgdpo − g_dpo/2|` at full windows and the max parameter gap
/// between a 10-step SGDPO run and DPO at half the learning rate.
pub fn equivalence_gaps() -> sgdpo_core::Result<(f64, f64)> {
    let fx = ModelFixture::new(true);
    let items = fx.items();
    let d = preference_gradients(&fx.policy, Method::Dpo, Beta::DEFAULT, &items)?;
    let s = preference_gradients(&fx.policy, Method::Sgdpo, Beta::DEFAULT, &items)?;
    let mut grad_gap = 0.0f64;
    for (a, b) in d.grads.iter().zip(&s.grads) {
        for (x, y) in a.data().iter().zip(b.data()) {
            grad_gap = grad_gap.max((0.5 * x - y).abs());
        }
    }

    let data: Vec<TokenizedExample> = fx.data.iter().cycle().take(8).cloned().collect();
    let base = TrainConfig {
        r1: 1.0,
        r2: 1.0,
        span_mode: SpanMode::SameIndex,
        batch_size: 4,
        po_steps: 10,
        po_lr: 0.2,
        schedule: Schedule::Constant,
        warmup_ratio: 0.0,
        optimizer: OptimizerKind::Sgd,
        ..TrainConfig::default()
    };
    let mut sg = PoTrainer::new(&fx.policy, data.clone(), &base)?;
    let mut dp = PoTrainer::new(
        &fx.policy,
        data,
        &TrainConfig {
            method: Method::Dpo,
            po_lr: 0.1,
            ..base
        },
    )?;
    let mut traj_gap = 0.0f64;
    for _ in 0..10 {
        sg.step()?;
        dp.step()?;
        for (a, b) in sg.params().tensors().iter().zip(dp.params().tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                traj_gap = traj_gap.max((x - y).abs());
            }
        }
    }
    Ok((grad_gap, traj_gap))
}

pub fn check_equivalence() -> Check {
    timed("full-window SGDPO equals half DPO", || {
        match equivalence_gaps() {
        Ok((g, t)) => (
            g < 1e-10 && t < 1e-8,
            format!("max |g_sgdpo - g_dpo/2| {g:.2e} (tol 1e-10); 10-step trajectory gap {t:.2e} (tol 1e-8)"),
        ),
        Err(e) => (false, e.to_string()),
    }
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FieldReport {
    pub max_ratio_err: f64,
    pub unit_value: Option<(f64, f64)>,
    pub max_magnitude: f64,
    pub truncated: usize,
    pub direction_err: f64,
}

/// Parse an emitted `x1,x2,dx1,dx2` CSV and check it against the closed
/// forms.
pub fn field_report(csv_bytes: &[u8], beta: Beta, truncation: f64) -> Result<FieldReport, String> {
    let mut rdr = csv::Reader::from_reader(csv_bytes);
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != crate::output::FIELD_HEADER {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut r = FieldReport {
        max_ratio_err: 0.0,
        unit_value: None,
        max_magnitude: 0.0,
        truncated: 0,
        direction_err: 0.0,
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        let (x1, x2, dx1, dx2) = (v[0], v[1], v[2], v[3]);
        r.max_ratio_err = r.max_ratio_err.max(rel((dx1 / dx2).abs(), x2 / x1));
        let m = dx1.hypot(dx2);
        r.max_magnitude = r.max_magnitude.max(m);
        let p = RatioPoint::new(x1, x2).map_err(|e| e.to_string())?;
        let (a, b) = (dpo_partial_x1(p, beta), dpo_partial_x2(p, beta));
        let raw = a.hypot(b);
        if raw > truncation {
            r.truncated += 1;
            // same direction, magnitude at the cap
            r.direction_err = r.direction_err.max(rel(dx1, a * truncation / raw));
            r.direction_err = r.direction_err.max(rel(dx2, b * truncation / raw));
        } else {
            r.direction_err = r.direction_err.max(rel(dx1, a)).max(rel(dx2, b));
        }
        if x1 == 1.0 && x2 == 1.0 {
            r.unit_value = Some((dx1, dx2));
        }
    }
    Ok(r)
}

pub fn check_dpo_field() -> Check {
    timed("DPO flow field CSV", || {
        let grid = FieldGrid::default();
        let run = || -> Result<FieldReport, String> {
            let pts = field_grid(FieldMethod::Dpo, Beta::DEFAULT, &grid, None)
                .map_err(|e| e.to_string())?;
            let bytes = field_csv(&pts).map_err(|e| e.to_string())?;
            field_report(&bytes, Beta::DEFAULT, grid.truncation)
        };
        match run() {
            Ok(r) => {
                let unit_ok = matches!(r.unit_value, Some((a, b)) if (a - 0.05).abs() < 1e-12 && (b + 0.05).abs() < 1e-12);
                let ok = r.max_ratio_err < 1e-10
                    && unit_ok
                    && r.max_magnitude <= grid.truncation * (1.0 + 1e-12)
                    && r.truncated > 0
                    && r.direction_err < 1e-12;
                (
                    ok,
                    format!(
                        "ratio err {:.1e}; (1,1) -> {:?}; {} vectors truncated, max |v| {:.6}",
                        r.max_ratio_err, r.unit_value, r.truncated, r.max_magnitude
                    ),
                )
            }
            Err(e) => (false, e),
        }
    })
}

/// Every fast check in order.
pub fn run_all() -> Vec<Check> {
    vec![
        check_closed_forms(),
        check_ratio_identities(),
        check_monotonicity(),
        check_fz(),
        check_model_gradients(),
        check_equivalence(),
        check_chosen_boost(),
        check_dpo_field(),
    ]
}
