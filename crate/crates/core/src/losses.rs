//! DPO and SGDPO (pilot) losses over batches of sequence log-probabilities.
//!
//! Rewards are `β·log(π_θ/π_ref)` with the partition term omitted; it
//! cancels in every pairwise comparison.

use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid_unchecked, sigmoid, Beta, PilotPoint};
use crate::policy::{ordered_sum, SequenceTrace};
use crate::subsequence::{pilot_trace, SpanSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    Dpo,
    #[default]
    Sgdpo,
}

/// Where `π_pilot` comes from. Only the live policy (evaluated without
/// gradient) is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PilotSource {
    #[default]
    CurrentPolicy,
}

/// `P(y_w ≻ y_l) = e^{r_w} / (e^{r_w} + e^{r_l}) = σ(r_w − r_l)`.
pub fn bt_preference_prob(reward_w: f64, reward_l: f64) -> f64 {
    sigmoid(reward_w - reward_l)
}

/// All four sequence traces of one preference pair plus its pilot windows.
#[derive(Debug, Clone)]
pub struct ExampleTraces {
    pub policy_chosen: SequenceTrace,
    pub policy_rejected: SequenceTrace,
    pub ref_chosen: SequenceTrace,
    pub ref_rejected: SequenceTrace,
    pub span: SpanSpec,
}

/// Log reward ratios of one example and the quantities derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardQuad {
    pub log_x1: f64,
    pub log_x2: f64,
    pub log_y1: f64,
    pub log_y2: f64,
    pub log_p1: f64,
    pub log_p2: f64,
    pub log_z: f64,
}

impl RewardQuad {
    pub fn from_logs(log_x1: f64, log_x2: f64, log_y1: f64, log_y2: f64) -> Self {
        Self {
            log_x1,
            log_x2,
            log_y1,
            log_y2,
            log_p1: log_x1 - log_y1,
            log_p2: log_x2 - log_y2,
            log_z: log_y1 - log_y2,
        }
    }

    pub fn pilot_point(&self) -> Result<PilotPoint> {
        PilotPoint::from_logs(self.log_x1, self.log_x2, self.log_y1, self.log_y2)
    }
}

fn same_tokens(a: &SequenceTrace, b: &SequenceTrace) -> Result<()> {
    if a.tokens != b.tokens {
        return Err(Error::TraceMismatch(a.len(), b.len()));
    }
    Ok(())
}

pub fn reward_quad(t: &ExampleTraces) -> Result<RewardQuad> {
    same_tokens(&t.policy_chosen, &t.ref_chosen)?;
    same_tokens(&t.policy_rejected, &t.ref_rejected)?;
    let log_x1 = t.policy_chosen.total_logprob - t.ref_chosen.total_logprob;
    let log_x2 = t.policy_rejected.total_logprob - t.ref_rejected.total_logprob;
    let (sw, lw) = t.span.chosen();
    let (sl, ll) = t.span.rejected();
    let log_y1 = pilot_trace(&t.policy_chosen, &t.ref_chosen, sw, lw)?;
    let log_y2 = pilot_trace(&t.policy_rejected, &t.ref_rejected, sl, ll)?;
    Ok(RewardQuad::from_logs(log_x1, log_x2, log_y1, log_y2))
}

/// Per-example log-likelihood being maximised: `log σ(Δ)` for DPO and the
/// two-term pilot objective for SGDPO (before the `−1/2` prefactor).
pub fn example_objective(method: Method, q: &RewardQuad, beta: Beta) -> f64 {
    let b = beta.value();
    match method {
        Method::Dpo => log_sigmoid_unchecked(b * (q.log_x1 - q.log_x2)),
        Method::Sgdpo => {
            log_sigmoid_unchecked(b * (q.log_x1 - q.log_y2))
                + log_sigmoid_unchecked(b * (q.log_y1 - q.log_x2))
        }
    }
}

/// Batch loss evaluated from reward quads, without a graph.
pub fn loss_value(method: Method, quads: &[RewardQuad], beta: Beta) -> f64 {
    let terms: Vec<f64> = quads
        .iter()
        .map(|q| example_objective(method, q, beta))
        .collect();
    let scale = match method {
        Method::Dpo => 1.0,
        Method::Sgdpo => 0.5,
    };
    -scale * ordered_sum(&terms) / quads.len() as f64
}

/// Graph inputs of one example: per-token policy log-probabilities as
/// vector nodes, and the frozen reference traces.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a> {
    pub policy_chosen: Var,
    pub policy_rejected: Var,
    pub ref_chosen: &'a SequenceTrace,
    pub ref_rejected: &'a SequenceTrace,
    pub span: SpanSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleRewards {
    pub chosen_reward: f64,
    pub rejected_reward: f64,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: Var,
    pub rewards: Vec<ExampleRewards>,
}

impl LossOutput {
    pub fn value(&self, g: &Graph) -> f64 {
        g.value(self.loss).item().unwrap_or(f64::NAN)
    }

    pub fn mean_rewards(&self) -> ExampleRewards {
        let n = self.rewards.len() as f64;
        let pick = |f: fn(&ExampleRewards) -> f64| {
            ordered_sum(&self.rewards.iter().map(f).collect::<Vec<_>>()) / n
        };
        ExampleRewards {
            chosen_reward: pick(|r| r.chosen_reward),
            rejected_reward: pick(|r| r.rejected_reward),
            margin: pick(|r| r.margin),
        }
    }
}

struct LogRatios {
    log_x1: Var,
    log_x2: Var,
}

fn log_ratios(g: &mut Graph, index: usize, ex: &LossInput<'_>) -> Result<LogRatios> {
    let sc = g.sum(ex.policy_chosen)?;
    let sr = g.sum(ex.policy_rejected)?;
    let rc = g.scalar(-ex.ref_chosen.total_logprob);
    let rr = g.scalar(-ex.ref_rejected.total_logprob);
    let log_x1 = g.add(sc, rc)?;
    let log_x2 = g.add(sr, rr)?;
    for v in [log_x1, log_x2] {
        if !g.value(v).all_finite() {
            return Err(Error::NonFinite { index });
        }
    }
    Ok(LogRatios { log_x1, log_x2 })
}

fn rewards(g: &Graph, beta: f64, lr: &LogRatios) -> ExampleRewards {
    let x1 = g.value(lr.log_x1).data()[0];
    let x2 = g.value(lr.log_x2).data()[0];
    ExampleRewards {
        chosen_reward: beta * x1,
        rejected_reward: beta * x2,
        margin: beta * (x1 - x2),
    }
}

/// Left-to-right sum of scalar nodes.
fn sum_nodes(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// `−mean log σ(β(log X1 − log X2))`.
pub fn dpo_loss(g: &mut Graph, batch: &[LossInput<'_>], beta: Beta) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let b = beta.value();
    let mut terms = Vec::with_capacity(batch.len());
    let mut out = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        let lr = log_ratios(g, i, ex)?;
        let diff = g.sub(lr.log_x1, lr.log_x2)?;
        let margin = g.scale(diff, b)?;
        terms.push(g.log_sigmoid(margin)?);
        out.push(rewards(g, b, &lr));
    }
    let total = sum_nodes(g, &terms)?;
    let loss = g.scale(total, -1.0 / batch.len() as f64)?;
    Ok(LossOutput { loss, rewards: out })
}

/// `−½ mean [log σ(β log X1 − β log Ŷ2) + log σ(β log Ŷ1 − β log X2)]`,
/// where the pilot ratios `Ŷ` are window sums of the current policy's
/// log-probabilities behind a stop-gradient.
pub fn sgdpo_loss(
    g: &mut Graph,
    batch: &[LossInput<'_>],
    beta: Beta,
    pilot: PilotSource,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let PilotSource::CurrentPolicy = pilot;
    let b = beta.value();
    let mut terms = Vec::with_capacity(batch.len());
    let mut out = Vec::with_capacity(batch.len());
    for (i, ex) in batch.iter().enumerate() {
        let lr = log_ratios(g, i, ex)?;
        let y1 = pilot_node(g, ex.policy_chosen, ex.ref_chosen, ex.span.chosen())?;
        let y2 = pilot_node(g, ex.policy_rejected, ex.ref_rejected, ex.span.rejected())?;

        let d1 = g.sub(lr.log_x1, y2)?;
        let m1 = g.scale(d1, b)?;
        let t1 = g.log_sigmoid(m1)?;
        let d2 = g.sub(y1, lr.log_x2)?;
        let m2 = g.scale(d2, b)?;
        let t2 = g.log_sigmoid(m2)?;
        terms.push(g.add(t1, t2)?);
        out.push(rewards(g, b, &lr));
    }
    let total = sum_nodes(g, &terms)?;
    let loss = g.scale(total, -0.5 / batch.len() as f64)?;
    Ok(LossOutput { loss, rewards: out })
}

fn pilot_node(
    g: &mut Graph,
    policy: Var,
    reference: &SequenceTrace,
    (start, len): (usize, usize),
) -> Result<Var> {
    let n = g.value(policy).numel();
    if n != reference.len() {
        return Err(Error::TraceMismatch(n, reference.len()));
    }
    if len == 0 || start + len > n {
        return Err(Error::SpanOutOfRange {
            start,
            len,
            seq_len: n,
        });
    }
    let s = g.sum_range(policy, start, len)?;
    let r = g.scalar(-ordered_sum(
        &reference.per_token_logprob[start..start + len],
    ));
    let ratio = g.add(s, r)?;
    g.stop_gradient(ratio)
}

/// Dispatch on [`Method`].
pub fn preference_loss(
    g: &mut Graph,
    method: Method,
    batch: &[LossInput<'_>],
    beta: Beta,
) -> Result<LossOutput> {
    match method {
        Method::Dpo => dpo_loss(g, batch, beta),
        Method::Sgdpo => sgdpo_loss(g, batch, beta, PilotSource::CurrentPolicy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::subsequence::{build_spans, SpanMode};
    use alloc::vec;

    const LN2: f64 = core::f64::consts::LN_2;

    fn trace(v: &[f64]) -> SequenceTrace {
        SequenceTrace::new((0..v.len() as u32).collect(), v.to_vec()).unwrap()
    }

    #[test]
    fn bt_probability() {
        assert_eq!(bt_preference_prob(0.3, 0.3), 0.5);
        for c in [-4.0, 0.0, 2.5, 1024.0] {
            assert_eq!(
                bt_preference_prob(0.75 + c, 0.25 + c),
                bt_preference_prob(0.75, 0.25)
            );
        }
        assert_eq!(bt_preference_prob(1000.0, 0.0), 1.0);
        assert!(bt_preference_prob(0.0, 1000.0) >= 0.0);
    }

    #[test]
    fn equal_policy_and_reference_gives_ln2() {
        let c = trace(&[-0.5, -1.5, -0.2]);
        let r = trace(&[-2.0, -0.1]);
        let span = build_spans(3, 2, 0.6, 0.6, SpanMode::DifferentIndex, 5).unwrap();
        for method in [Method::Dpo, Method::Sgdpo] {
            let mut g = Graph::new();
            let pc = g.leaf(Tensor::vector(c.per_token_logprob.clone()));
            let pr = g.leaf(Tensor::vector(r.per_token_logprob.clone()));
            let input = LossInput {
                policy_chosen: pc,
                policy_rejected: pr,
                ref_chosen: &c,
                ref_rejected: &r,
                span,
            };
            let out = preference_loss(&mut g, method, &[input, input], Beta::DEFAULT).unwrap();
            assert!((out.value(&g) - LN2).abs() < 1e-15);
            assert_eq!(out.rewards[0].margin, 0.0);
        }
    }

    #[test]
    fn duplicating_batch_keeps_loss() {
        let rc = trace(&[-0.5, -1.5, -0.2]);
        let rr = trace(&[-2.0, -0.1, -0.3]);
        let span = build_spans(3, 3, 0.7, 0.7, SpanMode::SameIndex, 1).unwrap();
        let run = |copies: usize| {
            let mut g = Graph::new();
            let pc = g.leaf(Tensor::vector(vec![-0.4, -1.0, -0.3]));
            let pr = g.leaf(Tensor::vector(vec![-2.5, -0.4, -0.3]));
            let input = LossInput {
                policy_chosen: pc,
                policy_rejected: pr,
                ref_chosen: &rc,
                ref_rejected: &rr,
                span,
            };
            let batch = vec![input; copies];
            let d = dpo_loss(&mut g, &batch, Beta::DEFAULT).unwrap().value(&g);
            let s = sgdpo_loss(&mut g, &batch, Beta::DEFAULT, PilotSource::CurrentPolicy)
                .unwrap()
                .value(&g);
            (d, s)
        };
        let (d1, s1) = run(1);
        let (d2, s2) = run(2);
        assert!((d1 - d2).abs() < 1e-15);
        assert!((s1 - s2).abs() < 1e-15);
    }

    #[test]
    fn reward_quad_identities() {
        let pc = trace(&[-0.3, -0.2, -1.0, -0.4]);
        let rc = trace(&[-0.5, -0.6, -0.9, -0.4]);
        let pr = trace(&[-2.0, -1.5, -1.1]);
        let rr = trace(&[-1.0, -1.0, -1.0]);
        let span = build_spans(4, 3, 0.7, 0.7, SpanMode::DifferentIndex, 3).unwrap();
        let ex = ExampleTraces {
            policy_chosen: pc.clone(),
            policy_rejected: pr.clone(),
            ref_chosen: rc.clone(),
            ref_rejected: rr.clone(),
            span,
        };
        let q = reward_quad(&ex).unwrap();
        assert!((q.log_x1 - (q.log_p1 + q.log_y1)).abs() < 1e-12);
        assert!((q.log_x2 - (q.log_p2 + q.log_y2)).abs() < 1e-12);
        assert!((q.log_z - (q.log_y1 - q.log_y2)).abs() < 1e-12);

        let same = ExampleTraces {
            policy_chosen: rc.clone(),
            policy_rejected: rr.clone(),
            ..ex.clone()
        };
        let z = reward_quad(&same).unwrap();
        assert_eq!(
            (z.log_x1, z.log_x2, z.log_y1, z.log_y2),
            (0.0, 0.0, 0.0, 0.0)
        );

        let full = ExampleTraces {
            span: build_spans(4, 4, 1.0, 1.0, SpanMode::SameIndex, 0).unwrap(),
            policy_rejected: trace(&[-2.0, -1.5, -1.1, -0.1]),
            ref_rejected: trace(&[-1.0, -1.0, -1.0, -0.2]),
            ..ex.clone()
        };
        let f = reward_quad(&full).unwrap();
        assert_eq!((f.log_p1, f.log_p2), (0.0, 0.0));

        let bad = ExampleTraces {
            ref_chosen: trace(&[-0.1]),
            ..ex
        };
        assert!(reward_quad(&bad).is_err());
    }

    #[test]
    fn pilot_window_carries_no_gradient() {
        // log X1 gradient only: every chosen token gets the same adjoint
        let rc = trace(&[-0.5, -0.5, -0.5, -0.5]);
        let rr = trace(&[-0.5, -0.5, -0.5, -0.5]);
        let span = build_spans(4, 4, 0.5, 0.5, SpanMode::DifferentIndex, 11).unwrap();
        let mut g = Graph::new();
        let pc = g.leaf(Tensor::vector(vec![-0.1, -0.2, -0.3, -0.4]));
        let pr = g.leaf(Tensor::vector(vec![-1.1, -1.2, -1.3, -1.4]));
        let input = LossInput {
            policy_chosen: pc,
            policy_rejected: pr,
            ref_chosen: &rc,
            ref_rejected: &rr,
            span,
        };
        let out = sgdpo_loss(&mut g, &[input], Beta::DEFAULT, PilotSource::CurrentPolicy).unwrap();
        let grads = g.backward(out.loss).unwrap();
        let gc = grads.wrt(pc);
        assert!(gc.data().iter().all(|&v| v == gc.data()[0]));
        let gr = grads.wrt(pr);
        assert!(gr.data().iter().all(|&v| v == gr.data()[0]));
        assert!(gc.data()[0] < 0.0 && gr.data()[0] > 0.0);
    }

    #[test]
    fn non_finite_trace_names_example() {
        let ok = trace(&[-0.5]);
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![-0.1]));
        let nan = g.leaf(Tensor::vector(vec![f64::NAN]));
        let span = build_spans(1, 1, 1.0, 1.0, SpanMode::SameIndex, 0).unwrap();
        let good = LossInput {
            policy_chosen: a,
            policy_rejected: a,
            ref_chosen: &ok,
            ref_rejected: &ok,
            span,
        };
        let bad = LossInput {
            policy_rejected: nan,
            ..good
        };
        assert_eq!(
            dpo_loss(&mut g, &[good, bad], Beta::DEFAULT).unwrap_err(),
            Error::NonFinite { index: 1 }
        );
        assert!(matches!(
            dpo_loss(&mut g, &[], Beta::DEFAULT),
            Err(Error::Empty(_))
        ));
    }
}
