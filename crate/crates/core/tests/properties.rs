use proptest::prelude::*;

use sgdpo_core::losses::{bt_preference_prob, RewardQuad};
use sgdpo_core::math::*;
use sgdpo_core::policy::{span_logprob, SequenceTrace};
use sgdpo_core::subsequence::{build_spans, SpanMode};

fn pos() -> impl Strategy<Value = f64> {
    (-4.0f64..4.0).prop_map(f64::exp)
}

fn beta() -> impl Strategy<Value = Beta> {
    (0.01f64..2.0).prop_map(|b| Beta::new(b).unwrap())
}

proptest! {
    #[test]
    fn log_sigmoid_identity_and_monotone(x in -700.0f64..700.0, d in 0.0f64..50.0) {
        let a = log_sigmoid(x).unwrap();
        prop_assert!(a <= 0.0);
        prop_assert!((a - log_sigmoid(-x).unwrap() - x).abs() <= 1e-10 * x.abs().max(1.0));
        prop_assert!(log_sigmoid(x + d).unwrap() >= a);
    }

    #[test]
    fn dpo_ratio_is_x2_over_x1(x1 in pos(), x2 in pos(), b in beta()) {
        let p = RatioPoint::new(x1, x2).unwrap();
        let d1 = dpo_partial_x1(p, b);
        let d2 = dpo_partial_x2(p, b);
        prop_assert!(d1 > 0.0 && d2 < 0.0);
        let r = dpo_grad_ratio(p);
        prop_assert!(((d1 / d2).abs() - r).abs() / r < 1e-10);
    }

    #[test]
    fn pilot_ratio_is_scaled_by_f(x1 in pos(), x2 in pos(), y1 in pos(), y2 in pos(), b in beta()) {
        let q = PilotPoint::new(x1, x2, y1, y2).unwrap();
        prop_assert!((q.p1() * q.y1() - x1).abs() / x1 < 1e-12);
        prop_assert!((q.p2() * q.y2() - x2).abs() / x2 < 1e-12);
        prop_assert!((q.z() - y1 / y2).abs() / (y1 / y2) < 1e-12);
        let direct = (pilot_partial_x1(x1, y2, b).unwrap() / pilot_partial_x2(x2, y1, b).unwrap()).abs();
        let r = pilot_grad_ratio(q, b);
        prop_assert!((direct - r).abs() / r < 1e-10);
        if q.p1() * q.p2() < 1.0 {
            prop_assert!(r > dpo_grad_ratio(q.ratios()));
        }
    }

    #[test]
    fn f_z_slope_sign(z in pos(), p1 in pos(), p2 in pos()) {
        let b = Beta::DEFAULT;
        let prod = p1 * p2;
        prop_assume!((prod.ln()).abs() > 1e-3);
        let step = z * 1e-3;
        let diff = f_z(z + step, p1, p2, b).unwrap() - f_z(z, p1, p2, b).unwrap();
        let want = 1.0 - prod.powf(0.1);
        prop_assert_eq!(diff > 0.0, want > 0.0, "diff {} want {}", diff, want);
        prop_assert_eq!(f_z(z, p1, p2, b).unwrap() > 1.0, prod < 1.0);
    }

    #[test]
    fn pilot_above_rejected_enlarges_chosen_partial(x1 in pos(), x2 in pos(), k in 1.0001f64..50.0, b in beta()) {
        let y2 = x2 * k;
        let p = RatioPoint::new(x1, x2).unwrap();
        prop_assert!(pilot_partial_x1(x1, y2, b).unwrap() > dpo_partial_x1(p, b));
    }

    #[test]
    fn substitution_identity(x1 in pos(), x2 in pos(), b in beta()) {
        let p = RatioPoint::new(x1, x2).unwrap();
        prop_assert_eq!(pilot_partial_x1(x1, x2, b).unwrap(), dpo_partial_x1(p, b));
        prop_assert_eq!(pilot_partial_x2(x2, x1, b).unwrap(), dpo_partial_x2(p, b));
        let q = PilotPoint::new(x1, x2, x1, x2).unwrap();
        prop_assert!((l_pilot_surrogate(q, b) - 2.0 * l_dpo_surrogate(p, b)).abs() < 1e-12);
    }

    #[test]
    fn bradley_terry_is_shift_invariant(rw in -50.0f64..50.0, rl in -50.0f64..50.0, c in -100.0f64..100.0) {
        let a = bt_preference_prob(rw, rl);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - bt_preference_prob(rw + c, rl + c)).abs() < 1e-12);
    }

    #[test]
    fn reward_quad_identities(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0, d in -50.0f64..50.0) {
        let q = RewardQuad::from_logs(a, b, c, d);
        prop_assert!((q.log_p1 + q.log_y1 - a).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert!((q.log_p2 + q.log_y2 - b).abs() <= 1e-12 * b.abs().max(1.0));
        prop_assert!((q.log_z - (c - d)).abs() <= 1e-12);
    }

    #[test]
    fn spans_fit_and_follow_lengths(
        lw in 1usize..60, ll in 1usize..60,
        r1 in 0.001f64..=1.0, r2 in 0.001f64..=1.0,
        same in any::<bool>(), seed in any::<u64>(),
    ) {
        let mode = if same { SpanMode::SameIndex } else { SpanMode::DifferentIndex };
        let s = build_spans(lw, ll, r1, r2, mode, seed).unwrap();
        let lc = lw.min(ll);
        prop_assert!(s.len_w >= 1 && s.len_l >= 1);
        prop_assert!(s.len_w <= lc && s.len_l <= lc);
        prop_assert_eq!(s.len_w, ((r1 * lc as f64 + 1e-9).floor() as usize).max(1));
        prop_assert!(s.start_w + s.len_w <= lw);
        prop_assert!(s.start_l + s.len_l <= ll);
        if same {
            prop_assert_eq!(s.start_w, s.start_l);
        }
    }

    #[test]
    fn span_plus_complement_is_total(lp in proptest::collection::vec(-5.0f64..0.0, 1..40), a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let n = lp.len();
        let start = a.index(n);
        let len = 1 + b.index(n - start);
        let t = SequenceTrace::new((0..n as u32).collect(), lp.clone()).unwrap();
        let span = span_logprob(&t, start, len).unwrap();
        let rest: f64 = lp[..start].iter().chain(&lp[start + len..]).sum();
        prop_assert!((t.total_logprob - span - rest).abs() < 1e-10);
    }
}
