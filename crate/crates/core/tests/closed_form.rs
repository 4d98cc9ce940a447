//! Closed-form partials and ratio functions against independent
//! evaluations: central differences of the surrogate objectives, direct
//! ratios of partials and frozen high-precision values.

use sgdpo_core::math::*;

const BETAS: [f64; 3] = [0.05, 0.1, 0.5];

fn grid() -> Vec<f64> {
    (1..=30).map(|k| 0.05 * k as f64).collect()
}

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn dpo_partials_match_finite_differences() {
    let mut worst = 0.0f64;
    for &b in &BETAS {
        let beta = Beta::new(b).unwrap();
        for &x1 in &grid() {
            for &x2 in &grid() {
                let p = RatioPoint::new(x1, x2).unwrap();
                let n1 = central(
                    |t| l_dpo_surrogate(RatioPoint::new(t, x2).unwrap(), beta),
                    x1,
                );
                let n2 = central(
                    |t| l_dpo_surrogate(RatioPoint::new(x1, t).unwrap(), beta),
                    x2,
                );
                worst = worst.max(rel(n1, dpo_partial_x1(p, beta)));
                worst = worst.max(rel(n2, dpo_partial_x2(p, beta)));
            }
        }
    }
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn pilot_partials_match_finite_differences() {
    // pilot ratios on a coarser 10-point axis keep the sweep fast
    let ys: Vec<f64> = (0..10).map(|k| 0.05 + 0.16 * k as f64).collect();
    let mut worst = 0.0f64;
    for &b in &BETAS {
        let beta = Beta::new(b).unwrap();
        for &x1 in &grid() {
            for &x2 in &grid() {
                for &y1 in &ys {
                    for &y2 in &ys {
                        let l = |a: f64, c: f64| {
                            l_pilot_surrogate(PilotPoint::new(a, c, y1, y2).unwrap(), beta)
                        };
                        let n1 = central(|t| l(t, x2), x1);
                        let n2 = central(|t| l(x1, t), x2);
                        worst = worst.max(rel(n1, pilot_partial_x1(x1, y2, beta).unwrap()));
                        worst = worst.max(rel(n2, pilot_partial_x2(x2, y1, beta).unwrap()));
                    }
                }
            }
        }
    }
    assert!(worst < 1e-6, "{worst:e}");
}

#[test]
fn spot_values() {
    let b = Beta::DEFAULT;
    let p = RatioPoint::new(1.0, 0.5).unwrap();
    let n1 = central(
        |t| l_dpo_surrogate(RatioPoint::new(t, 0.5).unwrap(), b),
        1.0,
    );
    let n2 = central(
        |t| l_dpo_surrogate(RatioPoint::new(1.0, t).unwrap(), b),
        0.5,
    );
    assert!(rel(n1, dpo_partial_x1(p, b)) < 1e-6);
    assert!(rel(n2, dpo_partial_x2(p, b)) < 1e-6);
    let direct = log_sigmoid(0.1 * (1.0f64.ln() - 0.5f64.ln())).unwrap();
    assert!((l_dpo_surrogate(p, b) - direct).abs() < 1e-12);
    // mpmath, 40 digits: f(1; 0.5, 0.5, 0.1)
    assert!((f_z(1.0, 0.5, 0.5, b).unwrap() - 1.071_773_462_536_293_2).abs() < 1e-14);
}

#[test]
fn ratio_identities() {
    let mut worst = 0.0f64;
    for &b in &BETAS {
        let beta = Beta::new(b).unwrap();
        for &x1 in &grid() {
            for &x2 in &grid() {
                let p = RatioPoint::new(x1, x2).unwrap();
                let r = (dpo_partial_x1(p, beta) / dpo_partial_x2(p, beta)).abs();
                worst = worst.max(rel(r, dpo_grad_ratio(p)));
                for (y1, y2) in [(0.3, 1.2), (1.0, 1.0), (1.4, 0.15)] {
                    let q = PilotPoint::new(x1, x2, y1, y2).unwrap();
                    let direct = (pilot_partial_x1(x1, y2, beta).unwrap()
                        / pilot_partial_x2(x2, y1, beta).unwrap())
                    .abs();
                    worst = worst.max(rel(direct, pilot_grad_ratio(q, beta)));
                }
            }
        }
    }
    assert!(worst < 1e-10, "{worst:e}");
}

#[test]
fn partial_monotone_in_pilot_ratio() {
    let b = Beta::DEFAULT;
    let sweep: Vec<f64> = (0..100).map(|k| 0.1 + 1.4 * k as f64 / 99.0).collect();
    for &x in &[0.2, 0.5, 1.0, 1.4] {
        let d1: Vec<f64> = sweep
            .iter()
            .map(|&y2| pilot_partial_x1(x, y2, b).unwrap())
            .collect();
        let d2: Vec<f64> = sweep
            .iter()
            .map(|&y1| pilot_partial_x2(x, y1, b).unwrap().abs())
            .collect();
        assert!(d1.windows(2).all(|w| w[1] > w[0]));
        assert!(d2.windows(2).all(|w| w[1] < w[0]));
    }
}

#[test]
fn f_z_monotone_by_regime() {
    let b = Beta::DEFAULT;
    let zs: Vec<f64> = (0..200)
        .map(|k| 0.1 * (100f64).powf(k as f64 / 199.0))
        .collect();
    for &(p1, p2) in &[(0.5, 0.5), (0.9, 0.3), (0.2, 1.5)] {
        let v: Vec<f64> = zs.iter().map(|&z| f_z(z, p1, p2, b).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]), "({p1},{p2})");
        assert!(v.iter().all(|&f| f > 1.0));
    }
    for &(p1, p2) in &[(2.0, 2.0), (1.1, 1.5)] {
        let v: Vec<f64> = zs.iter().map(|&z| f_z(z, p1, p2, b).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]), "({p1},{p2})");
    }
    for &z in &zs {
        assert!((f_z(z, 1.0, 1.0, b).unwrap() - 1.0).abs() < 1e-12);
    }
}
