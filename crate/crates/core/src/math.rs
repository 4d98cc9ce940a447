//! Scalar building blocks and the closed-form gradient algebra of the DPO
//! and pilot objectives.
//!
//! Every ratio (chosen reward `X1`, rejected reward `X2`, pilot ratios `Y1`,
//! `Y2`) is stored as its natural logarithm. Sequence-level ratios are
//! products of hundreds of per-token ratios and routinely leave the range of
//! an `f64` in linear space; their logarithms never do. The positive-real
//! constructors convert once at the boundary.
//!
//! Throughout, `l` denotes the per-example log-likelihood being *maximised*
//! (`l_dpo = log σ(Δ)`), so `∂l/∂X1 > 0` and `∂l/∂X2 < 0`.

use alloc::format;

use crate::error::{Error, Result};

/// Scaling factor applied to every log-ratio reward.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Beta(f64);

impl Beta {
    pub const DEFAULT: Beta = Beta(0.1);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Beta(value))
        } else {
            Err(Error::domain(format!(
                "beta must be a positive real, got {value}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Beta {
    fn default() -> Self {
        Beta::DEFAULT
    }
}

fn checked_ln(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(libm::log(v))
    } else {
        Err(Error::domain(format!(
            "{name} must be a positive real, got {v}"
        )))
    }
}

fn checked_log(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::domain(format!("log {name} must be finite, got {v}")))
    }
}

/// A chosen/rejected reward pair `(X1, X2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioPoint {
    log_x1: f64,
    log_x2: f64,
}

impl RatioPoint {
    pub fn new(x1: f64, x2: f64) -> Result<Self> {
        Ok(Self {
            log_x1: checked_ln("x1", x1)?,
            log_x2: checked_ln("x2", x2)?,
        })
    }

    pub fn from_logs(log_x1: f64, log_x2: f64) -> Result<Self> {
        Ok(Self {
            log_x1: checked_log("x1", log_x1)?,
            log_x2: checked_log("x2", log_x2)?,
        })
    }

    pub fn log_x1(&self) -> f64 {
        self.log_x1
    }
    pub fn log_x2(&self) -> f64 {
        self.log_x2
    }
    pub fn x1(&self) -> f64 {
        libm::exp(self.log_x1)
    }
    pub fn x2(&self) -> f64 {
        libm::exp(self.log_x2)
    }
}

/// Full-sequence rewards together with the pilot sub-sequence ratios.
///
/// `p1 = X1/Y1` and `p2 = X2/Y2` are the products of the per-token ratios
/// outside the pilot spans; `z = Y1/Y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotPoint {
    log_x1: f64,
    log_x2: f64,
    log_y1: f64,
    log_y2: f64,
}

impl PilotPoint {
    pub fn new(x1: f64, x2: f64, y1: f64, y2: f64) -> Result<Self> {
        Ok(Self {
            log_x1: checked_ln("x1", x1)?,
            log_x2: checked_ln("x2", x2)?,
            log_y1: checked_ln("y1", y1)?,
            log_y2: checked_ln("y2", y2)?,
        })
    }

    pub fn from_logs(log_x1: f64, log_x2: f64, log_y1: f64, log_y2: f64) -> Result<Self> {
        Ok(Self {
            log_x1: checked_log("x1", log_x1)?,
            log_x2: checked_log("x2", log_x2)?,
            log_y1: checked_log("y1", log_y1)?,
            log_y2: checked_log("y2", log_y2)?,
        })
    }

    pub fn ratios(&self) -> RatioPoint {
        RatioPoint {
            log_x1: self.log_x1,
            log_x2: self.log_x2,
        }
    }

    pub fn log_x1(&self) -> f64 {
        self.log_x1
    }
    pub fn log_x2(&self) -> f64 {
        self.log_x2
    }
    pub fn log_y1(&self) -> f64 {
        self.log_y1
    }
    pub fn log_y2(&self) -> f64 {
        self.log_y2
    }
    pub fn log_p1(&self) -> f64 {
        self.log_x1 - self.log_y1
    }
    pub fn log_p2(&self) -> f64 {
        self.log_x2 - self.log_y2
    }
    pub fn log_z(&self) -> f64 {
        self.log_y1 - self.log_y2
    }

    pub fn x1(&self) -> f64 {
        libm::exp(self.log_x1)
    }
    pub fn x2(&self) -> f64 {
        libm::exp(self.log_x2)
    }
    pub fn y1(&self) -> f64 {
        libm::exp(self.log_y1)
    }
    pub fn y2(&self) -> f64 {
        libm::exp(self.log_y2)
    }
    pub fn p1(&self) -> f64 {
        libm::exp(self.log_p1())
    }
    pub fn p2(&self) -> f64 {
        libm::exp(self.log_p2())
    }
    pub fn z(&self) -> f64 {
        libm::exp(self.log_z())
    }
}

/// `log σ(x)` without overflow. NaN propagates; use [`log_sigmoid`] for
/// the checked variant.
#[inline]
pub fn log_sigmoid_unchecked(x: f64) -> f64 {
    if x >= 0.0 {
        -libm::log1p(libm::exp(-x))
    } else {
        x - libm::log1p(libm::exp(x))
    }
}

/// `σ(x)` evaluated on the branch that never overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("log_sigmoid of non-finite {x}")));
    }
    Ok(log_sigmoid_unchecked(x))
}

/// `log(e^a + e^b)`.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

/// `x^β` as `exp(β ln x)`.
#[inline]
pub fn pow_beta(x: f64, beta: Beta) -> f64 {
    libm::exp(beta.0 * libm::log(x))
}

// `β/x · σ(β ln y − β ln x)` is `β y^β / (x (x^β + y^β))` after dividing
// numerator and denominator by `x^β`.
#[inline]
fn weighted_sigmoid(beta: Beta, log_x: f64, log_other: f64) -> f64 {
    beta.0 * libm::exp(-log_x) * sigmoid(beta.0 * (log_other - log_x))
}

/// `∂l_dpo/∂X1 = β X2^β / (X1 (X1^β + X2^β))`.
pub fn dpo_partial_x1(p: RatioPoint, beta: Beta) -> f64 {
    weighted_sigmoid(beta, p.log_x1, p.log_x2)
}

/// `∂l_dpo/∂X2 = −β X2^(β−1) / (X1^β + X2^β)`.
pub fn dpo_partial_x2(p: RatioPoint, beta: Beta) -> f64 {
    -beta.0 * libm::exp(-p.log_x2) * sigmoid(beta.0 * (p.log_x2 - p.log_x1))
}

/// `∂l_pilot/∂X1 = β Y2^β / (X1 (X1^β + Y2^β))`: the DPO chosen partial with
/// `X2` replaced by `Y2`.
pub fn pilot_partial_x1(x1: f64, y2: f64, beta: Beta) -> Result<f64> {
    let p = RatioPoint::new(x1, y2)?;
    Ok(dpo_partial_x1(p, beta))
}

/// `∂l_pilot/∂X2 = −β X2^(β−1) / (Y1^β + X2^β)`.
pub fn pilot_partial_x2(x2: f64, y1: f64, beta: Beta) -> Result<f64> {
    let p = RatioPoint::new(y1, x2)?;
    Ok(dpo_partial_x2(p, beta))
}

/// Log-space form of [`pilot_partial_x1`].
pub fn pilot_partial_x1_log(log_x1: f64, log_y2: f64, beta: Beta) -> f64 {
    weighted_sigmoid(beta, log_x1, log_y2)
}

/// Log-space form of [`pilot_partial_x2`].
pub fn pilot_partial_x2_log(log_x2: f64, log_y1: f64, beta: Beta) -> f64 {
    -beta.0 * libm::exp(-log_x2) * sigmoid(beta.0 * (log_x2 - log_y1))
}

/// `ln f(z)` with `f(z) = (1/p2^β) (z^β + p2^β) / (p1^β z^β + 1)`.
pub fn log_f_z(log_z: f64, log_p1: f64, log_p2: f64, beta: Beta) -> f64 {
    let b = beta.0;
    let bz = b * log_z;
    let bp2 = b * log_p2;
    let bp1 = b * log_p1;
    -bp2 + log_add_exp(bz, bp2) - log_add_exp(bp1 + bz, 0.0)
}

pub fn f_z(z: f64, p1: f64, p2: f64, beta: Beta) -> Result<f64> {
    let lz = checked_ln("z", z)?;
    let lp1 = checked_ln("p1", p1)?;
    let lp2 = checked_ln("p2", p2)?;
    Ok(libm::exp(log_f_z(lz, lp1, lp2, beta)))
}

/// `|∂l_dpo/∂X1 / ∂l_dpo/∂X2| = X2/X1`.
pub fn dpo_grad_ratio(p: RatioPoint) -> f64 {
    libm::exp(p.log_x2 - p.log_x1)
}

/// `|∂l_pilot/∂X1 / ∂l_pilot/∂X2| = (X2/X1) f(z)`.
pub fn pilot_grad_ratio(q: PilotPoint, beta: Beta) -> f64 {
    libm::exp(q.log_x2 - q.log_x1 + log_f_z(q.log_z(), q.log_p1(), q.log_p2(), beta))
}

/// `log(X1^β / (X1^β + X2^β)) = log σ(β(ln X1 − ln X2))`.
pub fn l_dpo_surrogate(p: RatioPoint, beta: Beta) -> f64 {
    log_sigmoid_unchecked(beta.0 * (p.log_x1 - p.log_x2))
}

/// `log(X1^β/(X1^β + Y2^β)) + log(Y1^β/(Y1^β + X2^β))`.
pub fn l_pilot_surrogate(q: PilotPoint, beta: Beta) -> f64 {
    log_sigmoid_unchecked(beta.0 * (q.log_x1 - q.log_y2))
        + log_sigmoid_unchecked(beta.0 * (q.log_y1 - q.log_x2))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = core::f64::consts::LN_2;

    fn b(v: f64) -> Beta {
        Beta::new(v).unwrap()
    }

    fn rp(x1: f64, x2: f64) -> RatioPoint {
        RatioPoint::new(x1, x2).unwrap()
    }

    fn rel(a: f64, e: f64) -> f64 {
        (a - e).abs() / e.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn beta_rejects_nonpositive() {
        assert!(Beta::new(0.0).is_err());
        assert!(Beta::new(-0.1).is_err());
        assert!(Beta::new(f64::NAN).is_err());
        assert_eq!(Beta::default().value(), 0.1);
    }

    #[test]
    fn ratio_point_rejects_nonpositive() {
        assert!(RatioPoint::new(0.0, 1.0).is_err());
        assert!(RatioPoint::new(1.0, -2.0).is_err());
        assert!(PilotPoint::new(1.0, 1.0, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn log_sigmoid_values() {
        assert!((log_sigmoid(0.0).unwrap() + LN2).abs() < 1e-15);
        for x in [-50.0, -1.0, 0.0, 1.0, 50.0] {
            let d = log_sigmoid(x).unwrap() - log_sigmoid(-x).unwrap();
            assert!((d - x).abs() < 1e-10, "x={x}: {d}");
        }
        let v = log_sigmoid(-1000.0).unwrap();
        assert!(v.is_finite());
        assert!((v + 1000.0).abs() < 1e-9);
        assert_eq!(log_sigmoid(1e4).unwrap(), -0.0);
        assert!(log_sigmoid(-1e4).unwrap().is_finite());
        assert!(log_sigmoid(f64::NAN).is_err());
        assert!(log_sigmoid(f64::INFINITY).is_err());
    }

    #[test]
    fn dpo_partials_at_symmetric_points() {
        assert!(rel(dpo_partial_x1(rp(1.0, 1.0), b(0.1)), 0.05) < 1e-15);
        assert!(rel(dpo_partial_x1(rp(2.0, 2.0), b(0.1)), 0.025) < 1e-15);
        assert!(rel(dpo_partial_x2(rp(1.0, 1.0), b(0.1)), -0.05) < 1e-15);
        assert!(rel(dpo_partial_x2(rp(2.0, 2.0), b(0.1)), -0.025) < 1e-15);
    }

    #[test]
    fn dpo_partials_match_power_form() {
        for &(x1, x2, be) in &[(1.0, 0.5, 0.1), (0.3, 1.4, 0.5), (0.05, 0.05, 0.05)] {
            let bt = b(be);
            let pw = |x: f64| libm::pow(x, be);
            let e1 = be * pw(x2) / (x1 * (pw(x1) + pw(x2)));
            let e2 = -be * libm::pow(x2, be - 1.0) / (pw(x1) + pw(x2));
            assert!(rel(dpo_partial_x1(rp(x1, x2), bt), e1) < 1e-13);
            assert!(rel(dpo_partial_x2(rp(x1, x2), bt), e2) < 1e-13);
        }
    }

    #[test]
    fn pilot_partials_reduce_to_dpo() {
        let be = b(0.1);
        assert_eq!(
            pilot_partial_x1(1.0, 0.5, be).unwrap(),
            dpo_partial_x1(rp(1.0, 0.5), be)
        );
        assert_eq!(
            pilot_partial_x2(0.5, 0.5, be).unwrap(),
            dpo_partial_x2(rp(0.5, 0.5), be)
        );
        assert!(rel(pilot_partial_x1(1.0, 1.0, be).unwrap(), 0.05) < 1e-15);
        assert!(rel(pilot_partial_x2(1.0, 1.0, be).unwrap(), -0.05) < 1e-15);
    }

    #[test]
    fn f_z_is_one_on_unit_residuals() {
        for z in [0.01, 0.5, 1.0, 3.0, 100.0] {
            for be in [0.05, 0.1, 0.5, 2.0] {
                assert!((f_z(z, 1.0, 1.0, b(be)).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f_z_matches_high_precision_value() {
        // 50-digit evaluation of (1/p2^β)(z^β+p2^β)/(p1^β z^β+1) at
        // z=1, p1=p2=0.5, β=0.1.
        let expected = 1.0717734625362932;
        let got = f_z(1.0, 0.5, 0.5, b(0.1)).unwrap();
        assert!(rel(got, expected) < 1e-14, "{got}");
        assert!(got > 1.0);
    }

    #[test]
    fn grad_ratios() {
        assert!(rel(dpo_grad_ratio(rp(2.0, 0.5)), 0.25) < 1e-15);
        assert_eq!(dpo_grad_ratio(rp(0.7, 0.7)), 1.0);
        for be in [0.05, 0.1, 0.5] {
            let p = rp(1.0, 0.3);
            let direct = (dpo_partial_x1(p, b(be)) / dpo_partial_x2(p, b(be))).abs();
            assert!(rel(dpo_grad_ratio(p), direct) < 1e-10);
        }
        let ones = PilotPoint::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((pilot_grad_ratio(ones, b(0.1)) - 1.0).abs() < 1e-15);

        let q = PilotPoint::new(1.0, 0.5, 1.2, 0.8).unwrap();
        let be = b(0.1);
        let direct = (pilot_partial_x1(1.0, 0.8, be).unwrap()
            / pilot_partial_x2(0.5, 1.2, be).unwrap())
        .abs();
        assert!(rel(pilot_grad_ratio(q, be), direct) < 1e-10);
    }

    #[test]
    fn surrogates() {
        for be in [0.05, 0.1, 0.5] {
            assert!((l_dpo_surrogate(rp(1.0, 1.0), b(be)) + LN2).abs() < 1e-15);
            let ones = PilotPoint::new(1.0, 1.0, 1.0, 1.0).unwrap();
            assert!((l_pilot_surrogate(ones, b(be)) + 2.0 * LN2).abs() < 1e-15);
        }
        let be = b(0.1);
        let p = rp(1.0, 0.5);
        let pw = |x: f64| libm::pow(x, 0.1);
        let direct = libm::log(pw(1.0) / (pw(1.0) + pw(0.5)));
        assert!((l_dpo_surrogate(p, be) - direct).abs() < 1e-12);
        let big = l_dpo_surrogate(rp(1e30, 1.0), be);
        assert!(big < 0.0 && big > -1e-2);

        let q = PilotPoint::new(0.7, 0.4, 0.7, 0.4).unwrap();
        let two = 2.0 * l_dpo_surrogate(rp(0.7, 0.4), be);
        assert!((l_pilot_surrogate(q, be) - two).abs() < 1e-15);
    }

    #[test]
    fn pilot_point_identities() {
        let q = PilotPoint::new(0.3, 1.7, 0.9, 2.5).unwrap();
        assert!(rel(q.p1() * q.y1(), q.x1()) < 1e-12);
        assert!(rel(q.p2() * q.y2(), q.x2()) < 1e-12);
        assert!(rel(q.z(), q.y1() / q.y2()) < 1e-12);
    }
}
