//! The `(X1, X2)` reward-ratio dynamics of DPO and the pilot objective:
//! ascent fields, explicit-Euler trajectories and the `f(z)` and
//! partial-derivative landscapes.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{
    dpo_partial_x1, dpo_partial_x2, f_z, pilot_partial_x1, pilot_partial_x2, Beta, RatioPoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldMethod {
    Dpo,
    Pilot,
}

/// How the pilot ratios are fixed across a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PilotParams {
    /// Same `(Y1, Y2)` at every grid point.
    FixedY { y1: f64, y2: f64 },
    /// Same residuals `(p1, p2)`; `Y = X / p` at every grid point.
    FixedP { p1: f64, p2: f64 },
}

impl PilotParams {
    fn check(&self) -> Result<()> {
        let (a, b) = match *self {
            PilotParams::FixedY { y1, y2 } => (y1, y2),
            PilotParams::FixedP { p1, p2 } => (p1, p2),
        };
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Ok(())
        } else {
            Err(Error::config(
                "pilot parameters must be positive and finite",
            ))
        }
    }

    /// `(Y1, Y2)` at the point `(x1, x2)`.
    pub fn pilot_at(&self, x1: f64, x2: f64) -> (f64, f64) {
        match *self {
            PilotParams::FixedY { y1, y2 } => (y1, y2),
            PilotParams::FixedP { p1, p2 } => (x1 / p1, x2 / p2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
}

impl AxisRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn check(&self, name: &str) -> Result<()> {
        if self.lo > 0.0 && self.hi >= self.lo && self.hi.is_finite() {
            Ok(())
        } else {
            Err(Error::config(alloc::format!(
                "{name} range must satisfy 0 < lo <= hi, got [{}, {}]",
                self.lo,
                self.hi
            )))
        }
    }

    /// `n` evenly spaced points with exact endpoints.
    pub fn linspace(&self, n: usize) -> Vec<f64> {
        let last = n.saturating_sub(1).max(1) as f64;
        (0..n)
            .map(|k| match k {
                0 => self.lo,
                k if k + 1 == n => self.hi,
                k => (self.lo * (last - k as f64) + self.hi * k as f64) / last,
            })
            .collect()
    }
}

/// Sampling grid of a flow field. The default spacing of 0.025 puts a
/// node on `(1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldGrid {
    pub x1: AxisRange,
    pub x2: AxisRange,
    pub resolution: usize,
    pub truncation: f64,
}

impl Default for FieldGrid {
    fn default() -> Self {
        Self {
            x1: AxisRange::new(0.025, 1.5),
            x2: AxisRange::new(0.025, 1.5),
            resolution: 60,
            truncation: 1.5,
        }
    }
}

impl FieldGrid {
    pub fn validate(&self) -> Result<()> {
        self.x1.check("x1")?;
        self.x2.check("x2")?;
        if self.resolution < 2 {
            return Err(Error::config("grid resolution must be at least 2"));
        }
        if !(self.truncation > 0.0) {
            return Err(Error::config("truncation must be positive"));
        }
        Ok(())
    }
}

/// Ascent direction of the log-likelihood at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint {
    pub x1: f64,
    pub x2: f64,
    pub dx1: f64,
    pub dx2: f64,
    /// Whether `(dx1, dx2)` was rescaled to the truncation magnitude.
    pub truncated: bool,
}

/// `(∂l/∂X1, ∂l/∂X2)` without truncation.
pub fn flow(
    method: FieldMethod,
    beta: Beta,
    x1: f64,
    x2: f64,
    pilot: Option<&PilotParams>,
) -> Result<(f64, f64)> {
    match method {
        FieldMethod::Dpo => {
            let p = RatioPoint::new(x1, x2)?;
            Ok((dpo_partial_x1(p, beta), dpo_partial_x2(p, beta)))
        }
        FieldMethod::Pilot => {
            let pp = pilot.ok_or_else(|| Error::config("pilot field needs pilot parameters"))?;
            let (y1, y2) = pp.pilot_at(x1, x2);
            Ok((
                pilot_partial_x1(x1, y2, beta)?,
                pilot_partial_x2(x2, y1, beta)?,
            ))
        }
    }
}

/// Scale `(a, b)` down to magnitude `limit` if it is longer.
pub fn truncate(a: f64, b: f64, limit: f64) -> (f64, f64, bool) {
    let m = libm::hypot(a, b);
    if m > limit {
        let s = limit / m;
        (a * s, b * s, true)
    } else {
        (a, b, false)
    }
}

/// Field over the grid in row-major order: `x2` is the row, `x1` the
/// column.
pub fn field_grid(
    method: FieldMethod,
    beta: Beta,
    grid: &FieldGrid,
    pilot: Option<&PilotParams>,
) -> Result<Vec<FieldPoint>> {
    grid.validate()?;
    if method == FieldMethod::Pilot {
        pilot
            .ok_or_else(|| Error::config("pilot field needs pilot parameters"))?
            .check()?;
    }
    let xs1 = grid.x1.linspace(grid.resolution);
    let xs2 = grid.x2.linspace(grid.resolution);
    let mut out = Vec::with_capacity(xs1.len() * xs2.len());
    for &x2 in &xs2 {
        for &x1 in &xs1 {
            let (d1, d2) = flow(method, beta, x1, x2, pilot)?;
            let (dx1, dx2, truncated) = truncate(d1, d2, grid.truncation);
            out.push(FieldPoint {
                x1,
                x2,
                dx1,
                dx2,
                truncated,
            });
        }
    }
    Ok(out)
}

const MAX_HALVINGS: u32 = 60;

/// Explicit-Euler ascent path of length `n_steps + 1`. A step that would
/// leave the positive quadrant is retried at half the size.
pub fn integrate_trajectory<F>(
    method: FieldMethod,
    beta: Beta,
    start: RatioPoint,
    step: f64,
    n_steps: usize,
    mut pilot_rule: Option<F>,
) -> Result<Vec<RatioPoint>>
where
    F: FnMut(f64, f64) -> (f64, f64),
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::config("step must be positive and finite"));
    }
    if method == FieldMethod::Pilot && pilot_rule.is_none() {
        return Err(Error::config("pilot trajectory needs a pilot rule"));
    }
    let mut path = Vec::with_capacity(n_steps + 1);
    path.push(start);
    let (mut x1, mut x2) = (start.x1(), start.x2());
    for _ in 0..n_steps {
        let pilot = pilot_rule.as_mut().map(|f| {
            let (y1, y2) = f(x1, x2);
            PilotParams::FixedY { y1, y2 }
        });
        let (d1, d2) = flow(method, beta, x1, x2, pilot.as_ref())?;
        let mut h = step;
        let mut next = None;
        for _ in 0..=MAX_HALVINGS {
            let (n1, n2) = (x1 + h * d1, x2 + h * d2);
            if n1 > 0.0 && n2 > 0.0 && n1.is_finite() {
                next = Some((n1, n2));
                break;
            }
            h *= 0.5;
        }
        if let Some((n1, n2)) = next {
            x1 = n1;
            x2 = n2;
        }
        path.push(RatioPoint::new(x1, x2)?);
    }
    Ok(path)
}

/// Values on a 2-D grid; `values[i * b.len() + j]` belongs to
/// `(a[i], b[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub values: Vec<f64>,
}

impl Landscape {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.b.len() + j]
    }

    /// `(a, b, value)` triples in storage order.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.a.iter().enumerate().flat_map(move |(i, &a)| {
            self.b
                .iter()
                .enumerate()
                .map(move |(j, &b)| (a, b, self.get(i, j)))
        })
    }
}

fn landscape<F>(a: AxisRange, b: AxisRange, resolution: usize, mut f: F) -> Result<Landscape>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    a.check("a")?;
    b.check("b")?;
    if resolution < 2 {
        return Err(Error::config("landscape resolution must be at least 2"));
    }
    let av = a.linspace(resolution);
    let bv = b.linspace(resolution);
    let mut values = Vec::with_capacity(av.len() * bv.len());
    for &x in &av {
        for &y in &bv {
            values.push(f(x, y)?);
        }
    }
    Ok(Landscape {
        a: av,
        b: bv,
        values,
    })
}

/// `f(z)` over `(p1, p2)` at fixed `z`; `a` is `p1`, `b` is `p2`.
pub fn fz_landscape(
    z: f64,
    p1: AxisRange,
    p2: AxisRange,
    resolution: usize,
    beta: Beta,
) -> Result<Landscape> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::config("z must be positive and finite"));
    }
    landscape(p1, p2, resolution, |a, b| f_z(z, a, b, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartialKind {
    /// `∂l/∂X1` over `(X1, Y2)`.
    Dx1,
    /// `∂l/∂X2` over `(X2, Y1)`.
    Dx2,
}

/// Pilot partial derivative over the two variables it depends on: `a` is
/// the reward ratio, `b` the opposing pilot ratio.
pub fn partial_landscape(
    which: PartialKind,
    a: AxisRange,
    b: AxisRange,
    resolution: usize,
    beta: Beta,
) -> Result<Landscape> {
    landscape(a, b, resolution, |x, y| match which {
        PartialKind::Dx1 => pilot_partial_x1(x, y, beta),
        PartialKind::Dx2 => pilot_partial_x2(x, y, beta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::dpo_grad_ratio;

    type PilotRule = fn(f64, f64) -> (f64, f64);

    const B: Beta = Beta::DEFAULT;

    #[test]
    fn default_grid_has_unit_node() {
        let pts = field_grid(FieldMethod::Dpo, B, &FieldGrid::default(), None).unwrap();
        assert_eq!(pts.len(), 3600);
        let p = pts.iter().find(|p| p.x1 == 1.0 && p.x2 == 1.0).unwrap();
        assert!((p.dx1 - 0.05).abs() < 1e-15 && (p.dx2 + 0.05).abs() < 1e-15);
        assert!(pts.iter().any(|p| p.truncated));
    }

    #[test]
    fn field_signs_and_ratio() {
        let pts = field_grid(FieldMethod::Dpo, B, &FieldGrid::default(), None).unwrap();
        for p in &pts {
            assert!(p.dx1 > 0.0 && p.dx2 < 0.0);
            let want = dpo_grad_ratio(RatioPoint::new(p.x1, p.x2).unwrap());
            assert!(((p.dx1 / p.dx2).abs() - want).abs() / want < 1e-10);
            assert!(libm::hypot(p.dx1, p.dx2) <= 1.5 * (1.0 + 1e-15));
        }
    }

    #[test]
    fn truncation_keeps_direction() {
        let (a, b, t) = truncate(3.0, -4.0, 1.5);
        assert!(t);
        assert!((a - 0.9).abs() < 1e-15 && (b + 1.2).abs() < 1e-15);
        assert_eq!(truncate(0.3, -0.4, 1.5), (0.3, -0.4, false));
    }

    #[test]
    fn pilot_needs_params() {
        let r = field_grid(FieldMethod::Pilot, B, &FieldGrid::default(), None);
        assert!(matches!(r, Err(Error::Config(_))));
        let bad = PilotParams::FixedY { y1: 0.0, y2: 1.0 };
        assert!(field_grid(FieldMethod::Pilot, B, &FieldGrid::default(), Some(&bad)).is_err());
    }

    #[test]
    fn pilot_field_above_rejected_boosts_chosen() {
        let grid = FieldGrid {
            truncation: f64::INFINITY,
            ..FieldGrid::default()
        };
        // y2 = x2 / 0.8 > x2 everywhere
        let pp = PilotParams::FixedP { p1: 1.0, p2: 0.8 };
        let dpo = field_grid(FieldMethod::Dpo, B, &grid, None).unwrap();
        let pil = field_grid(FieldMethod::Pilot, B, &grid, Some(&pp)).unwrap();
        for (d, p) in dpo.iter().zip(&pil) {
            assert!(p.dx1 > d.dx1);
        }
    }

    #[test]
    fn trajectories() {
        let none: Option<PilotRule> = None;
        let start = RatioPoint::new(1.0, 1.0).unwrap();
        let path = integrate_trajectory(FieldMethod::Dpo, B, start, 0.01, 100, none).unwrap();
        assert_eq!(path.len(), 101);
        for w in path.windows(2) {
            assert!(w[1].x1() > w[0].x1() && w[1].x2() < w[0].x2());
        }
        let empty = integrate_trajectory(FieldMethod::Dpo, B, start, 0.01, 0, none).unwrap();
        assert_eq!(empty, [start]);

        let s = RatioPoint::new(1.0, 0.05).unwrap();
        let p = integrate_trajectory(FieldMethod::Dpo, B, s, 0.01, 1, none).unwrap();
        let rel1 = (p[1].x1() - 1.0).abs() / 1.0;
        let rel2 = (p[1].x2() - 0.05).abs() / 0.05;
        assert!(rel2 > rel1);
    }

    #[test]
    fn huge_steps_stay_positive() {
        let start = RatioPoint::new(0.5, 0.01).unwrap();
        let rule = Some(|x1: f64, x2: f64| (x1, x2 * 1.2));
        let path = integrate_trajectory(FieldMethod::Pilot, B, start, 50.0, 40, rule).unwrap();
        for w in path.windows(2) {
            assert!(w[1].x2() > 0.0 && w[1].x2() <= w[0].x2());
            assert!(w[1].x1() >= w[0].x1());
        }
    }

    #[test]
    fn fz_landscape_contour() {
        let r = AxisRange::new(0.2, 3.0);
        let l = fz_landscape(2.0, r, r, 41, B).unwrap();
        for (p1, p2, v) in l.rows() {
            let prod = p1 * p2;
            if (prod - 1.0).abs() > 1e-9 {
                assert_eq!(v > 1.0, prod < 1.0, "p1={p1} p2={p2} f={v}");
            }
            if p1 == 1.0 && p2 == 1.0 {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn partial_landscape_monotone() {
        let r = AxisRange::new(0.1, 1.5);
        let d1 = partial_landscape(PartialKind::Dx1, r, r, 30, B).unwrap();
        let d2 = partial_landscape(PartialKind::Dx2, r, r, 30, B).unwrap();
        for i in 0..30 {
            for j in 1..30 {
                assert!(d1.get(i, j) > d1.get(i, j - 1));
                assert!(d2.get(i, j).abs() < d2.get(i, j - 1).abs());
            }
        }
        assert!((d1.get(0, 0) - pilot_partial_x1(0.1, 0.1, B).unwrap()).abs() == 0.0);
    }
}
