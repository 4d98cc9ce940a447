//! Central-difference gradient checker.

use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Pass threshold on the maximum relative error.
    pub tol: f64,
    /// Coordinates to sample; `None` checks every coordinate. When the
    /// parameter count is at most this, every coordinate is checked.
    pub max_coords: Option<usize>,
    /// Central-difference step is `rel_step * max(1, |θ|)`.
    pub rel_step: f64,
    /// Denominator floor: `|a − n| / max(|a|, |n|, abs_floor)`.
    pub abs_floor: f64,
    /// Combine steps `h` and `h/2` as `(4·D(h/2) − D(h)) / 3`, cancelling
    /// the `h²` error term.
    pub richardson: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_coords: Some(64),
            rel_step: 1e-6,
            abs_floor: 1e-4,
            richardson: false,
            seed: 0,
        }
    }
}

/// Position of one scalar parameter: `tensor` indexes the parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coord {
    pub tensor: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GradCheckFailure {
    /// The loss was not finite; `coord` is the perturbed coordinate, or
    /// `None` at the unperturbed point.
    NonFiniteLoss {
        coord: Option<Coord>,
    },
    Build(Error),
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<Coord>,
    pub checked: usize,
    pub passed: bool,
    pub failure: Option<GradCheckFailure>,
}

impl GradCheckReport {
    fn failed(f: GradCheckFailure, checked: usize) -> Self {
        Self {
            max_rel_err: f64::INFINITY,
            worst: None,
            checked,
            passed: false,
            failure: Some(f),
        }
    }
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let den = analytic.abs().max(numeric.abs()).max(abs_floor);
    (analytic - numeric).abs() / den
}

fn eval<F>(params: &[Tensor], loss_fn: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let root = loss_fn(&mut g, &vars)?;
    g.value(root)
        .item()
        .ok_or_else(|| Error::NonScalarRoot(g.value(root).shape().to_vec()))
}

/// Analytic gradient of `loss_fn` at `params`, plus the loss value.
pub fn analytic_gradient<F>(params: &[Tensor], loss_fn: &mut F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let root = loss_fn(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let value = g.value(root).item().unwrap_or(f64::NAN);
    Ok((value, vars.iter().map(|v| grads.wrt(*v)).collect()))
}

/// Central difference of `loss_fn` along one coordinate.
pub fn numeric_partial<F>(
    params: &[Tensor],
    loss_fn: &mut F,
    coord: Coord,
    rel_step: f64,
) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let x0 = params[coord.tensor].data()[coord.index];
    let h = rel_step * x0.abs().max(1.0);
    work[coord.tensor].data_mut()[coord.index] = x0 + h;
    let up = eval(&work, loss_fn)?;
    work[coord.tensor].data_mut()[coord.index] = x0 - h;
    let down = eval(&work, loss_fn)?;
    Ok((up - down) / (2.0 * h))
}

/// Richardson extrapolation of [`numeric_partial`] over steps `h` and `h/2`.
pub fn richardson_partial<F>(
    params: &[Tensor],
    loss_fn: &mut F,
    coord: Coord,
    rel_step: f64,
) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let coarse = numeric_partial(params, loss_fn, coord, rel_step)?;
    let fine = numeric_partial(params, loss_fn, coord, 0.5 * rel_step)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Compare reverse-mode gradients of `loss_fn` with central differences.
pub fn grad_check<F>(params: &[Tensor], mut loss_fn: F, cfg: &GradCheckConfig) -> GradCheckReport
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let (value, analytic) = match analytic_gradient(params, &mut loss_fn) {
        Ok(v) => v,
        Err(e) => return GradCheckReport::failed(GradCheckFailure::Build(e), 0),
    };
    if !value.is_finite() {
        return GradCheckReport::failed(GradCheckFailure::NonFiniteLoss { coord: None }, 0);
    }

    let all: Vec<Coord> = params
        .iter()
        .enumerate()
        .flat_map(|(t, p)| {
            (0..p.numel()).map(move |i| Coord {
                tensor: t,
                index: i,
            })
        })
        .collect();
    let coords: Vec<Coord> = match cfg.max_coords {
        Some(k) if k < all.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut picked: Vec<usize> = index::sample(&mut rng, all.len(), k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| all[i]).collect()
        }
        _ => all,
    };

    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    for (n, &c) in coords.iter().enumerate() {
        let numeric = if cfg.richardson {
            richardson_partial(params, &mut loss_fn, c, cfg.rel_step)
        } else {
            numeric_partial(params, &mut loss_fn, c, cfg.rel_step)
        };
        let numeric = match numeric {
            Ok(v) => v,
            Err(e) => return GradCheckReport::failed(GradCheckFailure::Build(e), n),
        };
        if !numeric.is_finite() {
            return GradCheckReport::failed(GradCheckFailure::NonFiniteLoss { coord: Some(c) }, n);
        }
        let a = analytic[c.tensor].data()[c.index];
        let err = relative_error(a, numeric, cfg.abs_floor);
        if err > max_rel_err || worst.is_none() {
            max_rel_err = max_rel_err.max(err);
            worst = Some(c);
        }
    }

    GradCheckReport {
        max_rel_err,
        worst,
        checked: coords.len(),
        passed: max_rel_err < cfg.tol,
        failure: None,
    }
}
