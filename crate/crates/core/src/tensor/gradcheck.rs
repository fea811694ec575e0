//! Central finite-difference checks for reverse-mode gradients.
//!
//! The numeric side only ever evaluates the forward function under
//! [`no_grad`](super::no_grad) on perturbed copies of the inputs, so it is
//! independent of the backward implementation it checks.

use super::{no_grad, Tensor};
use crate::error::Result;

/// Denominator floor for relative errors of near-zero gradients.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (param index, element index or usize::MAX for a directional probe, analytic, numeric)
    pub worst: Option<(usize, usize, f64, f64)>,
    /// Per tensor `|a - n| / max(|a|, |n|, floor)` over the whole gradient
    /// vector; filled by [`check_gradients`].
    pub tensor_rel_err: Vec<f64>,
}

fn vector_rel_err(a: &[f64], n: &[f64]) -> f64 {
    let l2 = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = l2(&mut a.iter().zip(n).map(|(x, y)| x - y));
    diff / l2(&mut a.iter().copied()).max(l2(&mut n.iter().copied())).max(REL_ERR_FLOOR)
}

impl GradCheck {
    fn record(&mut self, param: usize, elem: usize, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
        let err = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if self.worst.is_none() || err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = Some((param, elem, analytic, numeric));
        }
    }
}

fn analytic<F>(params: &[Tensor], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = params.iter().map(|p| p.with_requires_grad(true)).collect();
    f(&leaves)?.backward()?;
    Ok(leaves
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.len()]))
        .collect())
}

fn eval_shifted<F>(params: &[Tensor], which: usize, dir: &[f64], h: f64, f: &F) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let _g = no_grad();
    let mut shifted: Vec<Tensor> = params.iter().map(Tensor::detach).collect();
    let data: Vec<f64> = params[which]
        .data()
        .iter()
        .zip(dir)
        .map(|(v, d)| v + h * d)
        .collect();
    shifted[which] = Tensor::new(data, params[which].shape())?;
    f(&shifted)?.item()
}

/// Fourth-order central difference along `dir`.
fn central<F>(params: &[Tensor], which: usize, dir: &[f64], h: f64, f: &F) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let p1 = eval_shifted(params, which, dir, h, f)?;
    let m1 = eval_shifted(params, which, dir, -h, f)?;
    let p2 = eval_shifted(params, which, dir, 2.0 * h, f)?;
    let m2 = eval_shifted(params, which, dir, -2.0 * h, f)?;
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// Checks every element of every parameter.
pub fn check_gradients<F>(params: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let grads = analytic(params, &f)?;
    let mut report = GradCheck::default();
    for (pi, p) in params.iter().enumerate() {
        let mut numeric = Vec::with_capacity(p.len());
        for e in 0..p.len() {
            let mut dir = vec![0.0; p.len()];
            dir[e] = 1.0;
            let num = central(params, pi, &dir, h, &f)?;
            report.record(pi, e, grads[pi][e], num);
            numeric.push(num);
        }
        report.tensor_rel_err.push(vector_rel_err(&grads[pi], &numeric));
    }
    Ok(report)
}

/// Cheaper check for large parameter sets: per tensor, the directional
/// derivative along the normalized analytic gradient plus the `top_k`
/// largest-magnitude elements.
pub fn check_gradients_sampled<F>(
    params: &[Tensor],
    h: f64,
    top_k: usize,
    f: F,
) -> Result<Vec<GradCheck>>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let grads = analytic(params, &f)?;
    let mut out = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let g = &grads[pi];
        let mut report = GradCheck::default();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let dir: Vec<f64> = g.iter().map(|v| v / norm).collect();
            let num = central(params, pi, &dir, h, &f)?;
            report.record(pi, usize::MAX, norm, num);
        }
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        for &e in order.iter().take(top_k) {
            let mut dir = vec![0.0; p.len()];
            dir[e] = 1.0;
            let num = central(params, pi, &dir, h, &f)?;
            report.record(pi, e, g[e], num);
        }
        out.push(report);
    }
    Ok(out)
}
