use std::collections::BTreeMap;

use super::sum::Neumaier;
use super::{DvhLossSpec, LossValueGrad, Term};
use crate::error::{Error, Result};
use crate::volume::{Grid3, StructureMask, Unit};

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Smoothed volume fractions `v_t = mean_j σ((d_j - t)/β)` for each threshold.
fn smoothed_dvh(values: &[f64], thresholds: &[f64], beta: f64) -> Vec<f64> {
    let mut acc = vec![Neumaier::default(); thresholds.len()];
    for &d in values {
        for (a, &t) in acc.iter_mut().zip(thresholds) {
            a.add(sigmoid((d - t) / beta));
        }
    }
    let n = values.len() as f64;
    acc.iter().map(|a| a.total() / n).collect()
}

fn masked(grid: &Grid3, mask: &StructureMask) -> Result<(Vec<usize>, Vec<f64>)> {
    grid.ensure_same_geometry(&mask.geometry, &mask.name)?;
    mask.ensure_nonempty()?;
    let idx = mask.indices();
    let vals = idx.iter().map(|&i| grid.values[i]).collect();
    Ok((idx, vals))
}

/// Sigmoid-smoothed fraction of the structure receiving at least `threshold` Gy, with its gradient.
pub fn sigmoid_volume_at_dose(
    dose: &Grid3,
    mask: &StructureMask,
    threshold: f64,
    beta: f64,
) -> Result<(f64, Grid3)> {
    if !(beta > 0.0) {
        return Err(Error::config("beta must be positive"));
    }
    let (idx, vals) = masked(dose, mask)?;
    let value = smoothed_dvh(&vals, &[threshold], beta)[0];
    let scale = 1.0 / (beta * vals.len() as f64);
    let mut grad = Grid3::zeros_like(dose, Unit::Unitless);
    for (&i, &d) in idx.iter().zip(&vals) {
        grad.values[i] = sigmoid_prime((d - threshold) / beta) * scale;
    }
    Ok((value, grad))
}

/// Smoothed DVH vector of a structure over the spec's threshold grid.
pub fn dvh_vector_approx(dose: &Grid3, mask: &StructureMask, spec: &DvhLossSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let (_, vals) = masked(dose, mask)?;
    Ok(smoothed_dvh(&vals, &spec.thresholds.values(), spec.beta))
}

/// `(1/(n_s n_t)) Σ_s ‖DVH(ref, s) - DVH(pred, s)‖²` with the gradient through the sigmoids of `pred`.
pub fn dvh_loss_grad(
    pred: &Grid3,
    reference: &Grid3,
    structures: &[StructureMask],
    spec: &DvhLossSpec,
) -> Result<LossValueGrad> {
    spec.validate()?;
    pred.ensure_same_geometry(&reference.geometry, "dvh loss")?;
    if structures.is_empty() {
        return Err(Error::config("DVH loss needs at least one structure"));
    }
    let thresholds = spec.thresholds.values();
    let beta = spec.beta;
    let norm = 1.0 / (structures.len() * thresholds.len()) as f64;
    let mut grad = vec![0.0; pred.len()];
    let mut acc = Neumaier::default();
    for s in structures {
        let (idx, pv) = masked(pred, s)?;
        let (_, rv) = masked(reference, s)?;
        let vp = smoothed_dvh(&pv, &thresholds, beta);
        let vr = smoothed_dvh(&rv, &thresholds, beta);
        let diff: Vec<f64> = vp.iter().zip(&vr).map(|(p, r)| p - r).collect();
        for d in &diff {
            acc.add(d * d);
        }
        let coef = 2.0 * norm / (beta * pv.len() as f64);
        for (&i, &d) in idx.iter().zip(&pv) {
            let mut g = 0.0;
            for (&t, &dt) in thresholds.iter().zip(&diff) {
                g += dt * sigmoid_prime((d - t) / beta);
            }
            grad[i] += coef * g;
        }
    }
    let value = norm * acc.total();
    Ok(LossValueGrad {
        value,
        grad: Grid3::new(pred.geometry, grad, Unit::Unitless)?,
        terms: BTreeMap::from([(Term::Dvh, value)]),
    })
}
