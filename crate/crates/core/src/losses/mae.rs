use std::collections::BTreeMap;

use super::sum::Neumaier;
use super::{LossValueGrad, Term};
use crate::error::Result;
use crate::volume::{Grid3, Unit};

/// `(1/N) Σ |pred - ref|` over all voxels; gradient `sign(pred - ref) / N` with `sign(0) = 0`.
pub fn mae_loss_grad(pred: &Grid3, reference: &Grid3) -> Result<LossValueGrad> {
    pred.ensure_same_geometry(&reference.geometry, "mae")?;
    let n = pred.len() as f64;
    let mut acc = Neumaier::default();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &r) in pred.values.iter().zip(&reference.values) {
        let d = p - r;
        acc.add(d.abs());
        grad.push(if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        });
    }
    let value = acc.total() / n;
    Ok(LossValueGrad {
        value,
        grad: Grid3::new(pred.geometry, grad, Unit::Unitless)?,
        terms: BTreeMap::from([(Term::Mae, value)]),
    })
}
