use std::collections::BTreeMap;

use super::{dvh_loss_grad, mae_loss_grad, moment_loss_grad, LossConfig, LossValueGrad, Term};
use crate::error::Result;
use crate::volume::{Grid3, StructureMask, Unit};

/// Weighted sum of the enabled terms: `L_MAE + w_dvh * L_DVH + w_moment * L_moment`.
pub fn total_loss_grad(
    pred: &Grid3,
    reference: &Grid3,
    structures: &[StructureMask],
    cfg: &LossConfig,
) -> Result<LossValueGrad> {
    cfg.validate()?;
    pred.ensure_same_geometry(&reference.geometry, "total loss")?;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.len()];
    let mut terms = BTreeMap::new();
    for &term in &cfg.terms {
        let part = match term {
            Term::Mae => mae_loss_grad(pred, reference)?,
            Term::Dvh => dvh_loss_grad(pred, reference, structures, &cfg.dvh)?,
            Term::Moment => moment_loss_grad(pred, reference, structures, &cfg.moments)?,
        };
        let w = cfg.weight(term);
        value += w * part.value;
        for (g, p) in grad.iter_mut().zip(&part.grad.values) {
            *g += w * p;
        }
        terms.insert(term, part.value);
    }
    Ok(LossValueGrad {
        value,
        grad: Grid3::new(pred.geometry, grad, Unit::Unitless)?,
        terms,
    })
}
