use std::collections::BTreeMap;

use super::sum::Neumaier;
use super::{LossValueGrad, MissingStructure, MomentSpec, Term};
use crate::error::{Error, Result};
use crate::volume::{Grid3, StructureMask, Unit};

/// Below this (Gy) a structure's moment is treated as zero and its gradient as zero.
pub const MOMENT_EPS: f64 = 1e-9;

/// Power means of nonnegative `values` for each order, with the per-voxel gradient factors.
///
/// Evaluated as `m * (mean((d/m)^p))^(1/p)` with `m = max(d)` so high orders neither
/// overflow nor lose precision.
struct Moments {
    max: f64,
    /// `(M_p, (mean((d/m)^p))^(1/p))` per order.
    values: Vec<(f64, f64)>,
}

fn moments(values: &[f64], orders: &[u32]) -> Moments {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max < MOMENT_EPS {
        return Moments {
            max,
            values: orders.iter().map(|_| (0.0, 0.0)).collect(),
        };
    }
    let n = values.len() as f64;
    let values = orders
        .iter()
        .map(|&p| {
            let mut acc = Neumaier::default();
            for &d in values {
                acc.add((d / max).powi(p as i32));
            }
            let root = (acc.total() / n).powf(1.0 / p as f64);
            (max * root, root)
        })
        .collect();
    Moments { max, values }
}

/// `∂M_p/∂d_j = (1/n) (d_j / M_p)^(p-1)`, written in the normalised variables.
#[inline]
fn grad_factor(d: f64, max: f64, root: f64, n: f64, p: u32) -> f64 {
    ((d / max) / root).powi(p as i32 - 1) / n
}

fn check_nonnegative(grid: &Grid3, mask: &StructureMask) -> Result<()> {
    for (index, (&b, &v)) in mask.bits.iter().zip(&grid.values).enumerate() {
        if b && !(v >= 0.0) {
            return Err(Error::NegativeDose { index, value: v });
        }
    }
    Ok(())
}

/// Power mean of order `p` of nonnegative values.
pub fn power_mean(values: &[f64], p: u32) -> f64 {
    assert!(p >= 1, "moment order must be >= 1");
    moments(values, &[p]).values[0].0
}

/// Moment `M_p` of the dose over a structure and its gradient with respect to the dose.
pub fn moment(dose: &Grid3, mask: &StructureMask, p: u32) -> Result<(f64, Grid3)> {
    if p == 0 {
        return Err(Error::config("moment order must be >= 1"));
    }
    dose.ensure_same_geometry(&mask.geometry, "moment")?;
    mask.ensure_nonempty()?;
    check_nonnegative(dose, mask)?;
    let idx = mask.indices();
    let vals: Vec<f64> = idx.iter().map(|&i| dose.values[i]).collect();
    let m = moments(&vals, &[p]);
    let (value, root) = m.values[0];
    let mut grad = Grid3::zeros_like(dose, Unit::Unitless);
    if value >= MOMENT_EPS {
        let n = vals.len() as f64;
        for (&i, &d) in idx.iter().zip(&vals) {
            grad.values[i] = grad_factor(d, m.max, root, n, p);
        }
    }
    Ok((value, grad))
}

/// `Σ_s Σ_{p ∈ P_s} (M_p(ref, s) - M_p(pred, s))²`.
pub fn moment_loss_grad(
    pred: &Grid3,
    reference: &Grid3,
    structures: &[StructureMask],
    spec: &MomentSpec,
) -> Result<LossValueGrad> {
    spec.validate()?;
    pred.ensure_same_geometry(&reference.geometry, "moment loss")?;
    if spec.on_missing == MissingStructure::Error {
        if let Some(name) = spec
            .per_structure
            .keys()
            .find(|name| !structures.iter().any(|s| &s.name == *name))
        {
            return Err(Error::MissingStructure(name.clone()));
        }
    }
    let mut grad = vec![0.0; pred.len()];
    let mut acc = Neumaier::default();
    for s in structures {
        let orders = spec.orders_for(&s.name);
        if orders.is_empty() {
            continue;
        }
        pred.ensure_same_geometry(&s.geometry, &s.name)?;
        s.ensure_nonempty()?;
        check_nonnegative(pred, s)?;
        check_nonnegative(reference, s)?;
        let idx = s.indices();
        let pv: Vec<f64> = idx.iter().map(|&i| pred.values[i]).collect();
        let rv: Vec<f64> = idx.iter().map(|&i| reference.values[i]).collect();
        let mp = moments(&pv, orders);
        let mr = moments(&rv, orders);
        let n = pv.len() as f64;
        for ((&p, &(m_pred, root)), &(m_ref, _)) in orders.iter().zip(&mp.values).zip(&mr.values) {
            let diff = m_pred - m_ref;
            acc.add(diff * diff);
            if m_pred < MOMENT_EPS {
                continue;
            }
            let coef = 2.0 * diff;
            for (&i, &d) in idx.iter().zip(&pv) {
                grad[i] += coef * grad_factor(d, mp.max, root, n, p);
            }
        }
    }
    let value = acc.total();
    Ok(LossValueGrad {
        value,
        grad: Grid3::new(pred.geometry, grad, Unit::Unitless)?,
        terms: BTreeMap::from([(Term::Moment, value)]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{GridGeometry, Role};
    use proptest::prelude::*;

    fn line(v: Vec<f64>) -> (Grid3, StructureMask) {
        let g = GridGeometry::unit([v.len(), 1, 1]).unwrap();
        (
            Grid3::new(g, v, Unit::Gy).unwrap(),
            StructureMask::from_fn(g, "s", Role::Oar, |_| true),
        )
    }

    #[test]
    fn examples() {
        let (d, m) = line(vec![7.5; 5]);
        for p in [1, 2, 10, 50] {
            assert!((moment(&d, &m, p).unwrap().0 - 7.5).abs() < 1e-12);
        }
        let (d, m) = line(vec![1.0, 2.0, 3.0]);
        assert!((moment(&d, &m, 1).unwrap().0 - 2.0).abs() < 1e-15);
        assert!((moment(&d, &m, 2).unwrap().0 - (14.0f64 / 3.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn high_orders_do_not_overflow() {
        let (d, m) = line(vec![1e40, 2e40, 3e40]);
        let v = moment(&d, &m, 10).unwrap().0;
        assert!(v.is_finite() && v > 2e40 && v < 3e40);
    }

    #[test]
    fn errors() {
        let (d, m) = line(vec![1.0, -2.0]);
        assert!(matches!(moment(&d, &m, 2), Err(Error::NegativeDose { index: 1, .. })));
        let (d, _) = line(vec![1.0, 2.0]);
        let empty = StructureMask::from_fn(d.geometry, "e", Role::Oar, |_| false);
        assert!(matches!(moment(&d, &empty, 1), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn zero_dose_has_zero_gradient() {
        let (d, m) = line(vec![0.0; 4]);
        let (v, g) = moment(&d, &m, 10).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_voxel_loss() {
        let (pred, m) = line(vec![50.0]);
        let (reference, _) = line(vec![60.0]);
        let spec = MomentSpec {
            default: vec![1],
            ..MomentSpec::default()
        };
        let l = moment_loss_grad(&pred, &reference, &[m], &spec).unwrap();
        assert!((l.value - 100.0).abs() < 1e-12);
        assert!((l.grad.values[0] + 20.0).abs() < 1e-12);
    }

    #[test]
    fn missing_structure_policy() {
        let (pred, m) = line(vec![1.0, 2.0]);
        let spec = MomentSpec::default().with_orders("cord", &[5, 10]);
        assert!(matches!(
            moment_loss_grad(&pred, &pred, &[m.clone()], &spec),
            Err(Error::MissingStructure(_))
        ));
        let spec = MomentSpec {
            on_missing: MissingStructure::Skip,
            ..spec
        };
        assert_eq!(moment_loss_grad(&pred, &pred, &[m], &spec).unwrap().value, 0.0);
    }

    #[test]
    fn disjoint_structures_add() {
        let g = GridGeometry::unit([6, 1, 1]).unwrap();
        let pred = Grid3::new(g, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Unit::Gy).unwrap();
        let reference = Grid3::new(g, vec![2.0, 2.0, 1.0, 7.0, 5.0, 3.0], Unit::Gy).unwrap();
        let a = StructureMask::from_fn(g, "a", Role::Oar, |[i, _, _]| i < 3);
        let b = StructureMask::from_fn(g, "b", Role::Oar, |[i, _, _]| i >= 3);
        let spec = MomentSpec::default();
        let la = moment_loss_grad(&pred, &reference, &[a.clone()], &spec).unwrap();
        let lb = moment_loss_grad(&pred, &reference, &[b.clone()], &spec).unwrap();
        let lab = moment_loss_grad(&pred, &reference, &[a, b], &spec).unwrap();
        assert!((lab.value - la.value - lb.value).abs() < 1e-12);
        for i in 0..6 {
            assert!((lab.grad.values[i] - la.grad.values[i] - lb.grad.values[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn shared_moments_give_zero_loss() {
        // Permutations share every moment but are different doses.
        let (pred, m) = line(vec![10.0, 20.0, 30.0, 40.0]);
        let (reference, _) = line(vec![40.0, 30.0, 20.0, 10.0]);
        let l = moment_loss_grad(&pred, &reference, &[m], &MomentSpec::default()).unwrap();
        assert!(l.value < 1e-24);
        assert_ne!(pred.values, reference.values);
    }

    proptest! {
        #[test]
        fn power_mean_is_monotone_bounded_homogeneous(
            v in prop::collection::vec(0.0f64..80.0, 1..60),
            c in 0.01f64..100.0,
        ) {
            let max = v.iter().copied().fold(0.0, f64::max);
            let n = v.len() as f64;
            let mut last = 0.0;
            for p in [1u32, 2, 5, 10, 50] {
                let m = power_mean(&v, p);
                prop_assert!(m >= last * (1.0 - 1e-12));
                prop_assert!(m <= max * (1.0 + 1e-12));
                prop_assert!(m >= max * n.powf(-1.0 / p as f64) * (1.0 - 1e-12));
                let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
                prop_assert!((power_mean(&scaled, p) - c * m).abs() <= 1e-12 * (c * m).max(1e-300));
                last = m;
            }
            let mean = v.iter().sum::<f64>() / n;
            prop_assert!((power_mean(&v, 1) - mean).abs() <= 1e-12 * mean.max(1e-300));
        }

        #[test]
        fn power_mean_midpoint_convex(
            pairs in prop::collection::vec((0.0f64..80.0, 0.0f64..80.0), 1..40),
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let mid: Vec<f64> = pairs.iter().map(|p| 0.5 * (p.0 + p.1)).collect();
            for p in [1u32, 2, 10] {
                let lhs = power_mean(&mid, p);
                let rhs = 0.5 * (power_mean(&x, p) + power_mean(&y, p));
                prop_assert!(lhs <= rhs + 1e-9);
            }
        }
    }
}
