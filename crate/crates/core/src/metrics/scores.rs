use std::fmt;

use serde::{Deserialize, Serialize};

use super::dvh::{dose_at_cc_sorted, dose_at_percent_sorted, sorted_desc};
use crate::error::{Error, Result};
use crate::losses::mae_loss_grad;
use crate::losses::sum::sum;
use crate::volume::{Grid3, Role, StructureMask};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    MeanDose,
    /// Minimum dose of the hottest `cc` cm³.
    DoseAtCc(f64),
    /// Dose received by at least `x`% of the volume.
    DoseAtPercent(f64),
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriterionKind::MeanDose => write!(f, "mean"),
            CriterionKind::DoseAtCc(cc) => write!(f, "D{cc}cc"),
            CriterionKind::DoseAtPercent(x) => write!(f, "D{x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvhCriterion {
    pub structure: String,
    pub kind: CriterionKind,
}

impl DvhCriterion {
    pub fn new(structure: impl Into<String>, kind: CriterionKind) -> Self {
        DvhCriterion {
            structure: structure.into(),
            kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CriterionKind::DoseAtPercent(x) if !(x > 0.0 && x <= 100.0) => {
                Err(Error::config(format!("D{x}: percent must be in (0, 100]")))
            }
            CriterionKind::DoseAtCc(cc) if !(cc > 0.0) => {
                Err(Error::config(format!("D{cc}cc: volume must be positive")))
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, dose: &Grid3, mask: &StructureMask) -> Result<f64> {
        self.validate()?;
        let sorted = sorted_desc(dose, mask)?;
        Ok(match self.kind {
            CriterionKind::MeanDose => sum(sorted.iter().copied()) / sorted.len() as f64,
            CriterionKind::DoseAtCc(cc) => dose_at_cc_sorted(&sorted, cc, &dose.geometry),
            CriterionKind::DoseAtPercent(x) => dose_at_percent_sorted(&sorted, x),
        })
    }
}

/// Per-criterion comparison of reference and prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionError {
    pub structure: String,
    pub criterion: String,
    #[serde(rename = "ref")]
    pub reference: f64,
    pub pred: f64,
    pub abs_error: f64,
}

/// Mean absolute voxel error between prediction and reference (Gy).
pub fn dose_score(pred: &Grid3, reference: &Grid3) -> Result<f64> {
    Ok(mae_loss_grad(pred, reference)?.value)
}

/// OARs contribute mean dose and D0.1cc; the PTV contributes D99, D95 and D1.
pub fn canonical_criteria(structures: &[StructureMask]) -> Vec<DvhCriterion> {
    let mut out = Vec::new();
    for s in structures {
        match s.role {
            Role::Oar => {
                out.push(DvhCriterion::new(&s.name, CriterionKind::MeanDose));
                out.push(DvhCriterion::new(&s.name, CriterionKind::DoseAtCc(0.1)));
            }
            Role::Ptv => {
                for x in [99.0, 95.0, 1.0] {
                    out.push(DvhCriterion::new(&s.name, CriterionKind::DoseAtPercent(x)));
                }
            }
        }
    }
    out
}

pub fn dvh_errors(
    pred: &Grid3,
    reference: &Grid3,
    structures: &[StructureMask],
    criteria: &[DvhCriterion],
) -> Result<Vec<CriterionError>> {
    criteria
        .iter()
        .map(|c| {
            let mask = structures
                .iter()
                .find(|s| s.name == c.structure)
                .ok_or_else(|| Error::MissingStructure(c.structure.clone()))?;
            let r = c.evaluate(reference, mask)?;
            let p = c.evaluate(pred, mask)?;
            Ok(CriterionError {
                structure: c.structure.clone(),
                criterion: c.kind.to_string(),
                reference: r,
                pred: p,
                abs_error: (r - p).abs(),
            })
        })
        .collect()
}

/// Mean absolute error over the canonical DVH criteria, with the per-criterion breakdown.
pub fn dvh_score(
    pred: &Grid3,
    reference: &Grid3,
    structures: &[StructureMask],
) -> Result<(f64, Vec<CriterionError>)> {
    if !structures.iter().any(|s| s.role == Role::Ptv) {
        return Err(Error::MissingStructure("PTV".into()));
    }
    let errors = dvh_errors(pred, reference, structures, &canonical_criteria(structures))?;
    let score = sum(errors.iter().map(|e| e.abs_error)) / errors.len() as f64;
    Ok((score, errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{GridGeometry, Unit};
    use proptest::prelude::*;

    fn setup(v: Vec<f64>) -> (Grid3, Vec<StructureMask>) {
        let g = GridGeometry::new([v.len(), 1, 1], [5.0; 3], [0.0; 3]).unwrap();
        let n = v.len();
        (
            Grid3::new(g, v, Unit::Gy).unwrap(),
            vec![
                StructureMask::from_fn(g, "ptv", Role::Ptv, |[i, _, _]| i < n / 2),
                StructureMask::from_fn(g, "cord", Role::Oar, |[i, _, _]| i >= n / 2),
            ],
        )
    }

    #[test]
    fn dose_score_examples() {
        let (a, _) = setup(vec![1.0, 3.0]);
        let (b, _) = setup(vec![2.0, 5.0]);
        assert_eq!(dose_score(&a, &a).unwrap(), 0.0);
        assert_eq!(dose_score(&a, &a.scaled(1.0)).unwrap(), 0.0);
        assert_eq!(dose_score(&a, &b).unwrap(), 1.5);
        let (c, _) = setup(vec![2.0, 4.0]);
        assert_eq!(dose_score(&c, &a).unwrap(), 1.0);
    }

    #[test]
    fn ptv_only_shift() {
        let g = GridGeometry::unit([10, 1, 1]).unwrap();
        let reference = Grid3::from_fn(g, Unit::Gy, |[i, _, _]| 55.0 + i as f64);
        let pred = Grid3::new(g, reference.values.iter().map(|v| v + 2.0).collect(), Unit::Gy).unwrap();
        let ptv = vec![StructureMask::from_fn(g, "ptv", Role::Ptv, |_| true)];
        let (score, errors) = dvh_score(&pred, &reference, &ptv).unwrap();
        assert_eq!(errors.len(), 3);
        assert!((score - 2.0).abs() < 1e-12);
    }

    #[test]
    fn missing_ptv_is_error() {
        let (a, s) = setup(vec![1.0, 3.0, 4.0, 5.0]);
        assert!(matches!(dvh_score(&a, &a, &s[1..]), Err(Error::MissingStructure(_))));
        assert_eq!(dvh_score(&a, &a, &s).unwrap().0, 0.0);
        assert_eq!(canonical_criteria(&s).len(), 5);
    }

    proptest! {
        #[test]
        fn symmetric_and_triangle(
            a in prop::collection::vec(0.0f64..70.0, 8),
            b in prop::collection::vec(0.0f64..70.0, 8),
            c in prop::collection::vec(0.0f64..70.0, 8),
        ) {
            let (ga, s) = setup(a);
            let (gb, _) = setup(b);
            let (gc, _) = setup(c);
            let (ab, eab) = dvh_score(&ga, &gb, &s).unwrap();
            let (ba, _) = dvh_score(&gb, &ga, &s).unwrap();
            prop_assert_eq!(ab, ba);
            let (_, ebc) = dvh_score(&gb, &gc, &s).unwrap();
            let (_, eac) = dvh_score(&ga, &gc, &s).unwrap();
            for ((x, y), z) in eab.iter().zip(&ebc).zip(&eac) {
                prop_assert!(z.abs_error <= x.abs_error + y.abs_error + 1e-12);
            }
        }
    }
}
