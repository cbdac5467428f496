use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::dvh::{dose_at_cc_sorted, dose_at_percent_sorted, sorted_desc};
use crate::error::{Error, Result};
use crate::losses::sum::sum;
use crate::volume::{Grid3, Role, StructureMask};

/// Derived structure: union of both lungs minus the target.
pub const LUNGS_MINUS_TARGET: &str = "lungs_gtv";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClinicalKind {
    /// Maximum dose must not exceed the limit (Gy).
    MaxDose,
    /// Mean dose must not exceed the limit (Gy).
    MeanDose,
    /// Percent of volume receiving at least `dose` Gy must not exceed the limit (%).
    VolumeAtDose { dose: f64 },
    /// Dose covering `percent`% of the volume must reach the limit (Gy).
    Coverage { percent: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalCriterion {
    pub structure: String,
    pub kind: ClinicalKind,
    pub limit: f64,
}

impl ClinicalCriterion {
    pub fn new(structure: &str, kind: ClinicalKind, limit: f64) -> Self {
        ClinicalCriterion {
            structure: structure.to_string(),
            kind,
            limit,
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            ClinicalKind::MaxDose => format!("max <= {} Gy", self.limit),
            ClinicalKind::MeanDose => format!("mean <= {} Gy", self.limit),
            ClinicalKind::VolumeAtDose { dose } => format!("V{dose}Gy <= {}%", self.limit),
            ClinicalKind::Coverage { percent } => format!("D{percent} >= {} Gy", self.limit),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.limit.is_finite()
            && self.limit >= 0.0
            && match self.kind {
                ClinicalKind::VolumeAtDose { dose } => dose.is_finite() && dose >= 0.0 && self.limit <= 100.0,
                ClinicalKind::Coverage { percent } => percent > 0.0 && percent <= 100.0,
                _ => true,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("malformed clinical criterion {self:?}")))
        }
    }
}

/// How the "max dose" rows are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxDoseMode {
    #[default]
    Absolute,
    /// D0.1cc.
    NearMax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Pass,
    Fail,
    NotEvaluable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRow {
    pub structure: String,
    pub criterion: String,
    pub limit: f64,
    pub achieved: Option<f64>,
    pub status: RowStatus,
}

/// Institutional lung IMRT criteria, plus a PTV D95 coverage row at 95% of `prescription`.
pub fn default_clinical_criteria(prescription: f64) -> Vec<ClinicalCriterion> {
    use ClinicalKind::*;
    vec![
        ClinicalCriterion::new("ptv", MaxDose, 72.0),
        ClinicalCriterion::new("ptv", Coverage { percent: 95.0 }, 0.95 * prescription),
        ClinicalCriterion::new(LUNGS_MINUS_TARGET, MaxDose, 66.0),
        ClinicalCriterion::new(LUNGS_MINUS_TARGET, MeanDose, 21.0),
        ClinicalCriterion::new(LUNGS_MINUS_TARGET, VolumeAtDose { dose: 20.0 }, 37.0),
        ClinicalCriterion::new("heart", MaxDose, 66.0),
        ClinicalCriterion::new("heart", MeanDose, 20.0),
        ClinicalCriterion::new("heart", VolumeAtDose { dose: 30.0 }, 50.0),
        ClinicalCriterion::new("stomach", MaxDose, 54.0),
        ClinicalCriterion::new("stomach", MeanDose, 30.0),
        ClinicalCriterion::new("esophagus", MaxDose, 66.0),
        ClinicalCriterion::new("esophagus", MeanDose, 34.0),
        ClinicalCriterion::new("liver", MaxDose, 66.0),
        ClinicalCriterion::new("liver", VolumeAtDose { dose: 30.0 }, 50.0),
        ClinicalCriterion::new("cord", MaxDose, 50.0),
        ClinicalCriterion::new("brachial_plexus", MaxDose, 65.0),
    ]
}

/// Look a structure up by name; `lungs_gtv` is synthesised from `lung_l`, `lung_r` and the PTV.
pub fn resolve_structure<'a>(structures: &'a [StructureMask], name: &str) -> Option<Cow<'a, StructureMask>> {
    if let Some(s) = structures.iter().find(|s| s.name == name) {
        return Some(Cow::Borrowed(s));
    }
    if name != LUNGS_MINUS_TARGET {
        return None;
    }
    let left = structures.iter().find(|s| s.name == "lung_l")?;
    let right = structures.iter().find(|s| s.name == "lung_r")?;
    let ptv = structures.iter().find(|s| s.role == Role::Ptv);
    let bits = left
        .bits
        .iter()
        .zip(&right.bits)
        .enumerate()
        .map(|(i, (&l, &r))| (l || r) && !ptv.is_some_and(|p| p.bits[i]))
        .collect();
    StructureMask::new(left.geometry, bits, LUNGS_MINUS_TARGET, Role::Oar)
        .ok()
        .map(Cow::Owned)
}

/// Evaluate each criterion on `dose`; criteria on absent or empty structures are not evaluable.
pub fn clinical_report(
    dose: &Grid3,
    structures: &[StructureMask],
    criteria: &[ClinicalCriterion],
    max_mode: MaxDoseMode,
) -> Result<Vec<ClinicalRow>> {
    criteria
        .iter()
        .map(|c| {
            c.validate()?;
            let mask = resolve_structure(structures, &c.structure).filter(|m| !m.is_empty());
            let achieved = match mask {
                None => None,
                Some(mask) => {
                    let sorted = sorted_desc(dose, &mask)?;
                    let n = sorted.len() as f64;
                    Some(match c.kind {
                        ClinicalKind::MaxDose => match max_mode {
                            MaxDoseMode::Absolute => sorted[0],
                            MaxDoseMode::NearMax => dose_at_cc_sorted(&sorted, 0.1, &dose.geometry),
                        },
                        ClinicalKind::MeanDose => sum(sorted.iter().copied()) / n,
                        ClinicalKind::VolumeAtDose { dose: level } => {
                            100.0 * sorted.iter().filter(|&&d| d >= level).count() as f64 / n
                        }
                        ClinicalKind::Coverage { percent } => dose_at_percent_sorted(&sorted, percent),
                    })
                }
            };
            let status = match achieved {
                None => RowStatus::NotEvaluable,
                Some(a) => {
                    let pass = match c.kind {
                        ClinicalKind::Coverage { .. } => a >= c.limit,
                        _ => a <= c.limit,
                    };
                    if pass {
                        RowStatus::Pass
                    } else {
                        RowStatus::Fail
                    }
                }
            };
            Ok(ClinicalRow {
                structure: c.structure.clone(),
                criterion: c.label(),
                limit: c.limit,
                achieved,
                status,
            })
        })
        .collect()
}
