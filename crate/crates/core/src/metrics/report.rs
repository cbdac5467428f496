use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::clinical::{clinical_report, default_clinical_criteria, ClinicalRow, MaxDoseMode};
use super::dvh::exact_dvh_curve;
use super::indices::{homogeneity_index, paddick_ci};
use super::scores::{dose_score, dvh_score, CriterionError};
use crate::error::{Error, Result};
use crate::volume::{CaseBundle, Grid3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Gy; also the isodose level of the conformity index.
    pub prescription: f64,
    pub max_mode: MaxDoseMode,
    /// Bin width of exported DVH curves (Gy); `None` skips the export.
    pub dvh_bin_width: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            prescription: 60.0,
            max_mode: MaxDoseMode::Absolute,
            dvh_bin_width: Some(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvhCurvePair {
    pub structure: String,
    pub edges: Vec<f64>,
    #[serde(rename = "ref")]
    pub reference: Vec<f64>,
    pub pred: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub case_id: String,
    pub prescription: f64,
    pub dose_score: f64,
    pub dvh_score: f64,
    pub criteria: Vec<CriterionError>,
    pub hi_ref: Option<f64>,
    pub hi_pred: Option<f64>,
    pub hi_error: Option<f64>,
    pub pci_ref: f64,
    pub pci_pred: f64,
    pub pci_error: f64,
    /// Clinical criteria evaluated on the prediction.
    pub clinical: Vec<ClinicalRow>,
    #[serde(default)]
    pub dvh_curves: Vec<DvhCurvePair>,
}

/// Full comparison of a predicted dose with the case's reference dose.
pub fn evaluate_case(pred: &Grid3, case: &CaseBundle, opts: &EvalOptions) -> Result<MetricsReport> {
    let reference = &case.dose;
    pred.ensure_same_geometry(&reference.geometry, "prediction vs reference")?;
    let ptv = case.ptv()?;
    let (dvh_score, criteria) = dvh_score(pred, reference, &case.structures)?;
    let hi_ref = homogeneity_index(reference, ptv).ok();
    let hi_pred = homogeneity_index(pred, ptv).ok();
    let pci_ref = paddick_ci(reference, ptv, opts.prescription)?;
    let pci_pred = paddick_ci(pred, ptv, opts.prescription)?;
    let mut dvh_curves = Vec::new();
    if let Some(w) = opts.dvh_bin_width {
        for s in case.structures.iter().filter(|s| !s.is_empty()) {
            let r = exact_dvh_curve(reference, s, w)?;
            let p = exact_dvh_curve(pred, s, w)?;
            let len = r.edges.len().max(p.edges.len());
            let pad = |mut v: Vec<f64>| {
                v.resize(len, 0.0);
                v
            };
            dvh_curves.push(DvhCurvePair {
                structure: s.name.clone(),
                edges: (0..len).map(|i| i as f64 * w).collect(),
                reference: pad(r.fractions),
                pred: pad(p.fractions),
            });
        }
    }
    Ok(MetricsReport {
        case_id: case.case_id.clone(),
        prescription: opts.prescription,
        dose_score: dose_score(pred, reference)?,
        dvh_score,
        criteria,
        hi_error: hi_ref.zip(hi_pred).map(|(r, p)| (r - p).abs()),
        hi_ref,
        hi_pred,
        pci_error: (pci_ref - pci_pred).abs(),
        pci_ref,
        pci_pred,
        clinical: clinical_report(
            pred,
            &case.structures,
            &default_clinical_criteria(opts.prescription),
            opts.max_mode,
        )?,
        dvh_curves,
    })
}

/// CSV with columns `case_id,structure,criterion,ref,pred,abs_error`.
pub fn write_csv(reports: &[MetricsReport], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("case_id,structure,criterion,ref,pred,abs_error\n");
    for r in reports {
        for c in &r.criteria {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.case_id, c.structure, c.criterion, c.reference, c.pred, c.abs_error
            )
            .expect("string write");
        }
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
