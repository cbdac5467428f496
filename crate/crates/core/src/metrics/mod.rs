//! Exact evaluation metrics: DVH curves and dose statistics, dose score, DVH score,
//! homogeneity and Paddick conformity indices, and clinical criteria.

mod clinical;
mod dvh;
mod indices;
mod report;
mod scores;

pub use clinical::{
    clinical_report, default_clinical_criteria, resolve_structure, ClinicalCriterion, ClinicalKind,
    ClinicalRow, MaxDoseMode, RowStatus, LUNGS_MINUS_TARGET,
};
pub use dvh::{dose_at_cc, dose_at_percent, exact_dvh_curve, sorted_desc, DvhCurve};
pub use indices::{homogeneity_index, paddick_ci};
pub use report::{evaluate_case, write_csv, DvhCurvePair, EvalOptions, MetricsReport};
pub use scores::{
    canonical_criteria, dose_score, dvh_errors, dvh_score, CriterionError, CriterionKind, DvhCriterion,
};
