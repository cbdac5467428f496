//! Dose objectives with analytic gradients with respect to the predicted dose.
//!
//! Three families are provided:
//!
//! - [`mae_loss_grad`]: mean absolute voxel error.
//! - [`dvh_loss_grad`]: squared error between sigmoid-smoothed DVH vectors of
//!   prediction and reference, averaged over structures and thresholds.
//! - [`moment_loss_grad`]: squared error between per-structure power means
//!   `M_p = (mean(d^p))^(1/p)`, summed over structures and orders.
//!
//! [`total_loss_grad`] combines them as `L_MAE + w_dvh * L_DVH + w_moment * L_moment`.
//! The reference dose is always treated as a constant.

mod dvh;
mod gradcheck;
mod mae;
mod moment;
pub mod sum;
mod total;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Grid3;

pub use dvh::{dvh_loss_grad, dvh_vector_approx, sigmoid, sigmoid_volume_at_dose};
pub use gradcheck::{finite_difference_gradcheck, gradcheck_instance, GradcheckReport};
pub use mae::mae_loss_grad;
pub use moment::{moment, moment_loss_grad, power_mean, MOMENT_EPS};
pub use total::total_loss_grad;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    #[serde(rename = "MAE")]
    Mae,
    #[serde(rename = "DVH")]
    Dvh,
    #[serde(rename = "MOMENT")]
    Moment,
}

impl std::fmt::Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Term::Mae => "MAE",
            Term::Dvh => "DVH",
            Term::Moment => "MOMENT",
        })
    }
}

/// Loss value, gradient with respect to the prediction, and the unweighted value of each term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Grid3,
    pub terms: BTreeMap<Term, f64>,
}

/// What to do when a structure named in a [`MomentSpec`] is not in the case.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingStructure {
    #[default]
    Error,
    Skip,
}

/// Moment orders per structure.
///
/// Structures listed in `per_structure` use their own orders; every other structure
/// of the case uses `default` (set `default` to an empty list to restrict the loss
/// to the listed structures).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MomentSpec {
    pub default: Vec<u32>,
    pub per_structure: BTreeMap<String, Vec<u32>>,
    pub on_missing: MissingStructure,
}

impl Default for MomentSpec {
    fn default() -> Self {
        MomentSpec {
            default: vec![1, 2, 10],
            per_structure: BTreeMap::new(),
            on_missing: MissingStructure::Error,
        }
    }
}

impl MomentSpec {
    pub fn with_orders(mut self, structure: &str, orders: &[u32]) -> Self {
        self.per_structure.insert(structure.to_string(), orders.to_vec());
        self
    }

    pub fn orders_for(&self, structure: &str) -> &[u32] {
        self.per_structure
            .get(structure)
            .map(Vec::as_slice)
            .unwrap_or(&self.default)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, orders: &[u32]| {
            if orders.first() == Some(&0) || orders.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config(format!(
                    "moment orders for {name} must be positive and strictly increasing, got {orders:?}"
                )));
            }
            Ok(())
        };
        check("default", &self.default)?;
        for (name, orders) in &self.per_structure {
            if orders.is_empty() {
                return Err(Error::config(format!("empty moment order list for `{name}`")));
            }
            check(name, orders)?;
        }
        Ok(())
    }
}

/// Dose thresholds of the smoothed DVH.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Thresholds {
    /// `count` bin centres spanning `[min, max]` Gy.
    Uniform { count: usize, min: f64, max: f64 },
    Explicit(Vec<f64>),
}

impl Thresholds {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Thresholds::Uniform { count, min, max } => {
                let w = (max - min) / *count as f64;
                (0..*count).map(|t| min + (t as f64 + 0.5) * w).collect()
            }
            Thresholds::Explicit(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DvhLossSpec {
    pub thresholds: Thresholds,
    /// Sigmoid width in Gy.
    pub beta: f64,
}

impl Default for DvhLossSpec {
    fn default() -> Self {
        DvhLossSpec {
            thresholds: Thresholds::Uniform {
                count: 60,
                min: 0.0,
                max: 70.0,
            },
            beta: 1.0,
        }
    }
}

impl DvhLossSpec {
    /// Default grid, widened to 75 Gy when a criterion above 70 Gy must be covered.
    pub fn covering(max_criterion: f64) -> Self {
        let mut spec = Self::default();
        if max_criterion > 70.0 {
            spec.thresholds = Thresholds::Uniform {
                count: 60,
                min: 0.0,
                max: 75.0,
            };
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be positive, got {}", self.beta)));
        }
        let t = self.thresholds.values();
        if t.is_empty() {
            return Err(Error::config("DVH threshold grid is empty"));
        }
        if t.windows(2).any(|w| !(w[0] < w[1])) || t.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("DVH thresholds must be finite and strictly increasing"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub w_dvh: f64,
    pub w_moment: f64,
    pub dvh: DvhLossSpec,
    pub moments: MomentSpec,
    pub terms: BTreeSet<Term>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_dvh: 10.0,
            w_moment: 0.01,
            dvh: DvhLossSpec::default(),
            moments: MomentSpec::default(),
            terms: [Term::Mae, Term::Moment].into(),
        }
    }
}

impl LossConfig {
    pub fn with_terms(terms: &[Term]) -> Self {
        LossConfig {
            terms: terms.iter().copied().collect(),
            ..Self::default()
        }
    }

    pub fn mae() -> Self {
        Self::with_terms(&[Term::Mae])
    }

    pub fn mae_dvh() -> Self {
        Self::with_terms(&[Term::Mae, Term::Dvh])
    }

    pub fn mae_moment() -> Self {
        Self::with_terms(&[Term::Mae, Term::Moment])
    }

    pub fn weight(&self, term: Term) -> f64 {
        match term {
            Term::Mae => 1.0,
            Term::Dvh => self.w_dvh,
            Term::Moment => self.w_moment,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::config("no loss term enabled"));
        }
        if !(self.w_dvh >= 0.0) || !(self.w_moment >= 0.0) {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        if self.terms.contains(&Term::Dvh) {
            self.dvh.validate()?;
        }
        if self.terms.contains(&Term::Moment) {
            self.moments.validate()?;
        }
        Ok(())
    }
}
