use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng;
use crate::volume::{Grid3, GridGeometry, Unit};

/// Slack allowed in `f((x+y)/2) <= (f(x)+f(y))/2`.
pub const MIDPOINT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub pairs: usize,
    pub violations: usize,
    /// Largest `f(mid) - (f(x)+f(y))/2` seen, violating or not.
    pub max_gap: f64,
    pub worst_pair: Option<usize>,
}

fn sample_dose(r: &mut rng::Rng, g: &GridGeometry, dose_max: f64, flat: bool) -> Grid3 {
    if flat {
        // Near-uniform doses reach the saturated regions of threshold-based losses.
        let level = r.gen_range(0.0..dose_max);
        let jitter = 0.05 * dose_max;
        Grid3::from_fn(*g, Unit::Gy, |_| (level + r.gen_range(-jitter..jitter)).max(0.0))
    } else {
        Grid3::from_fn(*g, Unit::Gy, |_| r.gen_range(0.0..dose_max))
    }
}

/// Check midpoint convexity of `f` on `n_pairs` seeded pairs of nonnegative doses in
/// `[0, dose_max]`. Pairs alternate between independent voxel doses and near-uniform doses.
pub fn midpoint_convexity_probe<F>(f: F, geometry: &GridGeometry, n_pairs: usize, seed: u64, dose_max: f64) -> Result<ConvexityReport>
where
    F: Fn(&Grid3) -> Result<f64>,
{
    let mut r = rng::seeded(seed);
    let mut report = ConvexityReport {
        pairs: n_pairs,
        violations: 0,
        max_gap: f64::NEG_INFINITY,
        worst_pair: None,
    };
    for i in 0..n_pairs {
        let flat = i % 2 == 1;
        let x = sample_dose(&mut r, geometry, dose_max, flat);
        let y = sample_dose(&mut r, geometry, dose_max, flat);
        let gap = midpoint_gap(&f, &x, &y)?;
        if gap > report.max_gap {
            report.max_gap = gap;
            report.worst_pair = Some(i);
        }
        if gap > MIDPOINT_TOL {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// `f((x+y)/2) - (f(x)+f(y))/2`; positive means the midpoint inequality fails.
pub fn midpoint_gap<F>(f: &F, x: &Grid3, y: &Grid3) -> Result<f64>
where
    F: Fn(&Grid3) -> Result<f64>,
{
    let mid = Grid3::new(
        x.geometry,
        x.values.iter().zip(&y.values).map(|(a, b)| 0.5 * (a + b)).collect(),
        Unit::Gy,
    )?;
    Ok(f(&mid)? - 0.5 * (f(x)? + f(y)?))
}

/// A reference and two doses on which the sigmoid-DVH loss breaks midpoint convexity:
/// reference 0 Gy, `x` = 60 Gy and `y` = 200 Gy uniform. Every threshold is already
/// saturated at the midpoint (130 Gy) and at `y`, while `x` still sits below the top thresholds.
pub fn dvh_nonconvexity_witness(geometry: &GridGeometry) -> (Grid3, Grid3, Grid3) {
    (
        Grid3::filled(*geometry, 0.0, Unit::Gy),
        Grid3::filled(*geometry, 60.0, Unit::Gy),
        Grid3::filled(*geometry, 200.0, Unit::Gy),
    )
}
