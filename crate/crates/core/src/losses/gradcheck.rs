use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::LossValueGrad;
use crate::error::{Error, Result};
use crate::rng;
use crate::volume::{Grid3, GridGeometry, Role, StructureMask, Unit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub samples: usize,
    pub h: f64,
    pub seed: u64,
    /// Voxel (or parameter) index with the largest relative error.
    pub worst_index: Option<usize>,
    /// Samples dropped because the central difference straddled a kink.
    #[serde(default)]
    pub skipped: usize,
}

/// Compare the analytic gradient of `loss` at `pred` with central differences on
/// `samples` randomly chosen voxels.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_difference_gradcheck<F>(
    loss: F,
    pred: &Grid3,
    h: f64,
    samples: usize,
    seed: u64,
) -> Result<GradcheckReport>
where
    F: Fn(&Grid3) -> Result<LossValueGrad>,
{
    if !(h > 0.0) {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let analytic = loss(pred)?.grad;
    let n = pred.len();
    let mut rng = rng::seeded(seed);
    let voxels = sample(&mut rng, n, samples.min(n));
    let mut probe = pred.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst_index = None;
    for j in voxels.iter() {
        let x = pred.values[j];
        probe.values[j] = x + h;
        let up = loss(&probe)?.value;
        probe.values[j] = x - h;
        let down = loss(&probe)?.value;
        probe.values[j] = x;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.values[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if rel > max_rel_err || worst_index.is_none() {
            max_rel_err = max_rel_err.max(rel);
            worst_index = Some(j);
        }
    }
    Ok(GradcheckReport {
        max_rel_err,
        samples: voxels.len(),
        h,
        seed,
        worst_index,
        skipped: 0,
    })
}

/// Random prediction/reference pair with a PTV block and a striped OAR on a 2 mm grid.
///
/// Predictions are uniform in [1, 70) Gy and every reference voxel sits 2 to 20 Gy away
/// from its prediction, so no finite-difference step below 1 Gy crosses an MAE kink.
pub fn gradcheck_instance(dims: [usize; 3], seed: u64) -> Result<(Grid3, Grid3, Vec<StructureMask>)> {
    let g = GridGeometry::new(dims, [2.0; 3], [0.0; 3])?;
    let mut r = rng::seeded(seed);
    let pred = Grid3::from_fn(g, Unit::Gy, |_| r.gen_range(1.0..70.0));
    let values = pred
        .values
        .iter()
        .map(|&p| {
            let off = r.gen_range(2.0..20.0);
            if p > 35.0 {
                p - off
            } else {
                p + off
            }
        })
        .collect();
    let reference = Grid3::new(g, values, Unit::Gy)?;
    let [d0, d1, _] = dims;
    let s = vec![
        StructureMask::from_fn(g, "ptv", Role::Ptv, |[i, j, _]| 2 * i < d0 && 8 * j < 5 * d1),
        StructureMask::from_fn(g, "cord", Role::Oar, |[i, _, k]| 8 * i >= 3 * d0 && k % 2 == 0),
    ];
    Ok((pred, reference, s))
}
