use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{voxel_volume_cc, Grid3, GridGeometry, StructureMask};

/// Cumulative DVH: `fractions[i]` is the fraction of the structure receiving at least `edges[i]` Gy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DvhCurve {
    pub structure: String,
    pub edges: Vec<f64>,
    pub fractions: Vec<f64>,
}

/// Masked dose values, largest first.
pub fn sorted_desc(dose: &Grid3, mask: &StructureMask) -> Result<Vec<f64>> {
    dose.ensure_same_geometry(&mask.geometry, &mask.name)?;
    mask.ensure_nonempty()?;
    let mut v = mask.masked_values(dose);
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

/// Exact cumulative DVH on edges `0, w, 2w, ...` up to the first edge above the maximum dose.
pub fn exact_dvh_curve(dose: &Grid3, mask: &StructureMask, bin_width: f64) -> Result<DvhCurve> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::config("DVH bin width must be positive"));
    }
    let mut asc = sorted_desc(dose, mask)?;
    asc.reverse();
    let n = asc.len() as f64;
    let max = *asc.last().expect("nonempty");
    let bins = (max.max(0.0) / bin_width).floor() as usize + 2;
    let mut edges = Vec::with_capacity(bins);
    let mut fractions = Vec::with_capacity(bins);
    for b in 0..bins {
        let e = b as f64 * bin_width;
        let below = asc.partition_point(|&d| d < e);
        edges.push(e);
        fractions.push((asc.len() - below) as f64 / n);
    }
    Ok(DvhCurve {
        structure: mask.name.clone(),
        edges,
        fractions,
    })
}

fn kth_largest(sorted: &[f64], k: usize) -> f64 {
    sorted[k.clamp(1, sorted.len()) - 1]
}

/// Largest dose received by at least `percent`% of the structure (voxel resolution, no interpolation).
pub fn dose_at_percent(dose: &Grid3, mask: &StructureMask, percent: f64) -> Result<f64> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::config(format!("percent must be in (0, 100], got {percent}")));
    }
    let v = sorted_desc(dose, mask)?;
    Ok(dose_at_percent_sorted(&v, percent))
}

pub(crate) fn dose_at_percent_sorted(sorted: &[f64], percent: f64) -> f64 {
    let k = (percent * sorted.len() as f64 / 100.0).ceil() as usize;
    kth_largest(sorted, k)
}

/// Minimum dose within the hottest `vol_cc` cm³ of the structure.
pub fn dose_at_cc(dose: &Grid3, mask: &StructureMask, vol_cc: f64, geometry: &GridGeometry) -> Result<f64> {
    if !(vol_cc > 0.0) {
        return Err(Error::config(format!("volume must be positive, got {vol_cc}")));
    }
    let v = sorted_desc(dose, mask)?;
    Ok(dose_at_cc_sorted(&v, vol_cc, geometry))
}

pub(crate) fn dose_at_cc_sorted(sorted: &[f64], vol_cc: f64, geometry: &GridGeometry) -> f64 {
    let k = ((vol_cc / voxel_volume_cc(geometry)).round() as usize).max(1);
    kth_largest(sorted, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Role, Unit};

    fn line(v: Vec<f64>, spacing: f64) -> (Grid3, StructureMask) {
        let g = GridGeometry::new([v.len(), 1, 1], [spacing; 3], [0.0; 3]).unwrap();
        (
            Grid3::new(g, v, Unit::Gy).unwrap(),
            StructureMask::from_fn(g, "s", Role::Oar, |_| true),
        )
    }

    fn tens() -> Vec<f64> {
        (1..=10).map(|i| 10.0 * i as f64).collect()
    }

    #[test]
    fn curve_examples() {
        let (d, m) = line(vec![60.0; 5], 1.0);
        let c = exact_dvh_curve(&d, &m, 1.0).unwrap();
        for (e, f) in c.edges.iter().zip(&c.fractions) {
            assert_eq!(*f, if *e <= 60.0 { 1.0 } else { 0.0 });
        }
        assert_eq!(c.fractions[0], 1.0);
        assert_eq!(*c.fractions.last().unwrap(), 0.0);

        let (d, m) = line(tens(), 1.0);
        let c = exact_dvh_curve(&d, &m, 10.0).unwrap();
        assert_eq!(c.edges[6], 60.0);
        assert_eq!(c.fractions[6], 0.5);
    }

    #[test]
    fn percent_examples() {
        let (d, m) = line(vec![42.0; 7], 1.0);
        for x in [0.5, 50.0, 99.0, 100.0] {
            assert_eq!(dose_at_percent(&d, &m, x).unwrap(), 42.0);
        }
        let (d, m) = line(tens(), 1.0);
        assert_eq!(dose_at_percent(&d, &m, 50.0).unwrap(), 60.0);
        assert_eq!(dose_at_percent(&d, &m, 100.0).unwrap(), 10.0);
        assert_eq!(dose_at_percent(&d, &m, 1e-9).unwrap(), 100.0);
        assert!(dose_at_percent(&d, &m, 0.0).is_err());
        assert!(dose_at_percent(&d, &m, 100.5).is_err());
    }

    #[test]
    fn cc_examples() {
        // 8 voxels of 1 cc each.
        let (d, m) = line((1..=8).map(|i| 10.0 * i as f64).collect(), 10.0);
        assert_eq!(dose_at_cc(&d, &m, 2.0, &d.geometry).unwrap(), 70.0);
        assert_eq!(dose_at_cc(&d, &m, 0.1, &d.geometry).unwrap(), 80.0);
        let (d, m) = line(vec![33.0; 9], 3.0);
        assert_eq!(dose_at_cc(&d, &m, 0.05, &d.geometry).unwrap(), 33.0);
    }

    #[test]
    fn empty_mask_errors() {
        let (d, _) = line(vec![1.0, 2.0], 1.0);
        let e = StructureMask::from_fn(d.geometry, "e", Role::Oar, |_| false);
        assert!(matches!(exact_dvh_curve(&d, &e, 1.0), Err(Error::EmptyMask(_))));
        assert!(dose_at_percent(&d, &e, 50.0).is_err());
        assert!(dose_at_cc(&d, &e, 0.1, &d.geometry).is_err());
    }
}
