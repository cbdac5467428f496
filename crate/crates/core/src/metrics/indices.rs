use super::dvh::{dose_at_percent_sorted, sorted_desc};
use crate::error::{Error, Result};
use crate::volume::{Grid3, StructureMask};

/// `(D2 - D98) / D50` within the target.
pub fn homogeneity_index(dose: &Grid3, ptv: &StructureMask) -> Result<f64> {
    let v = sorted_desc(dose, ptv)?;
    let d50 = dose_at_percent_sorted(&v, 50.0);
    if d50 == 0.0 {
        return Err(Error::Numerical("homogeneity index undefined: D50 is zero".into()));
    }
    Ok((dose_at_percent_sorted(&v, 2.0) - dose_at_percent_sorted(&v, 98.0)) / d50)
}

/// Paddick conformity index `TV_PIV² / (TV · PIV)` for the isodose `level` (Gy).
///
/// PIV counts every voxel of the grid at or above `level`; the index is 0 when PIV is empty.
pub fn paddick_ci(dose: &Grid3, ptv: &StructureMask, level: f64) -> Result<f64> {
    dose.ensure_same_geometry(&ptv.geometry, &ptv.name)?;
    ptv.ensure_nonempty()?;
    let mut tv = 0usize;
    let mut piv = 0usize;
    let mut tv_piv = 0usize;
    for (&b, &d) in ptv.bits.iter().zip(&dose.values) {
        let hot = d >= level;
        tv += b as usize;
        piv += hot as usize;
        tv_piv += (b && hot) as usize;
    }
    if piv == 0 {
        return Ok(0.0);
    }
    let tv_piv = tv_piv as f64;
    Ok(tv_piv * tv_piv / (tv as f64 * piv as f64))
}
