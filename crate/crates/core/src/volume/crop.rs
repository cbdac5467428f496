use super::{Grid3, GridGeometry, StructureMask};
use crate::error::{Error, Result};

fn cropped_geometry(g: &GridGeometry, lower: [usize; 3], size: [usize; 3]) -> Result<GridGeometry> {
    for a in 0..3 {
        if size[a] == 0 || lower[a] + size[a] > g.dims[a] {
            return Err(Error::Bounds(format!(
                "crop lower {lower:?} size {size:?} exceeds dims {:?}",
                g.dims
            )));
        }
    }
    GridGeometry::new(
        size,
        g.spacing,
        std::array::from_fn(|a| g.origin[a] + lower[a] as f64 * g.spacing[a]),
    )
}

fn crop_values<T: Copy>(g: &GridGeometry, values: &[T], lower: [usize; 3], size: [usize; 3]) -> Vec<T> {
    let mut out = Vec::with_capacity(size.iter().product());
    for k in lower[2]..lower[2] + size[2] {
        for j in lower[1]..lower[1] + size[1] {
            let start = g.index(lower[0], j, k);
            out.extend_from_slice(&values[start..start + size[0]]);
        }
    }
    out
}

/// Copy the box `[lower, lower + size)` out of `grid`. Out-of-range boxes are an error.
pub fn crop_region(grid: &Grid3, lower: [usize; 3], size: [usize; 3]) -> Result<Grid3> {
    let geometry = cropped_geometry(&grid.geometry, lower, size)?;
    Grid3::new(geometry, crop_values(&grid.geometry, &grid.values, lower, size), grid.unit)
}

pub fn crop_mask(mask: &StructureMask, lower: [usize; 3], size: [usize; 3]) -> Result<StructureMask> {
    let geometry = cropped_geometry(&mask.geometry, lower, size)?;
    StructureMask::new(
        geometry,
        crop_values(&mask.geometry, &mask.bits, lower, size),
        mask.name.clone(),
        mask.role,
    )
}
