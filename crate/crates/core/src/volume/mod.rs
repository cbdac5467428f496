//! Voxel grids, structure masks and their geometry.
//!
//! Physical coordinates follow the voxel-centre convention: voxel `(i, j, k)`
//! sits at `origin + (i + 0.5, j + 0.5, k + 0.5) * spacing` (millimetres).
//! Values are stored flat in x-fastest order.

mod case;
mod crop;
pub mod mvol;
mod resample;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use case::{read_case, write_case, CaseManifest, StructureEntry};
pub use crop::{crop_mask, crop_region};
pub use resample::{resample_mask, trilinear_resample};

/// Names of the organs at risk that every case is expected to carry, in channel order.
pub const CANONICAL_OARS: [&str; 5] = ["esophagus", "cord", "heart", "lung_l", "lung_r"];

/// Conventional name of the planning target volume.
pub const PTV_NAME: &str = "ptv";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
    /// Millimetres; the corner of voxel (0, 0, 0), not its centre.
    pub origin: [f64; 3],
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let g = GridGeometry {
            dims,
            spacing,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    /// Unit spacing, zero origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidGeometry(format!(
                "dims must be >= 1, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive and finite, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "origin must be finite, got {:?}",
                self.origin
            )));
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let rest = index / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Physical position of a voxel centre.
    #[inline]
    pub fn center(&self, ijk: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (ijk[a] as f64 + 0.5) * self.spacing[a])
    }

    /// Continuous voxel index of a physical point (voxel centres land on integers).
    #[inline]
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.origin[a]) / self.spacing[a] - 0.5)
    }

    /// Physical size of the grid along each axis.
    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a])
    }

    /// Same physical box, different sampling.
    pub fn resampled(&self, dims: [usize; 3]) -> Result<Self> {
        let extent = self.extent();
        Self::new(
            dims,
            std::array::from_fn(|a| extent[a] / dims[a].max(1) as f64),
            self.origin,
        )
    }
}

/// Volume of one voxel in cm³.
pub fn voxel_volume_cc(geometry: &GridGeometry) -> f64 {
    geometry.spacing.iter().product::<f64>() / 1000.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "HU")]
    Hu,
    #[serde(rename = "Gy")]
    Gy,
    #[serde(rename = "unitless")]
    Unitless,
}

impl std::fmt::Display for Unit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Unit::Hu => "HU",
            Unit::Gy => "Gy",
            Unit::Unitless => "unitless",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid3 {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
    pub unit: Unit,
}

impl Grid3 {
    pub fn new(geometry: GridGeometry, values: Vec<f64>, unit: Unit) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.voxel_count() {
            return Err(Error::InvalidGeometry(format!(
                "{} values for {} voxels",
                values.len(),
                geometry.voxel_count()
            )));
        }
        Ok(Grid3 {
            geometry,
            values,
            unit,
        })
    }

    pub fn filled(geometry: GridGeometry, value: f64, unit: Unit) -> Self {
        Grid3 {
            values: vec![value; geometry.voxel_count()],
            geometry,
            unit,
        }
    }

    pub fn zeros_like(other: &Grid3, unit: Unit) -> Self {
        Self::filled(other.geometry, 0.0, unit)
    }

    pub fn from_fn(
        geometry: GridGeometry,
        unit: Unit,
        mut f: impl FnMut([usize; 3]) -> f64,
    ) -> Self {
        let values = (0..geometry.voxel_count())
            .map(|idx| f(geometry.coords(idx)))
            .collect();
        Grid3 {
            geometry,
            values,
            unit,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.geometry.index(i, j, k)]
    }

    /// Multiply every voxel by `factor`, keeping the unit.
    pub fn scaled(&self, factor: f64) -> Grid3 {
        Grid3 {
            geometry: self.geometry,
            values: self.values.iter().map(|v| v * factor).collect(),
            unit: self.unit,
        }
    }

    pub fn with_unit(mut self, unit: Unit) -> Grid3 {
        self.unit = unit;
        self
    }

    pub fn expect_unit(&self, unit: Unit) -> Result<()> {
        if self.unit != unit {
            return Err(Error::Unit {
                expected: unit.to_string(),
                found: self.unit.to_string(),
            });
        }
        Ok(())
    }

    pub fn ensure_same_geometry(&self, other: &GridGeometry, what: &str) -> Result<()> {
        if &self.geometry != other {
            return Err(Error::GeometryMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.geometry, other
            )));
        }
        Ok(())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "PTV")]
    Ptv,
    #[serde(rename = "OAR")]
    Oar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureMask {
    pub geometry: GridGeometry,
    pub bits: Vec<bool>,
    pub name: String,
    pub role: Role,
}

impl StructureMask {
    pub fn new(
        geometry: GridGeometry,
        bits: Vec<bool>,
        name: impl Into<String>,
        role: Role,
    ) -> Result<Self> {
        geometry.validate()?;
        if bits.len() != geometry.voxel_count() {
            return Err(Error::InvalidGeometry(format!(
                "{} mask bits for {} voxels",
                bits.len(),
                geometry.voxel_count()
            )));
        }
        Ok(StructureMask {
            geometry,
            bits,
            name: name.into(),
            role,
        })
    }

    pub fn from_fn(
        geometry: GridGeometry,
        name: impl Into<String>,
        role: Role,
        mut f: impl FnMut([usize; 3]) -> bool,
    ) -> Self {
        let bits = (0..geometry.voxel_count())
            .map(|idx| f(geometry.coords(idx)))
            .collect();
        StructureMask {
            geometry,
            bits,
            name: name.into(),
            role,
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Dose values inside the mask, in voxel order.
    pub fn masked_values(&self, grid: &Grid3) -> Vec<f64> {
        self.bits
            .iter()
            .zip(&grid.values)
            .filter_map(|(&b, &v)| b.then_some(v))
            .collect()
    }

    pub fn ensure_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyMask(self.name.clone()));
        }
        Ok(())
    }

    /// Inclusive lower and exclusive upper voxel corner of the set bits.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (idx, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            any = true;
            let c = self.geometry.coords(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a] + 1);
            }
        }
        any.then_some((lo, hi))
    }
}

/// One case: CT, reference dose and delineated structures.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseBundle {
    pub case_id: String,
    pub ct: Grid3,
    pub dose: Grid3,
    pub structures: Vec<StructureMask>,
}

impl CaseBundle {
    pub fn structure(&self, name: &str) -> Option<&StructureMask> {
        self.structures.iter().find(|s| s.name == name)
    }

    pub fn ptv(&self) -> Result<&StructureMask> {
        let mut ptvs = self.structures.iter().filter(|s| s.role == Role::Ptv);
        match (ptvs.next(), ptvs.next()) {
            (Some(p), None) => Ok(p),
            (None, _) => Err(Error::MissingStructure("PTV".into())),
            (Some(_), Some(_)) => Err(Error::config("more than one PTV structure in case")),
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        self.ct.geometry
    }

    /// Checks the post-preprocessing invariants: one geometry, one PTV, nonnegative dose.
    pub fn validate(&self) -> Result<()> {
        let g = self.ct.geometry;
        self.dose.ensure_same_geometry(&g, "dose vs ct")?;
        for s in &self.structures {
            if s.geometry != g {
                return Err(Error::GeometryMismatch(format!(
                    "structure `{}` does not share the CT geometry",
                    s.name
                )));
            }
        }
        self.ptv()?;
        let mut seen = std::collections::HashSet::new();
        for s in &self.structures {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::config(format!("duplicate structure `{}`", s.name)));
            }
        }
        if let Some((index, &value)) = self.dose.values.iter().enumerate().find(|(_, v)| **v < 0.0)
        {
            return Err(Error::NegativeDose { index, value });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voxel_volume_examples() {
        let g = |s| GridGeometry::new([1, 1, 1], s, [0.0; 3]).unwrap();
        assert_eq!(voxel_volume_cc(&g([10.0, 10.0, 10.0])), 1.0);
        assert_eq!(voxel_volume_cc(&g([1.0, 1.0, 1.0])), 0.001);
        assert!((voxel_volume_cc(&g([2.0, 2.0, 2.5])) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(GridGeometry::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(GridGeometry::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(Grid3::new(GridGeometry::unit([2, 2, 2]).unwrap(), vec![0.0; 7], Unit::Gy).is_err());
    }

    #[test]
    fn index_coords_roundtrip() {
        let g = GridGeometry::unit([3, 4, 5]).unwrap();
        for idx in 0..g.voxel_count() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
    }

    #[test]
    fn bounding_box_of_mask() {
        let g = GridGeometry::unit([4, 4, 4]).unwrap();
        let m = StructureMask::from_fn(g, "m", Role::Oar, |[i, j, k]| {
            (1..3).contains(&i) && j == 2 && k == 3
        });
        assert_eq!(m.bounding_box(), Some(([1, 2, 3], [3, 3, 4])));
        let empty = StructureMask::from_fn(g, "e", Role::Oar, |_| false);
        assert_eq!(empty.bounding_box(), None);
    }
}
