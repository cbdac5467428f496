//! Input pipeline: CT intensity normalisation, one-hot structure channels,
//! PTV-mean dose normalisation and the mask-guided crop/resample to network resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::sum::Neumaier;
use crate::volume::{
    crop_mask, crop_region, resample_mask, trilinear_resample, CaseBundle, Grid3, GridGeometry,
    Role, StructureMask, Unit,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub hu_clip: (f64, f64),
    pub crop_size: [usize; 3],
    pub net_dims: [usize; 3],
    /// Gy.
    pub prescription: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            hu_clip: (-1024.0, 3071.0),
            crop_size: [300, 300, 128],
            net_dims: [128, 128, 128],
            prescription: 60.0,
        }
    }
}

impl PreprocessConfig {
    /// Desk-scale variant: same pipeline, 32³ network grid.
    pub fn desk() -> Self {
        PreprocessConfig {
            net_dims: [32, 32, 32],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hu_clip.0 < self.hu_clip.1) {
            return Err(Error::config(format!("hu_clip low must be < high, got {:?}", self.hu_clip)));
        }
        if self.crop_size.contains(&0) || self.net_dims.contains(&0) {
            return Err(Error::config("crop_size and net_dims must be positive"));
        }
        if !(self.prescription > 0.0) {
            return Err(Error::config("prescription must be positive"));
        }
        Ok(())
    }
}

/// Clip HU to `cfg.hu_clip` and map linearly onto [0, 1].
pub fn clip_rescale_ct(ct: &Grid3, cfg: &PreprocessConfig) -> Result<Grid3> {
    ct.expect_unit(Unit::Hu)?;
    cfg.validate()?;
    let (lo, hi) = cfg.hu_clip;
    let values = ct.values.iter().map(|&v| (v.clamp(lo, hi) - lo) / (hi - lo)).collect();
    Grid3::new(ct.geometry, values, Unit::Unitless)
}

/// Independent binary channels, one per structure name, all on one geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStack {
    pub geometry: GridGeometry,
    pub names: Vec<String>,
    pub channels: Vec<Vec<bool>>,
}

impl ChannelStack {
    pub fn channel(&self, name: &str) -> Option<&[bool]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.channels[i].as_slice())
    }
}

/// One channel per name in `canonical_order` (all-zero when the case lacks that
/// structure), followed by the PTV channel.
pub fn one_hot_structures(structures: &[StructureMask], canonical_order: &[&str]) -> Result<ChannelStack> {
    let mut seen = std::collections::HashSet::new();
    for s in structures {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::config(format!("duplicate structure `{}`", s.name)));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for name in canonical_order {
        if !seen.insert(*name) {
            return Err(Error::config(format!("duplicate channel name `{name}`")));
        }
    }
    let geometry = structures
        .first()
        .map(|s| s.geometry)
        .ok_or_else(|| Error::config("no structures to encode"))?;
    if let Some(s) = structures.iter().find(|s| s.geometry != geometry) {
        return Err(Error::GeometryMismatch(format!("structure `{}`", s.name)));
    }
    let mut names = Vec::new();
    let mut channels = Vec::new();
    for &name in canonical_order {
        names.push(name.to_string());
        channels.push(match structures.iter().find(|s| s.name == name) {
            Some(s) => s.bits.clone(),
            None => vec![false; geometry.voxel_count()],
        });
    }
    let ptv = structures
        .iter()
        .find(|s| s.role == Role::Ptv)
        .ok_or_else(|| Error::MissingStructure("PTV".into()))?;
    names.push(ptv.name.clone());
    channels.push(ptv.bits.clone());
    Ok(ChannelStack {
        geometry,
        names,
        channels,
    })
}

/// Mean of `grid` over the voxels of `mask`.
pub fn masked_mean(grid: &Grid3, mask: &StructureMask) -> Result<f64> {
    mask.ensure_nonempty()?;
    grid.ensure_same_geometry(&mask.geometry, "mask")?;
    let mut acc = Neumaier::default();
    let mut n = 0usize;
    for (&b, &v) in mask.bits.iter().zip(&grid.values) {
        if b {
            acc.add(v);
            n += 1;
        }
    }
    Ok(acc.total() / n as f64)
}

/// Scale the whole dose grid so the PTV mean equals `prescription`. Returns the scale applied.
pub fn normalize_ptv_mean(dose: &Grid3, ptv: &StructureMask, prescription: f64) -> Result<(Grid3, f64)> {
    dose.expect_unit(Unit::Gy)?;
    if ptv.is_empty() {
        return Err(Error::Normalization(format!("PTV `{}` is empty", ptv.name)));
    }
    let mean = masked_mean(dose, ptv)?;
    if !(mean > 0.0) {
        return Err(Error::Normalization(format!("PTV mean dose is {mean}")));
    }
    let scale = prescription / mean;
    Ok((dose.scaled(scale), scale))
}

/// Crop window of `window` voxels along each axis, centred on the union bounding box of
/// `structures` and shifted inward at the volume borders.
pub fn crop_window(structures: &[StructureMask], dims: [usize; 3], window: [usize; 3]) -> Result<[usize; 3]> {
    let boxes: Vec<_> = structures
        .iter()
        .filter_map(|s| s.bounding_box().map(|b| (s, b)))
        .collect();
    if boxes.is_empty() {
        return Err(Error::config("no nonempty structure to guide the crop"));
    }
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (_, (l, h)) in &boxes {
        for a in 0..3 {
            lo[a] = lo[a].min(l[a]);
            hi[a] = hi[a].max(h[a]);
        }
    }
    let lower: [usize; 3] = std::array::from_fn(|a| {
        let center = (lo[a] + hi[a]) / 2;
        center.saturating_sub(window[a] / 2).min(dims[a] - window[a])
    });
    for (s, (l, h)) in &boxes {
        if (0..3).any(|a| l[a] < lower[a] || h[a] > lower[a] + window[a]) {
            return Err(Error::CropInfeasible {
                structure: s.name.clone(),
                window,
                extent: std::array::from_fn(|a| h[a] - l[a]),
            });
        }
    }
    Ok(lower)
}

/// Resample dose onto the CT, crop around the structures, resample everything to
/// `cfg.net_dims` and normalise the PTV mean dose to `cfg.prescription`.
///
/// A crop size larger than the volume along an axis is reduced to the volume size.
pub fn prepare_case(raw: &CaseBundle, cfg: &PreprocessConfig) -> Result<CaseBundle> {
    cfg.validate()?;
    raw.ct.expect_unit(Unit::Hu)?;
    let g = raw.ct.geometry;
    for s in &raw.structures {
        if s.geometry != g {
            return Err(Error::GeometryMismatch(format!(
                "structure `{}` does not share the CT geometry",
                s.name
            )));
        }
    }
    let ptv = raw.ptv()?;
    let dose = trilinear_resample(&raw.dose, &g)?;
    let window: [usize; 3] = std::array::from_fn(|a| cfg.crop_size[a].min(g.dims[a]));
    let lower = crop_window(&raw.structures, g.dims, window)?;

    let ct = crop_region(&raw.ct, lower, window)?;
    let dose = crop_region(&dose, lower, window)?;
    let target = ct.geometry.resampled(cfg.net_dims)?;
    let ct = trilinear_resample(&ct, &target)?;
    let dose = trilinear_resample(&dose, &target)?;
    let structures = raw
        .structures
        .iter()
        .map(|s| resample_mask(&crop_mask(s, lower, window)?, &target))
        .collect::<Result<Vec<_>>>()?;
    let ptv = structures
        .iter()
        .find(|s| s.name == ptv.name)
        .expect("ptv survives cropping");
    let (dose, _) = normalize_ptv_mean(&dose, ptv, cfg.prescription)?;
    Ok(CaseBundle {
        case_id: raw.case_id.clone(),
        ct,
        dose,
        structures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(dims: [usize; 3]) -> GridGeometry {
        GridGeometry::new(dims, [2.0, 2.0, 3.0], [0.0; 3]).unwrap()
    }

    #[test]
    fn ct_rescale_examples() {
        let g = geom([3, 1, 1]);
        let ct = Grid3::new(g, vec![-1024.0, 3071.0, 1023.5], Unit::Hu).unwrap();
        let out = clip_rescale_ct(&ct, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.values, vec![0.0, 1.0, 0.5]);
        assert_eq!(out.unit, Unit::Unitless);
        let gy = ct.clone().with_unit(Unit::Gy);
        assert!(matches!(clip_rescale_ct(&gy, &PreprocessConfig::default()), Err(Error::Unit { .. })));
    }

    proptest! {
        #[test]
        fn ct_rescale_is_monotone_into_unit_interval(mut v in prop::collection::vec(-5000.0f64..5000.0, 1..50)) {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let g = geom([v.len(), 1, 1]);
            let out = clip_rescale_ct(&Grid3::new(g, v, Unit::Hu).unwrap(), &PreprocessConfig::default()).unwrap();
            prop_assert!(out.values.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!(out.values.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn normalization_is_idempotent(v in prop::collection::vec(0.1f64..80.0, 8), rx in 10.0f64..80.0) {
            let g = geom([8, 1, 1]);
            let dose = Grid3::new(g, v, Unit::Gy).unwrap();
            let ptv = StructureMask::from_fn(g, "ptv", Role::Ptv, |[i, _, _]| i % 2 == 0);
            let (once, _) = normalize_ptv_mean(&dose, &ptv, rx).unwrap();
            prop_assert!((masked_mean(&once, &ptv).unwrap() - rx).abs() <= 1e-9 * rx);
            let (twice, _) = normalize_ptv_mean(&once, &ptv, rx).unwrap();
            for (a, b) in once.values.iter().zip(&twice.values) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn normalization_examples() {
        let g = geom([4, 1, 1]);
        let ptv = StructureMask::new(g, vec![true, true, false, false], "ptv", Role::Ptv).unwrap();
        let dose = Grid3::new(g, vec![20.0, 40.0, 10.0, 0.0], Unit::Gy).unwrap();
        let (out, scale) = normalize_ptv_mean(&dose, &ptv, 60.0).unwrap();
        assert_eq!(scale, 2.0);
        assert_eq!(out.values, vec![40.0, 80.0, 20.0, 0.0]);

        let dose = Grid3::new(g, vec![60.0, 60.0, 12.0, 0.0], Unit::Gy).unwrap();
        let (out, scale) = normalize_ptv_mean(&dose, &ptv, 60.0).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(out, dose);

        let dose = Grid3::new(g, vec![40.0, 50.0, 30.0, 0.0], Unit::Gy).unwrap();
        let (out, scale) = normalize_ptv_mean(&dose, &ptv, 60.0).unwrap();
        assert!((scale - 4.0 / 3.0).abs() < 1e-15);
        assert!((out.values[2] - 40.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_errors() {
        let g = geom([2, 1, 1]);
        let empty = StructureMask::new(g, vec![false, false], "ptv", Role::Ptv).unwrap();
        let ptv = StructureMask::new(g, vec![true, false], "ptv", Role::Ptv).unwrap();
        let dose = Grid3::filled(g, 0.0, Unit::Gy);
        assert!(matches!(normalize_ptv_mean(&dose, &empty, 60.0), Err(Error::Normalization(_))));
        assert!(matches!(normalize_ptv_mean(&dose, &ptv, 60.0), Err(Error::Normalization(_))));
    }

    fn structures(g: GridGeometry) -> Vec<StructureMask> {
        let names = ["esophagus", "cord", "heart", "lung_l", "lung_r"];
        let mut out: Vec<_> = names
            .iter()
            .enumerate()
            .map(|(n, name)| StructureMask::from_fn(g, *name, Role::Oar, |[i, j, _]| i == n || j == n))
            .collect();
        out.push(StructureMask::from_fn(g, "ptv", Role::Ptv, |[i, j, k]| i + j + k == 6));
        out
    }

    #[test]
    fn one_hot_channels() {
        let g = geom([6, 6, 6]);
        let all = structures(g);
        let stack = one_hot_structures(&all, &crate::volume::CANONICAL_OARS).unwrap();
        assert_eq!(stack.names.len(), 6);
        for (name, ch) in stack.names.iter().zip(&stack.channels) {
            let mask = all.iter().find(|s| &s.name == name).unwrap();
            assert_eq!(ch.iter().filter(|&&b| b).count(), mask.count());
        }
        // Overlapping voxel (0, 1, *) lies in both esophagus and cord.
        let idx = g.index(0, 1, 0);
        assert!(stack.channel("esophagus").unwrap()[idx]);
        assert!(stack.channel("cord").unwrap()[idx]);

        let no_heart: Vec<_> = all.iter().filter(|s| s.name != "heart").cloned().collect();
        let stack = one_hot_structures(&no_heart, &crate::volume::CANONICAL_OARS).unwrap();
        assert!(stack.channel("heart").unwrap().iter().all(|&b| !b));

        let mut dup = all.clone();
        dup.push(all[0].clone());
        assert!(matches!(
            one_hot_structures(&dup, &crate::volume::CANONICAL_OARS),
            Err(Error::Config(_))
        ));
    }

    fn raw_case(dims: [usize; 3], ptv_at: impl Fn([usize; 3]) -> bool) -> CaseBundle {
        let g = geom(dims);
        let ct = Grid3::from_fn(g, Unit::Hu, |[i, _, _]| i as f64 * 10.0 - 500.0);
        let dose_g = GridGeometry::new([dims[0] / 2, dims[1] / 2, dims[2] / 2], [4.0, 4.0, 6.0], [0.0; 3]).unwrap();
        let dose = Grid3::from_fn(dose_g, Unit::Gy, |[i, j, k]| 10.0 + (i + j + k) as f64);
        let ptv = StructureMask::from_fn(g, "ptv", Role::Ptv, ptv_at);
        let cord = StructureMask::from_fn(g, "cord", Role::Oar, |[i, j, k]| i == dims[0] / 2 && j == dims[1] - 3 && (1..6).contains(&k));
        CaseBundle {
            case_id: "raw".into(),
            ct,
            dose,
            structures: vec![ptv, cord],
        }
    }

    #[test]
    fn prepare_case_geometry_and_containment() {
        let raw = raw_case([24, 24, 16], |[i, j, k]| {
            (10..14).contains(&i) && (10..14).contains(&j) && (6..10).contains(&k)
        });
        let cfg = PreprocessConfig {
            crop_size: [20, 20, 12],
            net_dims: [8, 8, 8],
            ..PreprocessConfig::default()
        };
        let out = prepare_case(&raw, &cfg).unwrap();
        assert_eq!(out.ct.geometry.dims, [8, 8, 8]);
        assert_eq!(out.dose.geometry, out.ct.geometry);
        out.validate().unwrap();
        let mean = masked_mean(&out.dose, out.ptv().unwrap()).unwrap();
        assert!((mean - 60.0).abs() < 1e-9 * 60.0);
        // Union box fits inside the crop window.
        let lower = crop_window(&raw.structures, [24, 24, 16], [20, 20, 12]).unwrap();
        for s in &raw.structures {
            let (lo, hi) = s.bounding_box().unwrap();
            for a in 0..3 {
                assert!(lo[a] >= lower[a] && hi[a] <= lower[a] + cfg.crop_size[a]);
            }
        }
    }

    #[test]
    fn edge_ptv_shifts_window_inward() {
        let raw = raw_case([24, 24, 16], |[i, j, k]| i < 3 && (10..14).contains(&j) && k < 2);
        let window = [12, 12, 8];
        let lower = crop_window(&raw.structures[..1], [24, 24, 16], window).unwrap();
        assert_eq!(lower[0], 0);
        assert_eq!(lower[2], 0);
        for a in 0..3 {
            assert!(lower[a] + window[a] <= [24, 24, 16][a]);
        }
    }

    #[test]
    fn infeasible_crop_names_structure() {
        let raw = raw_case([24, 24, 16], |[i, j, k]| i < 20 && j == 5 && k == 5);
        let cfg = PreprocessConfig {
            crop_size: [10, 24, 16],
            net_dims: [8, 8, 8],
            ..PreprocessConfig::default()
        };
        match prepare_case(&raw, &cfg) {
            Err(Error::CropInfeasible { structure, .. }) => assert_eq!(structure, "ptv"),
            other => panic!("expected crop error, got {other:?}"),
        }
    }
}
