//! Deterministic synthetic thorax phantoms.
//!
//! Geometry is defined in millimetres relative to the field of view, so a phantom keeps
//! the same anatomy at any grid resolution. The reference dose is the prescription inside
//! the PTV, falling off exponentially with distance outside it, plus a constant scatter
//! floor and a small seeded ripple; it is then rescaled so the PTV mean equals the
//! prescription.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::normalize_ptv_mean;
use crate::rng;
use crate::volume::{write_case, CaseBundle, Grid3, GridGeometry, Role, StructureMask, Unit, PTV_NAME};

/// Field of view of the default phantom along each axis (mm).
pub const DEFAULT_FOV_MM: f64 = 240.0;

const MAX_ATTEMPTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Gy.
    pub prescription: f64,
    /// Exponential dose falloff length outside the PTV (mm).
    pub falloff_mm: f64,
    /// Constant dose floor as a fraction of the prescription.
    pub scatter_fraction: f64,
    /// Relative amplitude of the smooth dose ripple.
    pub ripple: f64,
    /// Nominal PTV semi-axes (mm) before seeded scaling.
    pub ptv_radii_mm: [f64; 3],
    /// Minimum centre-to-centre distance between PTV and cord voxels (mm).
    pub min_cord_gap_mm: f64,
    pub ct_noise_hu: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::new(0, [32, 32, 32])
    }
}

impl PhantomSpec {
    /// Default anatomy sampled on `dims`, spanning a 240 mm cube.
    pub fn new(seed: u64, dims: [usize; 3]) -> Self {
        PhantomSpec {
            seed,
            dims,
            spacing: std::array::from_fn(|a| DEFAULT_FOV_MM / dims[a].max(1) as f64),
            prescription: 60.0,
            falloff_mm: 15.0,
            scatter_fraction: 0.05,
            ripple: 0.02,
            ptv_radii_mm: [22.0, 22.0, 28.0],
            min_cord_gap_mm: 15.0,
            ct_noise_hu: 20.0,
        }
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.dims, self.spacing, [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        let positive = [self.prescription, self.falloff_mm];
        if positive.iter().any(|v| !(*v > 0.0)) || self.ptv_radii_mm.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::config("phantom prescription, falloff and PTV radii must be positive"));
        }
        if !(self.scatter_fraction >= 0.0 && self.ripple >= 0.0 && self.ripple < 1.0 && self.ct_noise_hu >= 0.0) {
            return Err(Error::config("phantom scatter, ripple and noise must be nonnegative (ripple < 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn rho(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        self.rho(p) <= 1.0
    }

    /// Distance to the surface along the ray from the centre; negative inside.
    fn radial_distance(&self, p: [f64; 3]) -> f64 {
        let r = (0..3).map(|a| (p[a] - self.center[a]).powi(2)).sum::<f64>().sqrt();
        let rho = self.rho(p);
        if rho == 0.0 {
            return -self.radii.iter().copied().fold(f64::INFINITY, f64::min);
        }
        r * (1.0 - 1.0 / rho)
    }
}

/// Fixed organ layout in millimetres for a field of view `fov`.
struct Anatomy {
    fov: [f64; 3],
}

impl Anatomy {
    fn c(&self, a: usize) -> f64 {
        self.fov[a] / 2.0
    }

    fn in_body(&self, p: [f64; 3]) -> bool {
        let dx = (p[0] - self.c(0)) / (0.46 * self.fov[0]);
        let dy = (p[1] - self.c(1)) / (0.38 * self.fov[1]);
        dx * dx + dy * dy <= 1.0
    }

    fn lung(&self, p: [f64; 3], side: f64) -> bool {
        let e = Ellipsoid {
            center: [self.c(0) + side * 0.2 * self.fov[0], self.c(1), 0.2 * self.fov[2]],
            radii: [0.15 * self.fov[0], 0.26 * self.fov[1], 0.72 * self.fov[2]],
        };
        p[2] >= e.center[2] && e.contains(p)
    }

    fn tube(&self, p: [f64; 3], y: f64, radius: f64) -> bool {
        let dx = p[0] - self.c(0);
        let dy = p[1] - (self.c(1) + y * self.fov[1]);
        (dx * dx + dy * dy).sqrt() <= radius * self.fov[0]
    }

    fn cord(&self, p: [f64; 3]) -> bool {
        self.tube(p, 0.28, 0.055)
    }

    fn esophagus(&self, p: [f64; 3]) -> bool {
        self.tube(p, 0.14, 0.05)
    }

    fn heart(&self, p: [f64; 3]) -> bool {
        Ellipsoid {
            center: [self.c(0) + 0.05 * self.fov[0], self.c(1) - 0.16 * self.fov[1], 0.3 * self.fov[2]],
            radii: [0.14 * self.fov[0], 0.13 * self.fov[1], 0.13 * self.fov[2]],
        }
        .contains(p)
    }
}

fn rasterize(g: &GridGeometry, name: &str, role: Role, anchor: [f64; 3], f: impl Fn([f64; 3]) -> bool) -> StructureMask {
    let mut m = StructureMask::from_fn(*g, name, role, |ijk| f(g.center(ijk)));
    if m.is_empty() {
        // Coarse grids can miss thin structures; keep the voxel containing the anchor.
        let ijk: [usize; 3] = std::array::from_fn(|a| {
            (((anchor[a] - g.origin[a]) / g.spacing[a]).floor().max(0.0) as usize).min(g.dims[a] - 1)
        });
        m.bits[g.index(ijk[0], ijk[1], ijk[2])] = true;
    }
    m
}

fn min_distance(g: &GridGeometry, a: &StructureMask, b: &StructureMask) -> f64 {
    let pa: Vec<[f64; 3]> = a.indices().into_iter().map(|i| g.center(g.coords(i))).collect();
    let pb: Vec<[f64; 3]> = b.indices().into_iter().map(|i| g.center(g.coords(i))).collect();
    let mut best = f64::INFINITY;
    for p in &pa {
        for q in &pb {
            let d2 = (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>();
            best = best.min(d2);
        }
    }
    best.sqrt()
}

/// Generate one phantom case. Same spec, same bytes.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<CaseBundle> {
    spec.validate()?;
    let g = spec.geometry()?;
    let fov = g.extent();
    let anat = Anatomy { fov };
    let mut rng = rng::seeded(spec.seed);

    let center = |a: usize| fov[a] / 2.0;
    let cord = rasterize(&g, "cord", Role::Oar, [center(0), center(1) + 0.28 * fov[1], center(2)], |p| anat.cord(p));
    let esophagus = rasterize(&g, "esophagus", Role::Oar, [center(0), center(1) + 0.14 * fov[1], center(2)], |p| {
        anat.esophagus(p)
    });
    let heart = rasterize(&g, "heart", Role::Oar, [center(0), center(1) - 0.16 * fov[1], 0.3 * fov[2]], |p| anat.heart(p));
    let lung_l = rasterize(&g, "lung_l", Role::Oar, [center(0) + 0.2 * fov[0], center(1), 0.5 * fov[2]], |p| {
        anat.lung(p, 1.0)
    });
    let lung_r = rasterize(&g, "lung_r", Role::Oar, [center(0) - 0.2 * fov[0], center(1), 0.5 * fov[2]], |p| {
        anat.lung(p, -1.0)
    });

    let mut placed = None;
    for _ in 0..MAX_ATTEMPTS {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let scale: f64 = rng.gen_range(0.8..1.2);
        let ellipsoid = Ellipsoid {
            center: [
                center(0) + side * rng.gen_range(0.12..0.22) * fov[0],
                center(1) + rng.gen_range(-0.1..0.05) * fov[1],
                rng.gen_range(0.4..0.7) * fov[2],
            ],
            radii: std::array::from_fn(|a| spec.ptv_radii_mm[a] * scale),
        };
        let ptv = rasterize(&g, PTV_NAME, Role::Ptv, ellipsoid.center, |p| ellipsoid.contains(p));
        let inside = (0..3).all(|a| {
            ellipsoid.center[a] - ellipsoid.radii[a] >= 0.0 && ellipsoid.center[a] + ellipsoid.radii[a] <= fov[a]
        });
        if inside && min_distance(&g, &ptv, &cord) >= spec.min_cord_gap_mm {
            placed = Some((ellipsoid, ptv));
            break;
        }
    }
    let (ellipsoid, ptv) = placed.ok_or_else(|| {
        Error::config(format!(
            "phantom seed {}: no feasible PTV placement after {MAX_ATTEMPTS} attempts",
            spec.seed
        ))
    })?;

    let phase: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..2.0 * PI));
    let wavelength = 80.0;
    let dose = Grid3::from_fn(g, Unit::Gy, |ijk| {
        let p = g.center(ijk);
        let sd = ellipsoid.radial_distance(p).max(0.0);
        let ripple = (2.0 * PI * p[0] / wavelength + phase[0]).sin()
            * (2.0 * PI * p[1] / wavelength + phase[1]).sin()
            * (2.0 * PI * p[2] / wavelength + phase[2]).cos();
        spec.prescription * ((-sd / spec.falloff_mm).exp() * (1.0 + spec.ripple * ripple) + spec.scatter_fraction)
    });
    let (dose, _) = normalize_ptv_mean(&dose, &ptv, spec.prescription)?;

    let noise = Normal::new(0.0, spec.ct_noise_hu.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut ct_rng = rng::stream(spec.seed, 1);
    let ct = Grid3::from_fn(g, Unit::Hu, |ijk| {
        let p = g.center(ijk);
        let idx = g.index(ijk[0], ijk[1], ijk[2]);
        let base = if ptv.bits[idx] {
            60.0
        } else if lung_l.bits[idx] || lung_r.bits[idx] {
            -700.0
        } else if anat.in_body(p) {
            40.0
        } else {
            -1000.0
        };
        let n = noise.sample(&mut ct_rng);
        if spec.ct_noise_hu > 0.0 {
            base + n
        } else {
            base
        }
    });

    Ok(CaseBundle {
        case_id: format!("phantom_{:05}", spec.seed),
        ct,
        dose,
        structures: vec![ptv, esophagus, cord, heart, lung_l, lung_r],
    })
}

/// Train/validation/test counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Split {
    /// The 240/50/70 proportions, rounded for `n` cases (24/5/7 for 36).
    pub fn proportional(n: usize) -> Self {
        let train = (n as f64 * 240.0 / 360.0).round() as usize;
        let val = ((n as f64 * 50.0 / 360.0).round() as usize).min(n - train.min(n));
        Split {
            train: train.min(n),
            val,
            test: n - train.min(n) - val,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub seed: u64,
    pub split: SplitName,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub base_seed: u64,
    pub dims: [usize; 3],
    pub split: Split,
    pub cases: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn entries(&self, split: SplitName) -> impl Iterator<Item = &ManifestEntry> {
        self.cases.iter().filter(move |c| c.split == split)
    }
}

/// Generate `n` phantoms with seeds `base_seed..base_seed + n` (in parallel, ordered by seed).
pub fn generate_cases(n: usize, base_seed: u64, dims: [usize; 3]) -> Result<Vec<CaseBundle>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| generate_phantom(&PhantomSpec::new(base_seed + i, dims)))
        .collect()
}

/// Write `n` phantom case directories plus `manifest.json` under `out`.
pub fn generate_dataset(
    n: usize,
    base_seed: u64,
    dims: [usize; 3],
    split: Option<Split>,
    out: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::config("dataset needs at least one case"));
    }
    let split = split.unwrap_or_else(|| Split::proportional(n));
    if split.total() != n {
        return Err(Error::config(format!("split {split:?} does not sum to {n}")));
    }
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cases = generate_cases(n, base_seed, dims)?;
    let mut entries = Vec::with_capacity(n);
    for (i, case) in cases.iter().enumerate() {
        let rel = PathBuf::from(&case.case_id);
        write_case(out.join(&rel), case)?;
        let split_name = if i < split.train {
            SplitName::Train
        } else if i < split.train + split.val {
            SplitName::Val
        } else {
            SplitName::Test
        };
        entries.push(ManifestEntry {
            case_id: case.case_id.clone(),
            path: rel,
            seed: base_seed + i as u64,
            split: split_name,
        });
    }
    let manifest = DatasetManifest {
        base_seed,
        dims,
        split,
        cases: entries,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
