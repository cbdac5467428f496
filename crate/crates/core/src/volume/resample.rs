use super::{Grid3, GridGeometry, StructureMask};
use crate::error::Result;

/// Snap tolerance for interpolation fractions, so identity-like mappings copy values exactly.
const SNAP: f64 = 1e-9;

/// Per-axis interpolation stencil: lower index, upper index, fraction towards upper.
fn linear_stencil(src: &GridGeometry, dst: &GridGeometry, axis: usize) -> Vec<(usize, usize, f64)> {
    let n = src.dims[axis];
    (0..dst.dims[axis])
        .map(|t| {
            let p = dst.origin[axis] + (t as f64 + 0.5) * dst.spacing[axis];
            let ci = ((p - src.origin[axis]) / src.spacing[axis] - 0.5).clamp(0.0, (n - 1) as f64);
            let mut i0 = ci.floor() as usize;
            let mut frac = ci - i0 as f64;
            if frac < SNAP {
                frac = 0.0;
            } else if frac > 1.0 - SNAP {
                frac = 0.0;
                i0 += 1;
            }
            let i0 = i0.min(n - 1);
            (i0, (i0 + 1).min(n - 1), frac)
        })
        .collect()
}

fn nearest_stencil(src: &GridGeometry, dst: &GridGeometry, axis: usize) -> Vec<usize> {
    let n = src.dims[axis];
    (0..dst.dims[axis])
        .map(|t| {
            let p = dst.origin[axis] + (t as f64 + 0.5) * dst.spacing[axis];
            let ci = (p - src.origin[axis]) / src.spacing[axis] - 0.5;
            (ci + 0.5).floor().clamp(0.0, (n - 1) as f64) as usize
        })
        .collect()
}

/// Trilinear interpolation of `src` onto `target`, in physical coordinates.
///
/// Samples outside the source extent clamp to the nearest voxel centre.
pub fn trilinear_resample(src: &Grid3, target: &GridGeometry) -> Result<Grid3> {
    src.geometry.validate()?;
    target.validate()?;
    if &src.geometry == target {
        return Ok(src.clone());
    }
    let sx = linear_stencil(&src.geometry, target, 0);
    let sy = linear_stencil(&src.geometry, target, 1);
    let sz = linear_stencil(&src.geometry, target, 2);
    let g = &src.geometry;
    let v = &src.values;
    let mut out = Vec::with_capacity(target.voxel_count());
    for &(z0, z1, tz) in &sz {
        for &(y0, y1, ty) in &sy {
            for &(x0, x1, tx) in &sx {
                let lerp_x = |j: usize, k: usize| {
                    let a = v[g.index(x0, j, k)];
                    if tx == 0.0 {
                        a
                    } else {
                        a + tx * (v[g.index(x1, j, k)] - a)
                    }
                };
                let lerp_y = |k: usize| {
                    let a = lerp_x(y0, k);
                    if ty == 0.0 {
                        a
                    } else {
                        a + ty * (lerp_x(y1, k) - a)
                    }
                };
                let a = lerp_y(z0);
                out.push(if tz == 0.0 { a } else { a + tz * (lerp_y(z1) - a) });
            }
        }
    }
    Grid3::new(*target, out, src.unit)
}

/// Nearest-neighbour resampling of a mask onto `target`.
pub fn resample_mask(src: &StructureMask, target: &GridGeometry) -> Result<StructureMask> {
    src.geometry.validate()?;
    target.validate()?;
    if &src.geometry == target {
        return Ok(src.clone());
    }
    let nx = nearest_stencil(&src.geometry, target, 0);
    let ny = nearest_stencil(&src.geometry, target, 1);
    let nz = nearest_stencil(&src.geometry, target, 2);
    let mut bits = Vec::with_capacity(target.voxel_count());
    for &k in &nz {
        for &j in &ny {
            for &i in &nx {
                bits.push(src.bits[src.geometry.index(i, j, k)]);
            }
        }
    }
    StructureMask::new(*target, bits, src.name.clone(), src.role)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Role, Unit};
    use proptest::prelude::*;

    fn geom(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> GridGeometry {
        GridGeometry::new(dims, spacing, origin).unwrap()
    }

    #[test]
    fn midpoint_interpolation() {
        let src = Grid3::new(geom([2, 1, 1], [1.0; 3], [0.0; 3]), vec![0.0, 10.0], Unit::Gy).unwrap();
        let target = geom([3, 1, 1], [2.0 / 3.0, 1.0, 1.0], [0.0; 3]);
        let out = trilinear_resample(&src, &target).unwrap();
        assert_eq!(out.values.len(), 3);
        assert_eq!(out.values[0], 0.0);
        assert!((out.values[1] - 5.0).abs() < 1e-12);
        assert_eq!(out.values[2], 10.0);
    }

    #[test]
    fn identity_is_bitwise() {
        let g = geom([3, 4, 5], [1.5, 2.0, 2.5], [-3.0, 1.0, 7.0]);
        let src = Grid3::from_fn(g, Unit::Gy, |[i, j, k]| (i * 7 + j * 3 + k) as f64 * 0.137);
        let out = trilinear_resample(&src, &g).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn zero_spacing_is_rejected() {
        let src = Grid3::filled(geom([2, 2, 2], [1.0; 3], [0.0; 3]), 1.0, Unit::Gy);
        let bad = GridGeometry {
            dims: [2, 2, 2],
            spacing: [1.0, 0.0, 1.0],
            origin: [0.0; 3],
        };
        assert!(trilinear_resample(&src, &bad).is_err());
    }

    #[test]
    fn mask_nearest_neighbour() {
        let src = StructureMask::new(geom([2, 1, 1], [1.0; 3], [0.0; 3]), vec![true, false], "m", Role::Oar)
            .unwrap();
        let out = resample_mask(&src, &geom([4, 1, 1], [0.5, 1.0, 1.0], [0.0; 3])).unwrap();
        assert_eq!(out.bits, vec![true, true, false, false]);
        assert_eq!(out.name, "m");
    }

    #[test]
    fn mask_identity_and_all_true() {
        let g = geom([3, 3, 2], [1.0; 3], [0.0; 3]);
        let m = StructureMask::from_fn(g, "m", Role::Oar, |[i, j, _]| i == j);
        assert_eq!(resample_mask(&m, &g).unwrap(), m);
        let all = StructureMask::from_fn(g, "a", Role::Oar, |_| true);
        let out = resample_mask(&all, &geom([7, 2, 5], [0.4, 1.7, 0.3], [0.2, 0.1, 0.0])).unwrap();
        assert!(out.bits.iter().all(|&b| b));
    }

    fn arb_geometry() -> impl Strategy<Value = GridGeometry> {
        (
            prop::array::uniform3(1usize..7),
            prop::array::uniform3(0.3f64..3.0),
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_map(|(d, s, o)| geom(d, s, o))
    }

    proptest! {
        #[test]
        fn constant_field_stays_constant(src in arb_geometry(), dst in arb_geometry(), c in -100.0f64..100.0) {
            let g = Grid3::filled(src, c, Unit::Gy);
            let out = trilinear_resample(&g, &dst).unwrap();
            prop_assert_eq!(out.geometry, dst);
            for v in out.values {
                prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
            }
        }

        #[test]
        fn all_false_mask_stays_false(src in arb_geometry(), dst in arb_geometry()) {
            let m = StructureMask::from_fn(src, "m", Role::Oar, |_| false);
            let out = resample_mask(&m, &dst).unwrap();
            prop_assert!(out.bits.iter().all(|&b| !b));
            prop_assert_eq!(out.bits.len(), dst.voxel_count());
        }

        #[test]
        fn affine_fields_are_exact_in_interior(
            coef in prop::array::uniform4(-3.0f64..3.0),
            dims in prop::array::uniform3(2usize..6),
            spacing in prop::array::uniform3(0.5f64..2.0),
            shrink in 0.2f64..0.9,
            tdims in prop::array::uniform3(1usize..6),
        ) {
            let src_g = geom(dims, spacing, [0.0; 3]);
            let f = |p: [f64; 3]| coef[0] + coef[1] * p[0] + coef[2] * p[1] + coef[3] * p[2];
            let src = Grid3::from_fn(src_g, Unit::Gy, |ijk| f(src_g.center(ijk)));
            // Target box strictly inside the hull of source voxel centres.
            let lo: [f64; 3] = std::array::from_fn(|a| 0.5 * spacing[a]);
            let hi: [f64; 3] = std::array::from_fn(|a| (dims[a] as f64 - 0.5) * spacing[a]);
            let width: [f64; 3] = std::array::from_fn(|a| (hi[a] - lo[a]) * shrink);
            let origin: [f64; 3] = std::array::from_fn(|a| lo[a] + (hi[a] - lo[a] - width[a]) / 2.0);
            let dst_g = geom(tdims, std::array::from_fn(|a| width[a] / tdims[a] as f64), origin);
            let out = trilinear_resample(&src, &dst_g).unwrap();
            for (idx, v) in out.values.iter().enumerate() {
                let want = f(dst_g.center(dst_g.coords(idx)));
                prop_assert!((v - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {}", v, want);
            }
        }
    }
}
