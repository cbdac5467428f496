//! Grids, masks, resampling and the MVOL file format.
//!
//! ```text
//! cargo run --example volume_io
//! ```

use dosekit::volume::mvol::{read_grid, write_grid};
use dosekit::volume::{crop_region, read_case, trilinear_resample, write_case};
use dosekit::phantom::{generate_phantom, PhantomSpec};
use dosekit::{Grid3, GridGeometry, Unit};

fn main() -> dosekit::Result<()> {
    let g = GridGeometry::new([20, 20, 10], [2.5, 2.5, 3.0], [0.0; 3])?;
    // A linear ramp is reproduced exactly by trilinear interpolation.
    let ramp = Grid3::from_fn(g, Unit::Gy, |[i, j, k]| i as f64 + 0.5 * j as f64 + 0.25 * k as f64);
    let coarse = trilinear_resample(&ramp, &g.resampled([10, 10, 5])?)?;
    println!("resampled {:?} -> {:?}, max {:.3} Gy", g.dims, coarse.geometry.dims, coarse.max());

    let roi = crop_region(&ramp, [5, 5, 2], [8, 8, 4])?;
    println!("cropped to {:?} at origin {:?} mm", roi.geometry.dims, roi.geometry.origin);

    let dir = tempfile::tempdir().map_err(|e| dosekit::Error::io("tempdir", e))?;
    let path = dir.path().join("ramp.mvol");
    write_grid(&path, &roi)?;
    let back = read_grid(&path)?;
    println!("MVOL round trip identical: {}", back == roi);

    let case = generate_phantom(&PhantomSpec::new(1, [24; 3]))?;
    write_case(dir.path().join("case"), &case)?;
    let loaded = read_case(dir.path().join("case"))?;
    for s in &loaded.structures {
        println!("  {:<10} {:>6} voxels", s.name, s.count());
    }
    Ok(())
}
