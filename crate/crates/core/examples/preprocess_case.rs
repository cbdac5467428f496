//! Crop around the structures, resample to the network grid and normalise the dose.

use dosekit::phantom::{generate_phantom, PhantomSpec};
use dosekit::preprocess::{masked_mean, one_hot_structures, prepare_case, PreprocessConfig};
use dosekit::volume::CANONICAL_OARS;

fn main() -> dosekit::Result<()> {
    let raw = generate_phantom(&PhantomSpec::new(4, [48; 3]))?;
    let cfg = PreprocessConfig {
        crop_size: [200, 200, 200],
        net_dims: [32, 32, 32],
        ..PreprocessConfig::desk()
    };
    let case = prepare_case(&raw, &cfg)?;
    let g = case.geometry();
    println!("{} -> dims {:?}, spacing {:.2?} mm", case.case_id, g.dims, g.spacing);
    println!("PTV mean dose {:.3} Gy", masked_mean(&case.dose, case.ptv()?)?);
    let ct = &case.ct;
    let (lo, hi) = ct.values.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    println!("CT rescaled to [{lo:.3}, {hi:.3}]");

    let mut order = vec!["ptv"];
    order.extend(CANONICAL_OARS);
    let channels = one_hot_structures(&case.structures, &order)?;
    for name in order {
        let on = channels.channel(name).map_or(0, |c| c.iter().filter(|&&b| b).count());
        println!("  channel {name:<10} {on} voxels");
    }
    Ok(())
}
