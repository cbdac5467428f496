//! Optimise voxel doses directly against a reference plan, then probe the landscape.
//!
//! ```text
//! cargo run --release --example mimic_dose
//! ```

use dosekit::losses::{dvh_loss_grad, moment, LossConfig};
use dosekit::metrics::{dose_score, dvh_score};
use dosekit::mimic::{
    dvh_nonconvexity_witness, midpoint_convexity_probe, midpoint_gap, mimic_dose, restart_study, MimicInit,
    OptimizerConfig,
};
use dosekit::phantom::{generate_phantom, PhantomSpec};
use dosekit::Grid3;

fn main() -> dosekit::Result<()> {
    let case = generate_phantom(&PhantomSpec::new(17, [32; 3]))?;
    let opt = OptimizerConfig::mimic();

    let r = mimic_dose(&case, &LossConfig::mae_moment(), &opt, MimicInit::Zeros)?;
    println!(
        "MAE+moment from zeros: loss {:.4} -> {:.4} in {:.2}s; dose score {:.4} Gy, DVH score {:.4} Gy",
        r.trajectory[0].loss,
        r.final_loss(),
        r.timing.total_secs,
        dose_score(&r.dose, &case.dose)?,
        dvh_score(&r.dose, &case.dose, &case.structures)?.0
    );

    let short = OptimizerConfig {
        iterations: 500,
        ..opt
    };
    let study = restart_study(&case, &LossConfig::mae(), &short, &[1, 2, 3])?;
    println!("MAE restarts: final loss spread {:.2e}", study.loss_spread.max_pairwise);

    let g = case.geometry();
    let cord = case.structure("cord").expect("phantom cord");
    let conv = midpoint_convexity_probe(|d| Ok(moment(d, cord, 10)?.0), &g, 50, 1, 80.0)?;
    println!("cord M10 midpoint violations: {} of {}", conv.violations, conv.pairs);

    let (zero, x, y) = dvh_nonconvexity_witness(&g);
    let spec = LossConfig::default().dvh;
    let f = |d: &Grid3| Ok(dvh_loss_grad(d, &zero, &case.structures, &spec)?.value);
    println!("DVH loss midpoint gap on the saturation construction: {:+.4}", midpoint_gap(&f, &x, &y)?);
    Ok(())
}
