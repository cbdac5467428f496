//! The three loss terms, their weighted sum and a finite-difference gradient check.

use dosekit::losses::{
    dvh_loss_grad, finite_difference_gradcheck, mae_loss_grad, moment, moment_loss_grad, total_loss_grad,
    LossConfig, MomentSpec,
};
use dosekit::phantom::{generate_phantom, PhantomSpec};

fn main() -> dosekit::Result<()> {
    let case = generate_phantom(&PhantomSpec::new(2, [24; 3]))?;
    let reference = &case.dose;
    let pred = reference.scaled(0.9);
    let cfg = LossConfig::default();

    let mae = mae_loss_grad(&pred, reference)?;
    let dvh = dvh_loss_grad(&pred, reference, &case.structures, &cfg.dvh)?;
    let mom = moment_loss_grad(&pred, reference, &case.structures, &cfg.moments)?;
    println!("MAE {:.4}  DVH {:.6}  moment {:.4}", mae.value, dvh.value, mom.value);

    let total = total_loss_grad(&pred, reference, &case.structures, &cfg)?;
    println!("total (w_dvh {}, w_moment {}) = {:.4}", cfg.w_dvh, cfg.w_moment, total.value);

    let cord = case.structure("cord").expect("phantom cord");
    for p in [1, 2, 10] {
        println!("  cord M{p:<2} = {:.3} Gy", moment(reference, cord, p)?.0);
    }

    // Cord max matters more than its mean: weight it with high orders.
    let custom = MomentSpec::default().with_orders("cord", &[5, 10]);
    let cord_term = moment_loss_grad(&pred, reference, &case.structures, &custom)?;
    println!("moment loss with cord P={{5,10}}: {:.4}", cord_term.value);

    let check = finite_difference_gradcheck(
        |x| moment_loss_grad(x, reference, &case.structures, &cfg.moments),
        &pred,
        1e-3,
        50,
        7,
    )?;
    println!("moment gradcheck: max rel err {:.2e} over {} voxels", check.max_rel_err, check.samples);
    Ok(())
}
