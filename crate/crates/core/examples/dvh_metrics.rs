//! Dose score, DVH score, homogeneity and conformity indices and the clinical criteria table.

use dosekit::metrics::{dose_at_percent, evaluate_case, EvalOptions, RowStatus};
use dosekit::phantom::{generate_phantom, PhantomSpec};

fn main() -> dosekit::Result<()> {
    let case = generate_phantom(&PhantomSpec::new(3, [32; 3]))?;
    // A prediction that is 5% hot everywhere.
    let pred = case.dose.scaled(1.05);
    let report = evaluate_case(&pred, &case, &EvalOptions::default())?;
    println!("dose score {:.3} Gy, DVH score {:.3} Gy", report.dose_score, report.dvh_score);
    for c in &report.criteria {
        println!("  {:<10} {:<8} ref {:6.2} pred {:6.2}", c.structure, c.criterion, c.reference, c.pred);
    }
    println!("HI ref {:?} pred {:?}", report.hi_ref, report.hi_pred);
    println!("PCI ref {:.3} pred {:.3}", report.pci_ref, report.pci_pred);
    for row in &report.clinical {
        let mark = match row.status {
            RowStatus::Pass => "pass",
            RowStatus::Fail => "FAIL",
            RowStatus::NotEvaluable => "n/a",
        };
        println!("  {:<10} {:<12} limit {:5.1} {mark}", row.structure, row.criterion, row.limit);
    }
    let ptv = case.ptv()?;
    println!("PTV D95 of the reference: {:.2} Gy", dose_at_percent(&case.dose, ptv, 95.0)?);
    Ok(())
}
