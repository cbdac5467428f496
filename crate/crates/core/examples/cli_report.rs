//! Drive the command line in-process: evaluate two prediction runs and aggregate them.

use dosekit::cli;
use dosekit::phantom::generate_cases;
use dosekit::volume::mvol::write_grid;
use dosekit::volume::write_case;

fn main() -> dosekit::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| dosekit::Error::io("tempdir", e))?;
    let root = dir.path();
    let cases = generate_cases(4, 900, [16; 3])?;
    for (run, scale) in [("cold", 0.9), ("warm", 0.98)] {
        for case in &cases {
            let case_dir = root.join(&case.case_id);
            write_case(&case_dir, case)?;
            let pred = root.join("pred.mvol");
            write_grid(&pred, &case.dose.scaled(scale))?;
            let out = root.join(run).join(format!("{}.metrics.json", case.case_id));
            let code = cli::run([
                "dosekit",
                "eval",
                "--pred",
                pred.to_str().unwrap(),
                "--case",
                case_dir.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ]);
            assert_eq!(code, cli::EXIT_OK);
        }
    }
    let csv = root.join("aggregate.csv");
    let code = cli::run([
        "dosekit",
        "report",
        "--out",
        root.join("aggregate.json").to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "--runs",
        root.join("cold").to_str().unwrap(),
        root.join("warm").to_str().unwrap(),
    ]);
    assert_eq!(code, cli::EXIT_OK);
    let text = std::fs::read_to_string(&csv).map_err(|e| dosekit::Error::io(&csv, e))?;
    for line in text.lines().filter(|l| l.starts_with("run") || l.contains(",dose_score,") || l.contains(",dvh_score,")) {
        println!("{line}");
    }
    Ok(())
}
