//! Train the small encoder-decoder with two loss configurations and compare held-out scores.
//!
//! ```text
//! cargo run --release --example train_tiny_model
//! ```

use dosekit::losses::LossConfig;
use dosekit::metrics::EvalOptions;
use dosekit::phantom::generate_cases;
use dosekit::tinymodel::{evaluate_holdout, train, ModelConfig, TrainConfig};

fn main() -> dosekit::Result<()> {
    let cases = generate_cases(18, 40, [16; 3])?;
    let (train_cases, rest) = cases.split_at(12);
    let (val, test) = rest.split_at(3);
    let model = ModelConfig::default();
    for (name, loss) in [("MAE", LossConfig::mae()), ("MAE+moment", LossConfig::mae_moment())] {
        let cfg = TrainConfig {
            loss,
            epochs: 10,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&model, train_cases, val, &cfg, None)?;
        let last = out.log.last().expect("at least one epoch");
        let h = evaluate_holdout(&out.best_model, test, &EvalOptions::default())?;
        println!(
            "{name:<11} train loss {:.3}, best epoch {}, test dose score {:.2} Gy, DVH score {:.2} Gy ({:.0}s)",
            last.train_loss, out.best_epoch, h.mean_dose_score, h.mean_dvh_score, out.total_secs
        );
    }
    Ok(())
}
