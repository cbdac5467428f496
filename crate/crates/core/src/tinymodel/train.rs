use std::fs::{self, File};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{write_checkpoint, ModelConfig, Network};
use crate::error::{Error, Result};
use crate::losses::{sum::sum, GradcheckReport, LossConfig};
use crate::metrics::{dose_score, dvh_score, evaluate_case, EvalOptions, MetricsReport};
use crate::mimic::{scheduled_lr, Adam, OptimizerConfig};
use crate::phantom::{DatasetManifest, SplitName};
use crate::rng;
use crate::volume::{read_case, CaseBundle, Grid3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    /// `iterations` is ignored; the schedule runs over `epochs`.
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 40,
            batch_size: 1,
            seed: 7,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.epochs == 0 || self.epochs % 2 != 0 {
            return Err(Error::config(format!("epochs must be even and positive, got {}", self.epochs)));
        }
        if self.batch_size != 1 {
            return Err(Error::config("only batch size 1 is supported"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dose_score: Option<f64>,
    pub val_dvh_score: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_model: Network<f32>,
    /// Lowest validation DVH score (earliest on ties); the final model without validation cases.
    pub best_model: Network<f32>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub total_secs: f64,
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    sum(v.iter().copied()) / v.len() as f64
}

fn validation_scores(net: &Network<f32>, cases: &[CaseBundle]) -> Result<(f64, f64)> {
    let mut ds = Vec::with_capacity(cases.len());
    let mut dvh = Vec::with_capacity(cases.len());
    for case in cases {
        let pred = net.predict_dose(case)?;
        ds.push(dose_score(&pred, &case.dose)?);
        dvh.push(dvh_score(&pred, &case.dose, &case.structures)?.0);
    }
    Ok((mean(ds), mean(dvh)))
}

/// Train with batch size 1 and Adam. With `run_dir`, writes `log.jsonl` (one line per epoch),
/// `best.ckpt` and `final.ckpt`.
pub fn train(
    model: &ModelConfig,
    train_cases: &[CaseBundle],
    val_cases: &[CaseBundle],
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_cases.is_empty() {
        return Err(Error::config("no training cases"));
    }
    let start = Instant::now();
    let mut net = Network::<f32>::new(model.clone(), cfg.seed)?;
    let mut adam = Adam::<f32>::new(net.param_count());
    let mut drop_rng = rng::stream(cfg.seed, 3);
    let mut log_file = match run_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("log.jsonl");
            Some((File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    let mut order: Vec<usize> = (0..train_cases.len()).collect();
    for epoch in 1..=cfg.epochs {
        let lr = scheduled_lr(cfg.optimizer.lr, epoch, cfg.epochs);
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut rng::stream(cfg.seed, 1000 + epoch as u64));
        }
        let mut losses = Vec::with_capacity(order.len());
        for (it, &ci) in order.iter().enumerate() {
            let case = &train_cases[ci];
            let (lg, g) = net.loss_and_grad(case, &cfg.loss, Some(&mut drop_rng))?;
            if !lg.value.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss {} at epoch {epoch} iteration {it} (case {})",
                    lg.value, case.case_id
                )));
            }
            adam.step(&mut net.params, &g, lr, &cfg.optimizer, false).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("{m} at epoch {epoch} iteration {it}")),
                other => other,
            })?;
            losses.push(lg.value);
        }
        let (val_dose_score, val_dvh_score) = if val_cases.is_empty() {
            (None, None)
        } else {
            let (d, v) = validation_scores(&net, val_cases)?;
            (Some(d), Some(v))
        };
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: mean(losses),
            val_dose_score,
            val_dvh_score,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train {:.4} val dose {:?} dvh {:?}",
            entry.train_loss,
            val_dose_score,
            val_dvh_score
        );
        if let Some((f, p)) = &mut log_file {
            let line = serde_json::to_string(&entry).map_err(|e| Error::json(&*p, e))?;
            writeln!(f, "{line}").map_err(|e| Error::io(&*p, e))?;
        }
        if let Some(v) = val_dvh_score {
            if best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                best = Some((v, epoch, net.clone()));
            }
        }
        log.push(entry);
    }
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (cfg.epochs, net.clone()),
    };
    if let Some(dir) = run_dir {
        write_checkpoint(dir.join("best.ckpt"), &best_model, best_epoch)?;
        write_checkpoint(dir.join("final.ckpt"), &net, cfg.epochs)?;
    }
    Ok(TrainOutcome {
        final_model: net,
        best_model,
        best_epoch,
        log,
        total_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn predict(net: &Network<f32>, case: &CaseBundle) -> Result<Grid3> {
    net.predict_dose(case)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub reports: Vec<MetricsReport>,
    pub mean_dose_score: f64,
    pub mean_dvh_score: f64,
}

/// Predict and evaluate every case; one report per case in input order.
pub fn evaluate_holdout(net: &Network<f32>, cases: &[CaseBundle], opts: &EvalOptions) -> Result<HoldoutReport> {
    if cases.is_empty() {
        return Err(Error::config("empty test set"));
    }
    let reports = cases
        .iter()
        .map(|c| evaluate_case(&net.predict_dose(c)?, c, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(HoldoutReport {
        mean_dose_score: mean(reports.iter().map(|r| r.dose_score)),
        mean_dvh_score: mean(reports.iter().map(|r| r.dvh_score)),
        reports,
    })
}

/// Cases of one split, in manifest order.
pub fn load_split(manifest_path: impl AsRef<Path>, split: SplitName) -> Result<Vec<CaseBundle>> {
    let manifest_path = manifest_path.as_ref();
    let manifest = DatasetManifest::read(manifest_path)?;
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    manifest.entries(split).map(|e| read_case(root.join(&e.path))).collect()
}

/// One-sided slopes that disagree by more than this fraction mark a kink (ReLU, max pool
/// or |.|) inside `[x - h, x + h]`.
const KINK_TOL: f64 = 1e-4;

/// Central-difference check of `d loss / d params` on `samples` random parameters.
///
/// A sample whose forward and backward one-sided slopes disagree straddles a kink of the
/// piecewise-linear network; it is skipped and counted, and another parameter is drawn.
/// Relative error uses the denominator `max(|analytic|, |numeric|, floor)`.
pub fn param_gradcheck(
    net: &Network<f64>,
    case: &CaseBundle,
    loss: &LossConfig,
    samples: usize,
    h: f64,
    floor: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    let (lg, analytic) = net.loss_and_grad(case, loss, None)?;
    let base = lg.value;
    let n = net.params.len();
    let order = sample(&mut rng::seeded(seed), n, n);
    let mut probe = net.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst_index = None;
    let mut checked = 0;
    let mut skipped = 0;
    for j in order.iter() {
        if checked == samples {
            break;
        }
        let x = net.params[j];
        probe.params[j] = x + h;
        let up = probe.loss(case, loss)?;
        probe.params[j] = x - h;
        let down = probe.loss(case, loss)?;
        probe.params[j] = x;
        let (fwd, bwd) = ((up - base) / h, (base - down) / h);
        if (fwd - bwd).abs() > KINK_TOL * fwd.abs().max(bwd.abs()).max(floor) {
            skipped += 1;
            continue;
        }
        checked += 1;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if rel > max_rel_err || worst_index.is_none() {
            max_rel_err = max_rel_err.max(rel);
            worst_index = Some(j);
        }
    }
    Ok(GradcheckReport {
        max_rel_err,
        samples: checked,
        h,
        seed,
        worst_index,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomSpec};

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 3, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 2, ..Default::default() }.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn holdout_perfect_and_means() {
        let cases: Vec<_> = (0..2).map(|s| generate_phantom(&PhantomSpec::new(s, [8, 8, 8])).unwrap()).collect();
        let net = Network::<f32>::new(ModelConfig { base_filters: 2, ..Default::default() }, 1).unwrap();
        let rep = evaluate_holdout(&net, &cases, &EvalOptions::default()).unwrap();
        assert_eq!(rep.reports.len(), 2);
        let m = (rep.reports[0].dvh_score + rep.reports[1].dvh_score) / 2.0;
        assert!((rep.mean_dvh_score - m).abs() < 1e-12);
        assert!(evaluate_holdout(&net, &[], &EvalOptions::default()).is_err());

        // A prediction equal to the reference scores zero.
        let r = evaluate_case(&cases[0].dose, &cases[0], &EvalOptions::default()).unwrap();
        assert_eq!((r.dose_score, r.dvh_score), (0.0, 0.0));
    }

    #[test]
    fn micro_network_gradcheck_f64() {
        let case = generate_phantom(&PhantomSpec::new(9, [8, 8, 8])).unwrap();
        let net = Network::<f64>::new(ModelConfig { base_filters: 2, ..Default::default() }, 4).unwrap();
        for loss in [LossConfig::mae(), LossConfig::mae_dvh(), LossConfig::mae_moment()] {
            let rep = param_gradcheck(&net, &case, &loss, 40, 1e-5, 1e-3, 2).unwrap();
            assert_eq!(rep.samples, 40);
            assert!(rep.max_rel_err < 1e-5, "{:?}: {rep:?}", loss.terms);
        }
    }
}
