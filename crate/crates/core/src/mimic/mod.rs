//! Voxel-level dose mimicking: minimize a [`LossConfig`] directly over nonnegative voxel
//! doses with Adam, plus restart and convexity probes of the loss landscape.

mod adam;
mod probe;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{total_loss_grad, LossConfig, Term};
use crate::metrics::{dose_score, dvh_score};
use crate::rng;
use crate::volume::{CaseBundle, Grid3, Unit};

pub use adam::{scheduled_lr, Adam, OptimizerConfig};
pub use probe::{dvh_nonconvexity_witness, midpoint_convexity_probe, midpoint_gap, ConvexityReport, MIDPOINT_TOL};

/// Divergence: loss above this multiple of the initial loss ...
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// ... for this many consecutive iterations.
pub const DIVERGENCE_PATIENCE: usize = 100;

/// Tracks consecutive iterations spent above `DIVERGENCE_FACTOR` times the first loss.
/// A zero initial loss never triggers.
#[derive(Clone, Debug, Default)]
pub struct DivergenceMonitor {
    initial: Option<f64>,
    above: usize,
}

impl DivergenceMonitor {
    pub fn observe(&mut self, loss: f64, iteration: usize) -> Result<()> {
        let l0 = *self.initial.get_or_insert(loss);
        if l0 > 0.0 && loss > DIVERGENCE_FACTOR * l0 {
            self.above += 1;
            if self.above >= DIVERGENCE_PATIENCE {
                return Err(Error::Numerical(format!(
                    "diverged: loss {loss} > {DIVERGENCE_FACTOR} x initial {l0} for {DIVERGENCE_PATIENCE} iterations (iteration {iteration})"
                )));
            }
        } else {
            self.above = 0;
        }
        Ok(())
    }
}

/// Starting point for the dose variables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum MimicInit {
    Zeros,
    Uniform { gy: f64 },
    /// Independent uniform doses in `[0, max(ref)]`.
    Random { seed: u64 },
}

impl fmt::Display for MimicInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MimicInit::Zeros => write!(f, "zeros"),
            MimicInit::Uniform { gy } => write!(f, "uniform:{gy}"),
            MimicInit::Random { seed } => write!(f, "rand:{seed}"),
        }
    }
}

impl FromStr for MimicInit {
    type Err = Error;

    /// `zeros`, `uniform:<Gy>` or `rand:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("bad init `{s}`, expected zeros | uniform:<Gy> | rand:<seed>"));
        match s.split_once(':') {
            None if s == "zeros" => Ok(MimicInit::Zeros),
            Some(("uniform", v)) => {
                let gy: f64 = v.parse().map_err(|_| bad())?;
                if !(gy >= 0.0) || !gy.is_finite() {
                    return Err(bad());
                }
                Ok(MimicInit::Uniform { gy })
            }
            Some(("rand", v)) => Ok(MimicInit::Random {
                seed: v.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl MimicInit {
    pub fn build(&self, reference: &Grid3) -> Grid3 {
        match *self {
            MimicInit::Zeros => Grid3::zeros_like(reference, Unit::Gy),
            MimicInit::Uniform { gy } => Grid3::filled(reference.geometry, gy, Unit::Gy),
            MimicInit::Random { seed } => {
                let hi = reference.max().max(1.0);
                let mut r = rng::seeded(seed);
                let values = (0..reference.len()).map(|_| r.gen_range(0.0..hi)).collect();
                Grid3::new(reference.geometry, values, Unit::Gy).expect("matching length")
            }
        }
    }
}

/// Loss before one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub loss: f64,
    pub terms: BTreeMap<Term, f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_secs: f64,
    pub mean_iter_secs: f64,
    pub mean_loss_grad_secs: f64,
    pub max_iter_secs: f64,
}

#[derive(Clone, Debug)]
pub struct MimicResult {
    pub dose: Grid3,
    /// One entry per iteration, recorded before that iteration's update.
    pub trajectory: Vec<IterationRecord>,
    pub timing: Timing,
    pub init: MimicInit,
    pub restart_id: Option<usize>,
}

impl MimicResult {
    pub fn final_loss(&self) -> f64 {
        self.trajectory.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.trajectory.iter().map(|r| r.loss).collect()
    }

    /// Everything except wall-clock timing.
    pub fn same_outcome(&self, other: &MimicResult) -> bool {
        self.dose == other.dose && self.trajectory == other.trajectory && self.init == other.init
    }
}

/// Minimize `loss(x, ref)` over voxel doses `x >= 0`, starting from `init`.
///
/// The schedule reaches lr = 0 on the final iteration, so the returned dose is the one
/// whose loss is the last trajectory entry.
pub fn mimic_dose(case: &CaseBundle, loss: &LossConfig, opt: &OptimizerConfig, init: MimicInit) -> Result<MimicResult> {
    let start = init.build(&case.dose);
    mimic_dose_from(case, loss, opt, start, init)
}

/// [`mimic_dose`] from an explicit starting dose, e.g. another case's plan. `label` is
/// recorded as the result's init.
pub fn mimic_dose_from(
    case: &CaseBundle,
    loss: &LossConfig,
    opt: &OptimizerConfig,
    start: Grid3,
    label: MimicInit,
) -> Result<MimicResult> {
    loss.validate()?;
    opt.validate()?;
    if opt.iterations == 0 {
        return Err(Error::config("mimicking needs at least one iteration"));
    }
    let reference = &case.dose;
    reference.expect_unit(Unit::Gy)?;
    start.ensure_same_geometry(&reference.geometry, "mimic start")?;
    if let Some(i) = start.values.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::NegativeDose {
            index: i,
            value: start.values[i],
        });
    }
    let init = label;
    let mut x = start.with_unit(Unit::Gy);
    let mut adam = Adam::<f64>::new(x.len());
    let mut trajectory = Vec::with_capacity(opt.iterations);
    let mut loss_secs = 0.0;
    let mut max_iter = 0.0f64;
    let mut monitor = DivergenceMonitor::default();
    let clock = Instant::now();
    for it in 0..opt.iterations {
        let t0 = Instant::now();
        let lg = total_loss_grad(&x, reference, &case.structures, loss)?;
        loss_secs += t0.elapsed().as_secs_f64();
        if !lg.value.is_finite() {
            return Err(Error::Numerical(format!("loss is {} at iteration {it}", lg.value)));
        }
        monitor.observe(lg.value, it)?;
        trajectory.push(IterationRecord {
            loss: lg.value,
            terms: lg.terms,
        });
        adam.step(&mut x.values, &lg.grad.values, opt.lr_at(it + 1), opt, opt.nonneg_projection)?;
        max_iter = max_iter.max(t0.elapsed().as_secs_f64());
    }
    let total = clock.elapsed().as_secs_f64();
    let n = opt.iterations as f64;
    Ok(MimicResult {
        dose: x,
        trajectory,
        timing: Timing {
            total_secs: total,
            mean_iter_secs: total / n,
            mean_loss_grad_secs: loss_secs / n,
            max_iter_secs: max_iter,
        },
        init,
        restart_id: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean_pairwise: f64,
    pub max_pairwise: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let mut total = 0.0;
        let mut max = 0.0f64;
        let mut pairs = 0usize;
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                let d = (values[i] - values[j]).abs();
                total += d;
                max = max.max(d);
                pairs += 1;
            }
        }
        Spread {
            mean_pairwise: if pairs == 0 { 0.0 } else { total / pairs as f64 },
            max_pairwise: max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartRun {
    pub restart_id: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub dose_score: f64,
    pub dvh_score: f64,
    pub trajectory: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartReport {
    pub case_id: String,
    pub loss: LossConfig,
    pub runs: Vec<RestartRun>,
    pub loss_spread: Spread,
    pub dvh_score_spread: Spread,
}

/// Mimic from `Random { seed }` for each seed (in parallel) and report the dispersion of outcomes.
pub fn restart_study(case: &CaseBundle, loss: &LossConfig, opt: &OptimizerConfig, seeds: &[u64]) -> Result<RestartReport> {
    if seeds.len() < 2 {
        return Err(Error::config("restart study needs at least 2 restarts"));
    }
    let runs = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut r = mimic_dose(case, loss, opt, MimicInit::Random { seed })?;
            r.restart_id = Some(i);
            let (dvh, _) = dvh_score(&r.dose, &case.dose, &case.structures)?;
            Ok(RestartRun {
                restart_id: i,
                seed,
                final_loss: r.final_loss(),
                dose_score: dose_score(&r.dose, &case.dose)?,
                dvh_score: dvh,
                trajectory: r.losses(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<f64> = runs.iter().map(|r| r.final_loss).collect();
    let dvh: Vec<f64> = runs.iter().map(|r| r.dvh_score).collect();
    Ok(RestartReport {
        case_id: case.case_id.clone(),
        loss: loss.clone(),
        loss_spread: Spread::of(&losses),
        dvh_score_spread: Spread::of(&dvh),
        runs,
    })
}

/// Median wall-clock seconds of one loss-and-gradient evaluation over `reps` runs.
pub fn loss_grad_cost(pred: &Grid3, case: &CaseBundle, loss: &LossConfig, reps: usize) -> Result<f64> {
    let mut samples = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let t0 = Instant::now();
        let lg = total_loss_grad(pred, &case.dose, &case.structures, loss)?;
        samples.push(t0.elapsed().as_secs_f64());
        std::hint::black_box(lg);
    }
    samples.sort_by(f64::total_cmp);
    Ok(samples[samples.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{moment, MomentSpec};
    use crate::phantom::{generate_phantom, PhantomSpec};

    fn small_case(seed: u64) -> CaseBundle {
        generate_phantom(&PhantomSpec::new(seed, [16, 16, 16])).unwrap()
    }

    fn opt(iterations: usize) -> OptimizerConfig {
        OptimizerConfig {
            iterations,
            ..OptimizerConfig::mimic()
        }
    }

    #[test]
    fn init_parsing() {
        assert_eq!("zeros".parse::<MimicInit>().unwrap(), MimicInit::Zeros);
        assert_eq!("uniform:30".parse::<MimicInit>().unwrap(), MimicInit::Uniform { gy: 30.0 });
        assert_eq!("rand:9".parse::<MimicInit>().unwrap(), MimicInit::Random { seed: 9 });
        for bad in ["", "uniform", "uniform:-1", "rand:x", "ones"] {
            assert!(bad.parse::<MimicInit>().is_err(), "{bad}");
        }
        let init = MimicInit::Uniform { gy: 12.5 };
        assert_eq!(init.to_string().parse::<MimicInit>().unwrap(), init);
    }

    #[test]
    fn starting_at_reference_stays() {
        let case = small_case(1);
        let mut r = mimic_dose(&case, &LossConfig::mae_moment(), &opt(1), MimicInit::Zeros).unwrap();
        assert!(r.final_loss() > 0.0);
        // Start exactly at the reference: zero loss and zero gradient.
        let cfg = opt(20);
        let mut adam = Adam::<f64>::new(case.dose.len());
        let mut x = case.dose.clone();
        for it in 0..cfg.iterations {
            let lg = total_loss_grad(&x, &case.dose, &case.structures, &LossConfig::mae_moment()).unwrap();
            assert_eq!(lg.value, 0.0);
            adam.step(&mut x.values, &lg.grad.values, cfg.lr_at(it + 1), &cfg, true).unwrap();
        }
        assert_eq!(x, case.dose);
        r.restart_id = Some(0);
    }

    #[test]
    fn mae_descends_from_uniform() {
        let case = small_case(2);
        let r = mimic_dose(&case, &LossConfig::mae(), &opt(600), MimicInit::Uniform { gy: 30.0 }).unwrap();
        assert_eq!(r.trajectory.len(), 600);
        assert!(r.final_loss() < 0.5 * r.trajectory[0].loss);
        assert!(r.dose.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn replay_is_bit_identical() {
        let case = small_case(3);
        let a = mimic_dose(&case, &LossConfig::mae_moment(), &opt(50), MimicInit::Random { seed: 4 }).unwrap();
        let b = mimic_dose(&case, &LossConfig::mae_moment(), &opt(50), MimicInit::Random { seed: 4 }).unwrap();
        assert!(a.same_outcome(&b));
    }

    #[test]
    fn moment_only_restarts_agree_on_moments() {
        let case = small_case(5);
        let loss = LossConfig {
            w_moment: 1.0,
            moments: MomentSpec::default(),
            ..LossConfig::with_terms(&[Term::Moment])
        };
        let cfg = OptimizerConfig { lr: 0.3, ..opt(2000) };
        let runs: Vec<_> = [11u64, 12]
            .iter()
            .map(|&s| mimic_dose(&case, &loss, &cfg, MimicInit::Random { seed: s }).unwrap())
            .collect();
        for s in &case.structures {
            for &p in &[1u32, 2, 10] {
                let m_ref = moment(&case.dose, s, p).unwrap().0;
                let m: Vec<f64> = runs.iter().map(|r| moment(&r.dose, s, p).unwrap().0).collect();
                assert!((m[0] - m[1]).abs() <= 0.5, "{} p={p}: {m:?}", s.name);
                for v in m {
                    assert!((v - m_ref).abs() <= 0.5, "{} p={p}: {v} vs {m_ref}", s.name);
                }
            }
        }
    }

    #[test]
    fn divergence_monitor() {
        let mut m = DivergenceMonitor::default();
        m.observe(1.0, 0).unwrap();
        for it in 1..DIVERGENCE_PATIENCE {
            m.observe(10.5, it).unwrap();
        }
        // A dip resets the count.
        m.observe(5.0, 100).unwrap();
        for it in 0..DIVERGENCE_PATIENCE - 1 {
            m.observe(11.0, 101 + it).unwrap();
        }
        let err = m.observe(11.0, 500).unwrap_err();
        assert!(err.is_numerical());

        let mut zero = DivergenceMonitor::default();
        for it in 0..500 {
            zero.observe(if it == 0 { 0.0 } else { 1e9 }, it).unwrap();
        }
    }

    #[test]
    fn restart_study_reports_all_runs() {
        let case = small_case(7);
        let rep = restart_study(&case, &LossConfig::mae(), &opt(300), &[1, 2, 3]).unwrap();
        assert_eq!(rep.runs.len(), 3);
        assert_eq!(rep.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(rep.runs.iter().all(|r| r.trajectory.len() == 300));
        assert!(rep.loss_spread.max_pairwise >= rep.loss_spread.mean_pairwise);
        assert!(restart_study(&case, &LossConfig::mae(), &opt(3), &[1]).is_err());
    }

    #[test]
    fn spread_oracle() {
        let s = Spread::of(&[1.0, 4.0, 2.0]);
        assert!((s.mean_pairwise - 2.0).abs() < 1e-15);
        assert_eq!(s.max_pairwise, 3.0);
    }
}
