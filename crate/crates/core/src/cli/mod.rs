//! The `dosekit` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure (NaN or
//! divergence). Every command that writes an artifact also writes a [`RunManifest`];
//! `dosekit replay --manifest <file>` re-runs it with the recorded arguments.

mod manifest;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::losses::{
    dvh_loss_grad, finite_difference_gradcheck, gradcheck_instance, mae_loss_grad, moment, moment_loss_grad,
    total_loss_grad, GradcheckReport, LossConfig, Term,
};
use crate::metrics::{dose_score, dvh_score, evaluate_case, write_csv, EvalOptions, MaxDoseMode};
use crate::mimic::{
    dvh_nonconvexity_witness, midpoint_convexity_probe, midpoint_gap, mimic_dose, restart_study, ConvexityReport,
    IterationRecord, MimicInit, OptimizerConfig, RestartReport,
};
use crate::phantom::{generate_dataset, Split, SplitName};
use crate::preprocess::{prepare_case, PreprocessConfig};
use crate::tinymodel::{evaluate_holdout, load_split, read_checkpoint, train, ModelConfig, TrainConfig};
use crate::volume::mvol::{read_grid, write_grid};
use crate::volume::{read_case, write_case};

pub use manifest::{sidecar, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable supplying the default seed.
pub const SEED_ENV: &str = "DOSEKIT_SEED";

#[derive(Parser, Debug)]
#[command(name = "dosekit", version, about = "Dose objectives, DVH metrics, dose mimicking and a toy dose predictor")]
struct Cli {
    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom dataset with a train/val/test manifest.
    Phantom(PhantomArgs),
    /// Crop, resample and normalise a case directory.
    Preprocess(PreprocessArgs),
    /// Evaluate a loss configuration on a predicted dose.
    Losses(LossesArgs),
    /// Finite-difference check of every enabled loss term on a random instance.
    Gradcheck(GradcheckArgs),
    /// Optimise voxel doses against a case's reference dose.
    Mimic(MimicArgs),
    /// Convexity or multi-restart study of the loss landscape.
    Probe(ProbeArgs),
    /// Train the toy dose predictor on a phantom manifest.
    Train(TrainArgs),
    /// Predict a dose with a trained checkpoint.
    Predict(PredictArgs),
    /// Compare a predicted dose with a reference dose.
    Eval(EvalArgs),
    /// Aggregate per-case metrics of one or more runs.
    Report(ReportArgs),
    /// Re-run a command from its run manifest.
    Replay(ReplayArgs),
}

fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated integers, got `{s}`"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("bad integer `{p}`"))?;
    }
    Ok(out)
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    let [train, val, test] = parse_triple(s)?;
    Ok(Split { train, val, test })
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long, default_value_t = 36)]
    n: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 17)]
    seed: u64,
    #[arg(long, value_parser = parse_triple, default_value = "32,32,32")]
    dims: [usize; 3],
    #[arg(long)]
    out: PathBuf,
    /// train,val,test counts; defaults to the 24/5/7 proportions.
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_triple, default_value = "300,300,128")]
    crop: [usize; 3],
    #[arg(long, value_parser = parse_triple, default_value = "128,128,128")]
    net: [usize; 3],
    #[arg(long, default_value_t = 60.0)]
    rx: f64,
}

#[derive(Args, Debug)]
struct LossesArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Reference dose; defaults to the case's dose.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    case: PathBuf,
    /// LossConfig JSON; defaults to MAE + moment.
    #[arg(long)]
    loss: Option<PathBuf>,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    loss: Option<PathBuf>,
    #[arg(long, env = SEED_ENV, default_value_t = 17)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
    /// Edge length of the random cubic instance.
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MimicArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    loss: Option<PathBuf>,
    /// OptimizerConfig JSON; defaults to the mimicking preset.
    #[arg(long)]
    opt: Option<PathBuf>,
    /// zeros | uniform:<Gy> | rand:<seed>
    #[arg(long, default_value = "zeros")]
    init: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dose: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProbeKind {
    Convexity,
    Restart,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long, value_enum, default_value = "convexity")]
    kind: ProbeKind,
    /// Loss for restart studies (default MAE + moment); also supplies moment orders and DVH thresholds.
    #[arg(long)]
    loss: Option<PathBuf>,
    /// Second loss compared in restart studies (default MAE + DVH).
    #[arg(long)]
    compare_loss: Option<PathBuf>,
    #[arg(long)]
    opt: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 17)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest written by `phantom`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    loss: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    opt: Option<PathBuf>,
    #[arg(long, env = SEED_ENV, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MaxModeArg {
    Absolute,
    NearMax,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    /// Reference dose; defaults to the case's dose.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    case: PathBuf,
    /// MetricsReport JSON; name it `*.metrics.json` to feed `report`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    rx: f64,
    #[arg(long, value_enum, default_value = "absolute")]
    max_mode: MaxModeArg,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directories containing `*.metrics.json`; the first is the baseline.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

/// What a command hands back for its run manifest.
struct Outcome {
    manifest: Option<PathBuf>,
    config: serde_json::Value,
    seeds: Vec<u64>,
    timing: serde_json::Value,
}

impl Outcome {
    fn new(manifest: Option<PathBuf>, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        Outcome {
            manifest,
            config,
            seeds,
            timing: serde_json::Value::Null,
        }
    }
}

fn read_json<T: DeserializeOwned>(path: Option<&Path>, default: impl FnOnce() -> T) -> Result<T> {
    match path {
        None => Ok(default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p, e))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).map_err(|e| Error::json("<stdout>", e))?);
            Ok(())
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

/// Run the CLI on `args` (including the program name) and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    let strings = argv.iter().skip(1).map(|s| s.to_string_lossy().into_owned()).collect();
    match execute(cli.command, strings) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Phantom(_) => "phantom",
        Command::Preprocess(_) => "preprocess",
        Command::Losses(_) => "losses",
        Command::Gradcheck(_) => "gradcheck",
        Command::Mimic(_) => "mimic",
        Command::Probe(_) => "probe",
        Command::Train(_) => "train",
        Command::Predict(_) => "predict",
        Command::Eval(_) => "eval",
        Command::Report(_) => "report",
        Command::Replay(_) => "replay",
    }
}

fn execute(command: Command, argv: Vec<String>) -> Result<()> {
    let name = command_name(&command);
    let started = manifest::unix_now();
    let outcome = match command {
        Command::Phantom(a) => cmd_phantom(a)?,
        Command::Preprocess(a) => cmd_preprocess(a)?,
        Command::Losses(a) => cmd_losses(a)?,
        Command::Gradcheck(a) => cmd_gradcheck(a)?,
        Command::Mimic(a) => cmd_mimic(a)?,
        Command::Probe(a) => cmd_probe(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Predict(a) => cmd_predict(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Report(a) => cmd_report(a)?,
        Command::Replay(a) => return cmd_replay(a),
    };
    if let Some(path) = &outcome.manifest {
        RunManifest {
            command: name.into(),
            argv,
            cwd: std::env::current_dir().unwrap_or_default(),
            env_seed: std::env::var(SEED_ENV).ok(),
            config: outcome.config,
            seeds: outcome.seeds,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            platform: manifest::platform(),
            started_unix: started,
            finished_unix: manifest::unix_now(),
            timing: outcome.timing,
        }
        .write(path)?;
    }
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let m = RunManifest::read(&a.manifest)?;
    if m.command == "replay" || m.argv.first().map(String::as_str) == Some("replay") {
        return Err(Error::config("a replay manifest cannot be replayed"));
    }
    if m.tool_version != env!("CARGO_PKG_VERSION") || m.platform != manifest::platform() {
        log::warn!(
            "manifest from {} on {}; outputs may differ",
            m.tool_version,
            m.platform
        );
    }
    std::env::set_current_dir(&m.cwd).map_err(|e| Error::io(&m.cwd, e))?;
    match &m.env_seed {
        Some(v) => std::env::set_var(SEED_ENV, v),
        None => std::env::remove_var(SEED_ENV),
    }
    let full = std::iter::once("dosekit".to_string()).chain(m.argv.iter().cloned());
    let cli = Cli::try_parse_from(full).map_err(|e| Error::config(format!("recorded arguments: {e}")))?;
    execute(cli.command, m.argv)
}

fn cmd_phantom(a: PhantomArgs) -> Result<Outcome> {
    let manifest = generate_dataset(a.n, a.seed, a.dims, a.split, &a.out)?;
    Ok(Outcome::new(
        Some(a.out.join("run.json")),
        json!({"n": a.n, "dims": a.dims, "split": manifest.split}),
        vec![a.seed],
    ))
}

fn cmd_preprocess(a: PreprocessArgs) -> Result<Outcome> {
    let cfg = PreprocessConfig {
        crop_size: a.crop,
        net_dims: a.net,
        prescription: a.rx,
        ..PreprocessConfig::default()
    };
    cfg.validate()?;
    let case = prepare_case(&read_case(&a.input)?, &cfg)?;
    write_case(&a.out, &case)?;
    Ok(Outcome::new(Some(a.out.join("run.json")), to_value(&cfg), vec![]))
}

#[derive(Serialize)]
struct LossValues {
    value: f64,
    terms: std::collections::BTreeMap<Term, f64>,
}

fn cmd_losses(a: LossesArgs) -> Result<Outcome> {
    let cfg: LossConfig = read_json(a.loss.as_deref(), LossConfig::default)?;
    let case = read_case(&a.case)?;
    let pred = read_grid(&a.pred)?;
    let reference = match &a.reference {
        Some(p) => read_grid(p)?,
        None => case.dose.clone(),
    };
    let lg = total_loss_grad(&pred, &reference, &case.structures, &cfg)?;
    emit(
        a.out.as_deref(),
        &LossValues {
            value: lg.value,
            terms: lg.terms,
        },
    )?;
    Ok(Outcome::new(a.out.as_deref().map(sidecar), to_value(&cfg), vec![]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermGradcheck {
    pub term: Term,
    #[serde(flatten)]
    pub report: GradcheckReport,
}

/// Gradcheck of each enabled term of `cfg` on a random `size`^3 instance.
pub fn gradcheck_terms(cfg: &LossConfig, size: usize, seed: u64, samples: usize, h: f64) -> Result<Vec<TermGradcheck>> {
    cfg.validate()?;
    let (pred, reference, s) = gradcheck_instance([size; 3], seed)?;
    cfg.terms
        .iter()
        .map(|&term| {
            let report = match term {
                Term::Mae => finite_difference_gradcheck(|x| mae_loss_grad(x, &reference), &pred, h, samples, seed),
                Term::Dvh => {
                    finite_difference_gradcheck(|x| dvh_loss_grad(x, &reference, &s, &cfg.dvh), &pred, h, samples, seed)
                }
                Term::Moment => finite_difference_gradcheck(
                    |x| moment_loss_grad(x, &reference, &s, &cfg.moments),
                    &pred,
                    h,
                    samples,
                    seed,
                ),
            }?;
            Ok(TermGradcheck { term, report })
        })
        .collect()
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<Outcome> {
    let cfg: LossConfig = read_json(a.loss.as_deref(), || LossConfig::with_terms(&[Term::Mae, Term::Dvh, Term::Moment]))?;
    let reports = gradcheck_terms(&cfg, a.size, a.seed, a.samples, a.h)?;
    emit(a.out.as_deref(), &reports)?;
    Ok(Outcome::new(
        a.out.as_deref().map(sidecar),
        json!({"loss": cfg, "samples": a.samples, "h": a.h, "size": a.size}),
        vec![a.seed],
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MimicReport {
    pub case_id: String,
    pub init: MimicInit,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub final_loss: f64,
    pub dose_score: f64,
    pub dvh_score: f64,
    pub trajectory: Vec<IterationRecord>,
}

fn cmd_mimic(a: MimicArgs) -> Result<Outcome> {
    let loss: LossConfig = read_json(a.loss.as_deref(), LossConfig::default)?;
    let opt: OptimizerConfig = read_json(a.opt.as_deref(), OptimizerConfig::mimic)?;
    let init: MimicInit = a.init.parse()?;
    let case = read_case(&a.case)?;
    let r = mimic_dose(&case, &loss, &opt, init)?;
    let report = MimicReport {
        case_id: case.case_id.clone(),
        init,
        loss: loss.clone(),
        optimizer: opt.clone(),
        final_loss: r.final_loss(),
        dose_score: dose_score(&r.dose, &case.dose)?,
        dvh_score: dvh_score(&r.dose, &case.dose, &case.structures)?.0,
        trajectory: r.trajectory.clone(),
    };
    write_json(&a.out, &report)?;
    if let Some(p) = &a.dose {
        write_grid(p, &r.dose)?;
    }
    let mut seeds = vec![];
    if let MimicInit::Random { seed } = init {
        seeds.push(seed);
    }
    let mut out = Outcome::new(Some(sidecar(&a.out)), json!({"loss": loss, "optimizer": opt, "init": init}), seeds);
    out.timing = to_value(&r.timing);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentProbe {
    pub structure: String,
    pub p: u32,
    pub report: ConvexityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityStudy {
    pub case_id: String,
    pub seed: u64,
    pub moments: Vec<MomentProbe>,
    pub mae: ConvexityReport,
    pub dvh: ConvexityReport,
    /// Midpoint gap of the sigmoid-DVH loss on the threshold-saturation construction.
    pub dvh_witness_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartComparison {
    pub primary: RestartReport,
    pub comparison: RestartReport,
}

fn cmd_probe(a: ProbeArgs) -> Result<Outcome> {
    let case = read_case(&a.case)?;
    let loss: LossConfig = read_json(a.loss.as_deref(), LossConfig::default)?;
    let g = case.geometry();
    let dose_max = case.dose.max().max(1.0) * 1.2;
    match a.kind {
        ProbeKind::Convexity => {
            let mut moments = Vec::new();
            for s in &case.structures {
                for &p in loss.moments.orders_for(&s.name) {
                    let report = midpoint_convexity_probe(|d| Ok(moment(d, s, p)?.0), &g, a.pairs, a.seed, dose_max)?;
                    moments.push(MomentProbe {
                        structure: s.name.clone(),
                        p,
                        report,
                    });
                }
            }
            let mae = midpoint_convexity_probe(|d| Ok(mae_loss_grad(d, &case.dose)?.value), &g, a.pairs, a.seed, dose_max)?;
            let dvh_fn = |d: &crate::volume::Grid3| Ok(dvh_loss_grad(d, &case.dose, &case.structures, &loss.dvh)?.value);
            let dvh = midpoint_convexity_probe(dvh_fn, &g, a.pairs, a.seed, dose_max)?;
            let (zero, x, y) = dvh_nonconvexity_witness(&g);
            let witness = |d: &crate::volume::Grid3| Ok(dvh_loss_grad(d, &zero, &case.structures, &loss.dvh)?.value);
            let study = ConvexityStudy {
                case_id: case.case_id.clone(),
                seed: a.seed,
                moments,
                mae,
                dvh,
                dvh_witness_gap: midpoint_gap(&witness, &x, &y)?,
            };
            write_json(&a.out, &study)?;
            Ok(Outcome::new(
                Some(sidecar(&a.out)),
                json!({"kind": "convexity", "pairs": a.pairs, "loss": loss}),
                vec![a.seed],
            ))
        }
        ProbeKind::Restart => {
            let compare: LossConfig = read_json(a.compare_loss.as_deref(), LossConfig::mae_dvh)?;
            let opt: OptimizerConfig = read_json(a.opt.as_deref(), OptimizerConfig::mimic)?;
            let seeds: Vec<u64> = (0..a.restarts as u64).map(|i| a.seed + i).collect();
            let study = RestartComparison {
                primary: restart_study(&case, &loss, &opt, &seeds)?,
                comparison: restart_study(&case, &compare, &opt, &seeds)?,
            };
            write_json(&a.out, &study)?;
            Ok(Outcome::new(
                Some(sidecar(&a.out)),
                json!({"kind": "restart", "loss": loss, "compare_loss": compare, "optimizer": opt}),
                seeds,
            ))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub test_cases: usize,
    pub mean_dose_score: Option<f64>,
    pub mean_dvh_score: Option<f64>,
}

fn cmd_train(a: TrainArgs) -> Result<Outcome> {
    let cfg = TrainConfig {
        loss: read_json(a.loss.as_deref(), LossConfig::default)?,
        optimizer: read_json(a.opt.as_deref(), OptimizerConfig::default)?,
        epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let model: ModelConfig = read_json(a.model.as_deref(), ModelConfig::default)?;
    let train_cases = load_split(&a.data, SplitName::Train)?;
    let val_cases = load_split(&a.data, SplitName::Val)?;
    let test_cases = load_split(&a.data, SplitName::Test)?;
    let outcome = train(&model, &train_cases, &val_cases, &cfg, Some(&a.out))?;
    write_json(&a.out.join("train_config.json"), &cfg)?;
    write_json(&a.out.join("model.json"), &model)?;
    let mut summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        test_cases: test_cases.len(),
        mean_dose_score: None,
        mean_dvh_score: None,
    };
    if !test_cases.is_empty() {
        let holdout = evaluate_holdout(&outcome.best_model, &test_cases, &EvalOptions::default())?;
        for r in &holdout.reports {
            write_json(&a.out.join("metrics").join(format!("{}.metrics.json", r.case_id)), r)?;
        }
        write_csv(&holdout.reports, a.out.join("metrics.csv"))?;
        summary.mean_dose_score = Some(holdout.mean_dose_score);
        summary.mean_dvh_score = Some(holdout.mean_dvh_score);
    }
    write_json(&a.out.join("summary.json"), &summary)?;
    let mut out = Outcome::new(
        Some(a.out.join("run.json")),
        json!({"train": cfg, "model": model, "data": a.data}),
        vec![a.seed],
    );
    out.timing = json!({"total_secs": outcome.total_secs});
    Ok(out)
}

fn cmd_predict(a: PredictArgs) -> Result<Outcome> {
    let (net, header) = read_checkpoint(&a.ckpt)?;
    let case = read_case(&a.case)?;
    write_grid(&a.out, &net.predict_dose(&case)?)?;
    Ok(Outcome::new(
        Some(sidecar(&a.out)),
        json!({"checkpoint": a.ckpt, "model": header.model, "epoch": header.epoch}),
        vec![],
    ))
}

fn cmd_eval(a: EvalArgs) -> Result<Outcome> {
    let mut case = read_case(&a.case)?;
    if let Some(p) = &a.reference {
        case.dose = read_grid(p)?;
    }
    let pred = read_grid(&a.pred)?;
    let opts = EvalOptions {
        prescription: a.rx,
        max_mode: match a.max_mode {
            MaxModeArg::Absolute => MaxDoseMode::Absolute,
            MaxModeArg::NearMax => MaxDoseMode::NearMax,
        },
        ..EvalOptions::default()
    };
    let report = evaluate_case(&pred, &case, &opts)?;
    write_json(&a.out, &report)?;
    if let Some(csv) = &a.csv {
        write_csv(std::slice::from_ref(&report), csv)?;
    }
    Ok(Outcome::new(Some(sidecar(&a.out)), to_value(&opts), vec![]))
}

fn cmd_report(a: ReportArgs) -> Result<Outcome> {
    let runs = a.runs.iter().map(report::load_run).collect::<Result<Vec<_>>>()?;
    let agg = report::aggregate(&runs)?;
    write_json(&a.out, &agg)?;
    if let Some(csv) = &a.csv {
        fs::write(csv, report::aggregate_csv(&agg)).map_err(|e| Error::io(csv, e))?;
    }
    Ok(Outcome::new(Some(sidecar(&a.out)), json!({"runs": a.runs}), vec![]))
}

/// Wall-clock helper for examples and benchmarks.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triples_and_splits() {
        assert_eq!(parse_triple("32, 32,16").unwrap(), [32, 32, 16]);
        assert!(parse_triple("1,2").is_err());
        assert!(parse_triple("a,b,c").is_err());
        assert_eq!(parse_split("24,5,7").unwrap(), Split { train: 24, val: 5, test: 7 });
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["dosekit", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["dosekit", "eval", "--pred", "a.mvol"]), EXIT_USAGE);
        assert_eq!(run(["dosekit", "--help"]), EXIT_OK);
    }

    #[test]
    fn data_errors_exit_2() {
        assert_eq!(
            run(["dosekit", "eval", "--pred", "/nonexistent/a.mvol", "--case", "/nonexistent", "--out", "/tmp/x.json"]),
            EXIT_DATA
        );
    }

    #[test]
    fn numerical_errors_exit_3() {
        assert_eq!(exit_code(&Error::Numerical("nan".into())), EXIT_NUMERICAL);
    }

    #[test]
    fn gradcheck_terms_pass() {
        let cfg = LossConfig::with_terms(&[Term::Mae, Term::Dvh, Term::Moment]);
        let reps = gradcheck_terms(&cfg, 8, 1, 30, 1e-4).unwrap();
        assert_eq!(reps.len(), 3);
        for r in reps {
            assert!(r.report.max_rel_err < 1e-4, "{r:?}");
        }
    }
}
