//! Aggregation of per-case metrics reports across runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::sum::sum;
use crate::metrics::MetricsReport;

pub const METRICS_SUFFIX: &str = ".metrics.json";
pub const CI_OMITTED: &str = "n=1, CI omitted";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub name: String,
    pub reports: Vec<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub run: String,
    /// `dose_score`, `dvh_score`, or `<structure> <criterion>`.
    pub metric: String,
    pub n: usize,
    /// Mean absolute error in percent of prescription.
    pub mean_pct: f64,
    /// 1.96 * sd / sqrt(n); `None` when n = 1.
    pub ci_half_pct: Option<f64>,
    pub ci_note: Option<String>,
    /// `(a - b) / a` in percent against the first run; `None` for the first run or a = 0.
    pub rel_improvement_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveExport {
    pub run: String,
    pub case_id: String,
    pub structure: String,
    pub edges: Vec<f64>,
    #[serde(rename = "ref")]
    pub reference: Vec<f64>,
    pub pred: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: Vec<String>,
    pub rows: Vec<AggregateRow>,
    pub dvh_curves: Vec<CurveExport>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.to_string_lossy().ends_with(METRICS_SUFFIX) {
            out.push(path);
        }
    }
    Ok(())
}

/// All `*.metrics.json` under `dir`, ordered by path. The run is named after the directory.
pub fn load_run(dir: impl AsRef<Path>) -> Result<RunMetrics> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(Error::Format {
            what: dir.display().to_string(),
            reason: format!("no *{METRICS_SUFFIX} files"),
        });
    }
    let reports = files
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p, e))
        })
        .collect::<Result<Vec<MetricsReport>>>()?;
    Ok(RunMetrics {
        name: dir.display().to_string(),
        reports,
    })
}

/// Per-case values (percent of prescription) of every aggregated metric, in fixed order.
fn metric_values(r: &MetricsReport) -> Vec<(String, f64)> {
    let pct = |v: f64| 100.0 * v / r.prescription;
    let mut out = vec![
        ("dose_score".to_string(), pct(r.dose_score)),
        ("dvh_score".to_string(), pct(r.dvh_score)),
    ];
    out.extend(
        r.criteria
            .iter()
            .map(|c| (format!("{} {}", c.structure, c.criterion), pct(c.abs_error))),
    );
    out
}

/// Mean and 95% CI half-width `1.96 * sd / sqrt(n)` with the sample standard deviation.
pub fn mean_ci(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = sum(values.iter().map(|v| (v - mean).powi(2))) / (n - 1.0);
    (mean, Some(1.96 * var.sqrt() / n.sqrt()))
}

pub fn aggregate(runs: &[RunMetrics]) -> Result<Aggregate> {
    if runs.is_empty() {
        return Err(Error::config("report needs at least one run"));
    }
    let mut keys: Option<Vec<String>> = None;
    let mut per_run: Vec<BTreeMap<String, Vec<f64>>> = Vec::new();
    for run in runs {
        if run.reports.is_empty() {
            return Err(Error::config(format!("run {} has no reports", run.name)));
        }
        let mut table: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &run.reports {
            let values = metric_values(r);
            let these: Vec<String> = values.iter().map(|(k, _)| k.clone()).collect();
            match &keys {
                None => keys = Some(these),
                Some(k) if *k != these => {
                    return Err(Error::Format {
                        what: format!("run {} case {}", run.name, r.case_id),
                        reason: "inconsistent criteria sets across runs".into(),
                    })
                }
                Some(_) => {}
            }
            for (k, v) in values {
                table.entry(k).or_default().push(v);
            }
        }
        per_run.push(table);
    }
    let keys = keys.expect("at least one report");
    let mut rows = Vec::new();
    for key in &keys {
        let baseline = mean_ci(&per_run[0][key]).0;
        for (i, (run, table)) in runs.iter().zip(&per_run).enumerate() {
            let values = &table[key];
            let (mean, half) = mean_ci(values);
            let rel = (i > 0 && baseline != 0.0).then(|| 100.0 * (baseline - mean) / baseline);
            rows.push(AggregateRow {
                run: run.name.clone(),
                metric: key.clone(),
                n: values.len(),
                mean_pct: mean,
                ci_half_pct: half,
                ci_note: half.is_none().then(|| CI_OMITTED.to_string()),
                rel_improvement_pct: rel,
            });
        }
    }
    let dvh_curves = runs
        .iter()
        .flat_map(|run| {
            run.reports.iter().flat_map(move |r| {
                r.dvh_curves.iter().map(move |c| CurveExport {
                    run: run.name.clone(),
                    case_id: r.case_id.clone(),
                    structure: c.structure.clone(),
                    edges: c.edges.clone(),
                    reference: c.reference.clone(),
                    pred: c.pred.clone(),
                })
            })
        })
        .collect();
    Ok(Aggregate {
        runs: runs.iter().map(|r| r.name.clone()).collect(),
        rows,
        dvh_curves,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn aggregate_csv(agg: &Aggregate) -> String {
    let mut out = String::from("run,metric,n,mean_pct,ci_low_pct,ci_high_pct,ci_note,rel_improvement_pct\n");
    for r in &agg.rows {
        let (lo, hi) = match r.ci_half_pct {
            Some(h) => (Some(r.mean_pct - h), Some(r.mean_pct + h)),
            None => (None, None),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.run,
            r.metric,
            r.n,
            r.mean_pct,
            opt(lo),
            opt(hi),
            r.ci_note.as_deref().unwrap_or(""),
            opt(r.rel_improvement_pct)
        );
    }
    out
}
