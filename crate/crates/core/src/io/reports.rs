//! CSV and JSON report emitters. Every CSV starts with a `# gtl <kind> v<N>`
//! line naming its layout version; readers can skip it as a comment.

use serde::{Deserialize, Serialize};

use super::SCHEMA_VERSION;
use crate::experiments::{RobustnessReport, SweepReport};
use crate::network::{ArchKind, TrainLog};
use crate::{Error, Result};

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_with_header(kind: &str, header: &[String], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(format!("# gtl {kind} v{SCHEMA_VERSION}\n").into_bytes());
    let to_err = |e: csv::Error| Error::Config {
        path: format!("{kind} csv"),
        message: e.to_string(),
    };
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config {
        path: format!("{kind} csv"),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

/// Per-epoch training log: `epoch, loss, train_acc, test_acc,
/// mean_lss_s0.., weight_energy`.
pub fn train_log_csv(log: &TrainLog, n_stages: usize) -> Result<String> {
    let mut header = vec!["epoch".to_string(), "loss".into(), "train_acc".into(), "test_acc".into()];
    header.extend((0..n_stages).map(|k| format!("mean_lss_s{k}")));
    header.push("weight_energy".into());
    let rows = log
        .epochs
        .iter()
        .map(|e| {
            let mut r = vec![e.epoch.to_string(), num(e.loss), num(e.train_acc), num(e.test_acc)];
            r.extend((0..n_stages).map(|k| opt(e.mean_lss.get(k).copied().flatten())));
            r.push(num(e.weight_energy));
            r
        })
        .collect();
    csv_with_header("train-log", &header, rows)
}

/// `(gamma, value)` points of one plotted metric.
type Series = Vec<(f64, Option<f64>)>;

fn n_stages(report: &SweepReport) -> usize {
    report.rows.iter().map(|r| r.stages.len()).max().unwrap_or(0)
}

/// One row per (arch, gamma) with per-stage `lss_sK, ots_sK, w2_sK`.
pub fn sweep_csv(report: &SweepReport) -> Result<String> {
    let k = n_stages(report);
    let mut header: Vec<String> = ["arch", "gamma", "status", "final_loss", "train_acc", "test_acc", "weight_energy"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for s in 0..k {
        header.extend([format!("lss_s{s}"), format!("ots_s{s}"), format!("w2_s{s}")]);
    }
    let rows = report
        .rows
        .iter()
        .map(|r| {
            let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            let mut out = vec![
                r.arch.as_str().to_string(),
                num(r.gamma),
                status,
                opt(r.final_loss),
                opt(r.train_acc),
                opt(r.test_acc),
                opt(r.weight_energy),
            ];
            for s in 0..k {
                match r.stages.get(s) {
                    Some(m) => out.extend([opt(m.mean_lss), num(m.ots), num(m.w2)]),
                    None => out.extend([String::new(), String::new(), String::new()]),
                }
            }
            out
        })
        .collect();
    csv_with_header("sweep", &header, rows)
}

/// Two-column `(gamma, metric)` series for plotting: test accuracy, weight
/// energy, and per-stage LSS, OTS and W2, for each architecture present.
/// Returns `(file name, contents)` pairs.
pub fn plot_series(report: &SweepReport) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for arch in [ArchKind::Plain, ArchKind::Resnet] {
        let rows: Vec<_> = report.rows_for(arch).filter(|r| r.train_acc.is_some()).collect();
        if rows.is_empty() {
            continue;
        }
        let mut series: Vec<(String, Series)> = vec![
            ("test_acc".into(), rows.iter().map(|r| (r.gamma, r.test_acc)).collect()),
            ("weight_energy".into(), rows.iter().map(|r| (r.gamma, r.weight_energy)).collect()),
        ];
        for s in 0..n_stages(report) {
            let stage = |f: &dyn Fn(&crate::experiments::StageMetrics) -> Option<f64>| -> Series {
                rows.iter().map(|r| (r.gamma, r.stages.get(s).and_then(f))).collect()
            };
            series.push((format!("lss_s{s}"), stage(&|m| m.mean_lss)));
            series.push((format!("ots_s{s}"), stage(&|m| Some(m.ots))));
            series.push((format!("w2_s{s}"), stage(&|m| Some(m.w2))));
        }
        for (metric, points) in series {
            let header = vec!["gamma".to_string(), metric.clone()];
            let body = points.into_iter().filter_map(|(g, v)| v.map(|v| vec![num(g), num(v)])).collect();
            out.push((format!("plot_{}_{metric}.csv", arch.as_str()), csv_with_header("plot", &header, body)?));
        }
    }
    Ok(out)
}

/// `kind, level, accuracy, vr_<layer>..` per noise level.
pub fn robustness_csv(report: &RobustnessReport) -> Result<String> {
    let mut header = vec!["kind".to_string(), "level".into(), "accuracy".into()];
    header.extend(report.layers.iter().map(|l| format!("vr_{l}")));
    let rows = report
        .levels
        .iter()
        .zip(&report.accuracy)
        .zip(&report.vr)
        .map(|((l, a), vr)| {
            let mut r = vec![report.kind.as_str().to_string(), num(*l), num(*a)];
            r.extend(vr.iter().map(|v| num(*v)));
            r
        })
        .collect();
    csv_with_header("robustness", &header, rows)
}

/// `stage, index, k, accuracy`: test accuracy after overwriting the `k`
/// most important units of state `index` with the previous state.
pub fn ablation_csv(stage: usize, index: usize, rows: &[(usize, f64)]) -> Result<String> {
    let header: Vec<String> = ["stage", "index", "k", "accuracy"].iter().map(|s| s.to_string()).collect();
    let body = rows.iter().map(|(k, a)| vec![stage.to_string(), index.to_string(), k.to_string(), num(*a)]).collect();
    csv_with_header("ablation", &header, body)
}

/// Metrics of one stage; fields not requested are absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub width: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lss_skipped: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ots: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w2: Option<f64>,
    /// Fraction of track pairs meeting the separation bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub model_sha256: String,
    pub n_samples: usize,
    pub stages: Vec<StageReport>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// `stage, width, lss, lss_skipped, ots, w2, theorem1`; columns for metrics
/// that were not requested stay empty.
pub fn metrics_csv(report: &MetricsReport) -> Result<String> {
    let header: Vec<String> = ["stage", "width", "lss", "lss_skipped", "ots", "w2", "theorem1"].iter().map(|s| s.to_string()).collect();
    let rows = report
        .stages
        .iter()
        .map(|s| {
            vec![
                s.stage.to_string(),
                s.width.to_string(),
                opt(s.lss),
                s.lss_skipped.map(|v| v.to_string()).unwrap_or_default(),
                opt(s.ots),
                opt(s.w2),
                opt(s.theorem1),
            ]
        })
        .collect();
    csv_with_header("metrics", &header, rows)
}
