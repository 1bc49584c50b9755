//! Rendering of run reports as text tables, CSV, JSON and plot series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{MetricKind, RunReport, SweepSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Csv,
    Json,
    PlotData,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [
        ReportFormat::TableText,
        ReportFormat::Csv,
        ReportFormat::Json,
        ReportFormat::PlotData,
    ];
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table-text" | "table" | "text" => Ok(ReportFormat::TableText),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "plot-data" | "plot" => Ok(ReportFormat::PlotData),
            other => Err(Error::Config(format!(
                "unknown report format '{other}' (table-text, csv, json, plot-data)"
            ))),
        }
    }
}

/// Flat view of a [`RunReport`]; vectors are joined with `;`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub dataset: String,
    pub zero_ratio: String,
    pub seed: u64,
    pub metric: String,
    pub train_metric: f64,
    pub test_metric: f64,
    pub active_neurons: String,
    pub sparsity: f64,
    pub wall_time_secs: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub reg_term: f64,
    pub objective: f64,
    pub sparsity_per_layer: String,
    pub regularized_params: usize,
    pub steps: usize,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

/// Inverse of the `;` joining used in CSV cells.
pub fn split_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|p| {
            p.parse()
                .map_err(|_| Error::Data(format!("bad list entry '{p}' in '{s}'")))
        })
        .collect()
}

impl From<&RunReport> for ReportRow {
    fn from(r: &RunReport) -> Self {
        Self {
            label: r.label.clone(),
            dataset: r.dataset.clone(),
            zero_ratio: r.zero_ratio.to_string(),
            seed: r.seed,
            metric: metric_name(r.metric).to_string(),
            train_metric: r.train_metric,
            test_metric: r.test_metric,
            active_neurons: join(&r.active_neurons),
            sparsity: r.sparsity.overall,
            wall_time_secs: r.wall_time_secs,
            train_loss: r.train_loss,
            test_loss: r.test_loss,
            reg_term: r.reg_term,
            objective: r.objective,
            sparsity_per_layer: join(&r.sparsity.per_layer),
            regularized_params: r.regularized_params,
            steps: r.steps,
        }
    }
}

fn metric_name(m: MetricKind) -> &'static str {
    match m {
        MetricKind::Mse => "mse",
        MetricKind::Accuracy => "accuracy",
    }
}

pub fn rows(reports: &[RunReport]) -> Vec<ReportRow> {
    reports.iter().map(ReportRow::from).collect()
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Serde(e.to_string())))
        .collect()
}

pub fn rows_to_json(rows: &[ReportRow]) -> Result<String> {
    serde_json::to_string_pretty(rows).map_err(|e| Error::Serde(e.to_string()))
}

pub fn rows_from_json(text: &str) -> Result<Vec<ReportRow>> {
    serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
}

fn fmt_metric(m: MetricKind, v: f64) -> String {
    match m {
        MetricKind::Mse => format!("{v:.3e}"),
        MetricKind::Accuracy => format!("{v:.4}"),
    }
}

/// Columns: method, training metric, test metric, neurons, sparsity, time.
pub fn table_text(reports: &[RunReport]) -> String {
    let header = ["Method", "Dataset", "Seed", "Training", "Test", "Neurons", "Sparsity", "Time (s)"];
    let body: Vec<[String; 8]> = reports
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                r.dataset.clone(),
                r.seed.to_string(),
                fmt_metric(r.metric, r.train_metric),
                fmt_metric(r.metric, r.test_metric),
                r.active_neurons
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("/"),
                format!("{:.4}", r.sparsity.overall),
                format!("{:.3}", r.wall_time_secs),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| body.iter().map(|row| row[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    line(widths.iter().map(|&w| &"--------------------------------"[..w.min(32)]).collect(), &mut out);
    for row in &body {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// Accuracy (or loss) against zero ratio: one line per report, with the
/// repeat index counted within each (dataset, ratio) arm.
pub fn ratio_series(reports: &[RunReport]) -> String {
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut out = String::from("dataset,ratio,ratio_value,repeat,seed,train_metric,test_metric\n");
    for r in reports {
        let key = (r.dataset.clone(), r.zero_ratio.to_string());
        let rep = seen.entry(key).or_insert(0);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.dataset,
            r.zero_ratio,
            r.zero_ratio.as_f64(),
            rep,
            r.seed,
            r.train_metric,
            r.test_metric
        );
        *rep += 1;
    }
    out
}

pub fn fit_series(report: &RunReport) -> Option<String> {
    let fit = report.fit.as_ref()?;
    let mut out = String::from("x,y_true,y_pred\n");
    for p in fit {
        let _ = writeln!(out, "{},{},{}", p.x, p.y_true, p.y_pred);
    }
    Some(out)
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn file_stem(r: &RunReport) -> String {
    let label: String = r
        .label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{}_{}_seed{}", r.dataset, label, r.seed)
}

/// Writes `reports` in `format` under `out_dir`; returns the files written.
pub fn emit_report(reports: &[RunReport], format: ReportFormat, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to emit".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let files = match format {
        ReportFormat::TableText => vec![write(out_dir.join("report.txt"), &table_text(reports))?],
        ReportFormat::Csv => vec![write(out_dir.join("report.csv"), &rows_to_csv(&rows(reports))?)?],
        ReportFormat::Json => {
            let full = serde_json::to_string_pretty(reports).map_err(|e| Error::Serde(e.to_string()))?;
            vec![
                write(out_dir.join("report.json"), &rows_to_json(&rows(reports))?)?,
                write(out_dir.join("runs.json"), &full)?,
            ]
        }
        ReportFormat::PlotData => {
            let mut files = vec![write(out_dir.join("ratio_series.csv"), &ratio_series(reports))?];
            for r in reports {
                if let Some(text) = fit_series(r) {
                    files.push(write(out_dir.join(format!("fit_{}.csv", file_stem(r))), &text)?);
                }
            }
            files
        }
    };
    Ok(files)
}

pub fn emit_summary(summary: &[SweepSummary], out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in summary {
        w.serialize(s).map_err(|e| Error::Serde(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))?;
    write(out_dir.join("summary.csv"), &text)
}

/// Reads back `runs.json` written by [`emit_report`] in JSON format.
pub fn load_runs(path: &Path) -> Result<Vec<RunReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
