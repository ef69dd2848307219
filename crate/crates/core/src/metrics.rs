//! Evaluation metrics, per-run reports, curve emission and the summary table.
//!
//! Training losses are sums; RMSE here is `sqrt((1/n) Σ (ŷ − y)²)` in the
//! original target units.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataSet;
use crate::error::{check_len, Error, Result};
use crate::network::{Model, Network};
use crate::numeric::Matrix;
use crate::optim::PmReport;

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_len("rmse", targets.len(), preds.len())?;
    if preds.is_empty() {
        return Err(Error::DimensionMismatch {
            op: "rmse",
            expected: 1,
            got: 0,
        });
    }
    let sse: f64 = preds.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

pub const REPORT_FORMAT: &str = "countcon-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    /// Training loss at the first local minimum.
    pub first: f64,
    /// Training loss at the returned parameters.
    pub last: f64,
    /// Loss at each round's local minimum.
    pub per_round: Vec<f64>,
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    /// Row label in the summary table, e.g. `p25` or `mse`.
    pub label: String,
    pub percentile: Option<f64>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub n: usize,
    pub m: Option<usize>,
    pub delta: Option<usize>,
    pub achieved_count: usize,
    pub count_violation: Option<usize>,
    pub fraction_above: f64,
    pub constraint_satisfied: bool,
    pub rmse: f64,
    pub loss: LossSummary,
    pub distances: Vec<f64>,
    /// The single loss minimization of an unconstrained run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<PmReport>,
    pub curve: Vec<CurvePoint>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: RunReport = serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))?;
        if r.format != REPORT_FORMAT || r.version != REPORT_VERSION {
            return Err(Error::Format(format!("unsupported report {} v{}", r.format, r.version)));
        }
        Ok(r)
    }
}

/// `(x, ŷ)` on `grid_size` evenly spaced inputs spanning the observed range,
/// both in original units.
pub fn curve_points(net: &Network, ds: &DataSet, grid_size: usize) -> Result<Vec<CurvePoint>> {
    if ds.d() != 1 {
        return Err(Error::UnsupportedDimension { d: ds.d() });
    }
    if grid_size < 2 {
        return Err(Error::config("grid_size", "must be at least 2"));
    }
    let raw_x = match ds.normalization() {
        Some(norm) => norm.denormalize_inputs(ds.inputs())?.column(0),
        None => ds.inputs().column(0),
    };
    let lo = raw_x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw_x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let step = (hi - lo) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| if i == grid_size - 1 { hi } else { lo + step * i as f64 })
        .collect();
    let model_x = match ds.normalization() {
        Some(norm) => norm.normalize_inputs(&Matrix::column_vector(&grid))?,
        None => Matrix::column_vector(&grid),
    };
    let preds = ds.denormalize_predictions(&net.forward(&model_x)?);
    Ok(grid
        .into_iter()
        .zip(preds.iter())
        .map(|(x, &y_hat)| CurvePoint { x, y_hat })
        .collect())
}

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("x,y_hat\n");
    for p in points {
        // `{}` prints the shortest representation that parses back exactly
        let _ = writeln!(out, "{},{}", p.x, p.y_hat);
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("x,y_hat") {
        return Err(Error::Format("curve file must start with `x,y_hat`".to_owned()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (x, y) = l
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad curve row `{l}`")))?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("bad curve value `{s}`: {e}")));
            Ok(CurvePoint {
                x: parse(x)?,
                y_hat: parse(y)?,
            })
        })
        .collect()
}

/// Writes the curve CSV (`x,y_hat`) and returns the points.
pub fn emit_curve(net: &Network, ds: &DataSet, grid_size: usize, path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let points = curve_points(net, ds, grid_size)?;
    let path = path.as_ref();
    std::fs::write(path, curve_to_csv(&points)).map_err(|e| Error::io(path, e))?;
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    /// `None` on the per-label median rows.
    pub seed: Option<u64>,
    pub rmse: f64,
    pub count_violation: Option<f64>,
}

/// One row per run followed by one median row per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub format: String,
    pub version: u32,
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn medians(&self) -> impl Iterator<Item = &TableRow> {
        self.rows.iter().filter(|r| r.seed.is_none())
    }

    pub fn median_rmse(&self, label: &str) -> Option<f64> {
        self.medians().find(|r| r.label == label).map(|r| r.rmse)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }

    /// Markdown rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::from("| run | seed | RMSE | abs(count - m) |\n|---|---|---|---|\n");
        for r in &self.rows {
            let seed = r.seed.map_or_else(|| "median".to_owned(), |s| s.to_string());
            let viol = r.count_violation.map_or_else(|| "-".to_owned(), |v| format!("{v}"));
            let _ = writeln!(out, "| {} | {} | {:.2} | {} |", r.label, seed, r.rmse, viol);
        }
        out
    }

    /// Writes `table.json` and `table.md` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("table.json");
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let md = dir.join("table.md");
        std::fs::write(&md, self.to_text()).map_err(|e| Error::io(&md, e))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn assemble_table(reports: &[RunReport]) -> Table {
    let mut rows: Vec<TableRow> = reports
        .iter()
        .map(|r| TableRow {
            label: r.label.clone(),
            seed: Some(r.seed),
            rmse: r.rmse,
            count_violation: r.count_violation.map(|v| v as f64),
        })
        .collect();

    let mut labels: Vec<&str> = Vec::new();
    for r in reports {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    for label in labels {
        let group: Vec<&RunReport> = reports.iter().filter(|r| r.label == label).collect();
        let violations: Vec<f64> = group.iter().filter_map(|r| r.count_violation.map(|v| v as f64)).collect();
        rows.push(TableRow {
            label: label.to_owned(),
            seed: None,
            rmse: median(group.iter().map(|r| r.rmse).collect()),
            count_violation: (!violations.is_empty()).then(|| median(violations)),
        });
    }
    Table {
        format: "countcon-table".to_owned(),
        version: 1,
        rows,
    }
}
