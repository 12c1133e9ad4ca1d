//! `report`: curve plots from `metrics.json` and loss/metric-versus-epoch
//! plots from training history CSVs.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use shadekit::datakit::write_atomic;
use shadekit::evalkit::CurveSet;

use crate::config::{read_json, resolve, DEFAULT_SEED};
use crate::data::require;
use crate::error::{runtime, usage, Result};
use crate::plot::{write_curve_plots, Chart, Series};
use crate::Globals;

#[derive(Args)]
pub struct ReportArgs {
    /// `metrics.json` written by `eval` (or a bare metrics report).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Training history CSV; may be repeated.
    #[arg(long)]
    history: Vec<PathBuf>,
    /// Output directory for the SVG files.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub metrics: Option<PathBuf>,
    pub history: Vec<PathBuf>,
    pub svg: Option<PathBuf>,
    pub seed: u64,
}

/// Columns of a history CSV: header names and one row of numbers per epoch.
#[derive(Debug, PartialEq)]
pub struct HistoryTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn parse_history(text: &str) -> std::result::Result<HistoryTable, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let columns: Vec<String> = lines
        .next()
        .ok_or("empty history file")?
        .split(',')
        .map(|c| c.trim().to_string())
        .collect();
    if columns.len() < 3 || columns[0] != "epoch" || columns[1] != "train_loss" {
        return Err("history header must start with epoch,train_loss,<metric>".into());
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", n + 2))?;
        if row.len() != columns.len() {
            return Err(format!("line {}: expected {} columns", n + 2, columns.len()));
        }
        rows.push(row);
    }
    Ok(HistoryTable { columns, rows })
}

fn curves_from(value: Value) -> std::result::Result<CurveSet, String> {
    let curves = value
        .get("report")
        .and_then(|r| r.get("curves"))
        .or_else(|| value.get("curves"))
        .cloned()
        .ok_or("no curves found")?;
    let c: CurveSet = serde_json::from_value(curves).map_err(|e| e.to_string())?;
    let n = c.thresholds.len();
    if n == 0 || [c.precision.len(), c.recall.len(), c.f1.len()].iter().any(|&l| l != n) {
        return Err("curves must be non-empty and aligned".into());
    }
    Ok(c)
}

fn history_stem(path: &std::path::Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name
        .strip_suffix(".history.csv")
        .or_else(|| name.strip_suffix(".csv"))
        .unwrap_or(&name);
    stem.to_string()
}

fn history_charts(t: &HistoryTable, stem: &str) -> Vec<(String, Chart)> {
    let series = |col: usize| Series {
        name: t.columns[col].clone(),
        points: t.rows.iter().map(|r| (r[0], r[col])).collect(),
    };
    let chart = |title: String, y: &str, s: Vec<Series>| Chart {
        title,
        x_label: "epoch".into(),
        y_label: y.into(),
        x_range: None,
        y_range: None,
        series: s,
    };
    let loss_cols: Vec<usize> = (1..t.columns.len())
        .filter(|&c| c == 1 || t.columns[c].ends_with("_loss"))
        .collect();
    vec![
        (
            format!("{stem}.loss.svg"),
            chart(format!("{stem}: loss"), "loss", loss_cols.into_iter().map(series).collect()),
        ),
        (
            format!("{stem}.{}.svg", t.columns[2]),
            chart(format!("{stem}: {}", t.columns[2]), &t.columns[2], vec![series(2)]),
        ),
    ]
}

pub fn report(g: &Globals, a: ReportArgs) -> Result<()> {
    let defaults = ReportConfig {
        metrics: None,
        history: vec![],
        svg: None,
        seed: DEFAULT_SEED,
    };
    let mut cfg = resolve(defaults, g.config.as_deref(), "report")?;
    cfg.metrics = a.metrics.or(cfg.metrics);
    if !a.history.is_empty() {
        cfg.history = a.history;
    }
    cfg.svg = a.svg.or(cfg.svg);
    cfg.seed = g.seed.unwrap_or(cfg.seed);
    let out = require(cfg.svg.clone(), "svg")?;
    if cfg.metrics.is_none() && cfg.history.is_empty() {
        return Err(usage("nothing to render: give --metrics and/or --history"));
    }

    let curves = match &cfg.metrics {
        Some(p) => Some(curves_from(read_json(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut histories = Vec::new();
    for p in &cfg.history {
        let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
        let table = parse_history(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        histories.push((history_stem(p), table));
    }

    std::fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let mut written = 0;
    if let Some(c) = &curves {
        write_curve_plots(c, &out)?;
        written += 4;
    }
    for (stem, table) in &histories {
        for (name, chart) in history_charts(table, stem) {
            write_atomic(&out.join(name), chart.to_svg().as_bytes())?;
            written += 1;
        }
    }
    g.info(format!("wrote {written} plots to {}", out.display()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_parses_and_rejects_ragged_rows() {
        let t = parse_history("epoch,train_loss,val_map50\n1,0.5,0.1\n2,0.4,0.2\n").unwrap();
        assert_eq!(t.columns[2], "val_map50");
        assert_eq!(t.rows, vec![vec![1.0, 0.5, 0.1], vec![2.0, 0.4, 0.2]]);
        assert!(parse_history("epoch,train_loss,m\n1,0.5\n").is_err());
        assert!(parse_history("a,b,c\n").is_err());
        let empty = parse_history("epoch,train_loss,m\n").unwrap();
        assert!(empty.rows.is_empty());
    }
}
