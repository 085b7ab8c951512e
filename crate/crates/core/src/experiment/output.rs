//! Result files.
//!
//! `results.csv` has the columns
//!
//! ```text
//! cell,d,n,method,role,quantity,value,ci_lower,ci_upper,seed,config_hash
//! ```
//!
//! with one row per method × quantity × cell. `role` is `gt`, `estimate` or
//! `diff` (estimate − GT). Floats are written in shortest round-trip form and
//! empty CI cells mean "no interval". Wall-clock times go to `timings.csv`
//! and the JSON files only, so `results.csv` is identical across reruns.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::experiment::config::RunConfig;
use crate::experiment::harness::{log_log_slope, CellOutput, Quantity, ResultRow, Role, TableRun};

pub const RESULTS_HEADER: [&str; 11] = [
    "cell",
    "d",
    "n",
    "method",
    "role",
    "quantity",
    "value",
    "ci_lower",
    "ci_upper",
    "seed",
    "config_hash",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.cell.clone(),
            r.d.to_string(),
            r.n.to_string(),
            r.method.clone(),
            r.role.as_str().to_string(),
            r.quantity.as_str().to_string(),
            r.value.to_string(),
            opt(r.ci_lower),
            opt(r.ci_upper),
            r.seed.to_string(),
            r.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let parse_err = |k: usize, msg: String| Error::Parse {
            row: line,
            column: RESULTS_HEADER[k].to_string(),
            message: msg,
        };
        let num = |k: usize| -> Result<f64> { field(k).parse::<f64>().map_err(|e| parse_err(k, e.to_string())) };
        let int = |k: usize| -> Result<u64> { field(k).parse::<u64>().map_err(|e| parse_err(k, e.to_string())) };
        let opt_num = |k: usize| -> Result<Option<f64>> {
            if field(k).is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        rows.push(ResultRow {
            cell: field(0).to_string(),
            d: int(1)? as usize,
            n: int(2)? as usize,
            method: field(3).to_string(),
            role: field(4).parse().map_err(|e: Error| parse_err(4, e.to_string()))?,
            quantity: field(5).parse().map_err(|e: Error| parse_err(5, e.to_string()))?,
            value: num(6)?,
            ci_lower: opt_num(7)?,
            ci_upper: opt_num(8)?,
            seed: int(9)?,
            config_hash: field(10).to_string(),
            wall_seconds: None,
        });
    }
    Ok(rows)
}

pub fn write_timings_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "method", "wall_seconds"])?;
    let mut seen = std::collections::HashSet::new();
    for r in rows {
        if let Some(s) = r.wall_seconds {
            if seen.insert((r.cell.clone(), r.method.clone())) {
                w.write_record([r.cell.clone(), r.method.clone(), s.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// JSON document for a single-cell run (`estimate` or `ground-truth`).
pub fn cell_json(cfg: &RunConfig, out: &CellOutput) -> serde_json::Value {
    let gt = out.ground_truth.as_ref().map(|(g, secs)| {
        json!({
            "tau2": g.tau2,
            "sigma2_over_n": g.sigma2_over_n,
            "var_single": g.var_single,
            "var_ensemble": g.var_ensemble,
            "j": g.j,
            "m_prime": g.m_prime,
            "single_source": g.single_source,
            "negative_component": g.negative_component,
            "bias_b0": "not estimated",
            "wall_seconds": secs,
        })
    });
    json!({
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "config": cfg,
        "cell": out.label,
        "d": out.cell.d,
        "n": out.cell.n,
        "data": out.provenance,
        "estimates": out.estimates.iter().map(|(e, secs)| json!({
            "method": e.method,
            "value": e.value,
            "ci": e.ci,
            "meta": e.meta,
            "wall_seconds": secs,
        })).collect::<Vec<_>>(),
        "ground_truth": gt,
        "rows": out.rows,
    })
}

/// Paths written by a run.
#[derive(Debug, Clone, Default)]
pub struct WrittenFiles {
    pub files: Vec<PathBuf>,
}

/// Writes `results.csv`, `results.json` and `timings.csv` for one cell.
pub fn write_cell(cfg: &RunConfig, out: &CellOutput, dir: &Path) -> Result<WrittenFiles> {
    std::fs::create_dir_all(dir)?;
    let files = vec![dir.join("results.csv"), dir.join("results.json"), dir.join("timings.csv")];
    write_results_csv(&out.rows, &files[0])?;
    write_json(&cell_json(cfg, out), &files[1])?;
    write_timings_csv(&out.rows, &files[2])?;
    Ok(WrittenFiles { files })
}

/// Ensemble sizes at which the EV curve is evaluated.
pub const EV_CURVE_SIZES: [usize; 6] = [2, 5, 10, 20, 50, 100];

/// EV of the first `m` members for each `m` in [`EV_CURVE_SIZES`] that the
/// run has enough members for.
pub fn ev_curve(predictions: &[f64]) -> Vec<(usize, f64)> {
    EV_CURVE_SIZES
        .iter()
        .filter(|&&m| m <= predictions.len())
        .map(|&m| {
            let p = &predictions[..m];
            let mean = p.iter().sum::<f64>() / m as f64;
            (m, p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0))
        })
        .collect()
}

fn find(rows: &[ResultRow], cell: &str, method: &str, role: Role, q: Quantity) -> Option<f64> {
    rows.iter()
        .find(|r| r.cell == cell && r.method == method && r.role == role && r.quantity == q)
        .map(|r| r.value)
}

fn sci(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2e}")).unwrap_or_else(|| "-".into())
}

/// Wide text view: one line per cell with GT, estimate and Diff for each
/// estimator.
pub fn render_table(run: &TableRun) -> String {
    let rows = run.rows();
    let cols = [
        ("tau2", "EV", Quantity::Tau2, Quantity::Tau2),
        ("s2/n", "IF", Quantity::Sigma2OverN, Quantity::Sigma2OverN),
        ("ens", "BA", Quantity::VarEnsemble, Quantity::EnsembleTotal),
    ];
    let mut head = format!("{:>4} {:>6}", "d", "n");
    for (name, m, _, _) in cols {
        head += &format!(
            " | {:>10} {:>10} {:>10}",
            format!("{name} GT"),
            format!("{name} {m}"),
            "Diff"
        );
    }
    let mut out = head.clone() + "\n" + &"-".repeat(head.len()) + "\n";
    for c in &run.cells {
        let label = c.cell.label();
        let mut line = format!("{:>4} {:>6}", c.cell.d, c.cell.n);
        match &c.result {
            Ok(_) => {
                for (_, m, gq, eq) in cols {
                    line += &format!(
                        " | {:>10} {:>10} {:>10}",
                        sci(find(&rows, &label, "GT", Role::Gt, gq)),
                        sci(find(&rows, &label, m, Role::Estimate, eq)),
                        sci(find(&rows, &label, m, Role::Diff, eq)),
                    );
                }
            }
            Err(e) => line += &format!(" | failed: {e}"),
        }
        out += &line;
        out.push('\n');
    }
    out
}

/// Summary document of a table run, including per-dimension log-log slopes
/// of the data-variance columns against `n`.
pub fn table_summary(cfg: &RunConfig, run: &TableRun) -> serde_json::Value {
    let rows = run.rows();
    let mut dims: Vec<usize> = run.cells.iter().map(|c| c.cell.d).collect();
    dims.dedup();
    let scaling: Vec<_> = dims
        .iter()
        .map(|&d| {
            let series = |method: &str, role: Role, q: Quantity| -> Vec<(f64, f64)> {
                run.cells
                    .iter()
                    .filter(|c| c.cell.d == d)
                    .filter_map(|c| find(&rows, &c.cell.label(), method, role, q).map(|v| (c.cell.n as f64, v)))
                    .collect()
            };
            let tau2: Vec<f64> = series("GT", Role::Gt, Quantity::Tau2).iter().map(|p| p.1).collect();
            let tau2_ratio = if tau2.len() >= 2 && tau2.iter().all(|&v| v > 0.0) {
                let max = tau2.iter().cloned().fold(f64::MIN, f64::max);
                let min = tau2.iter().cloned().fold(f64::MAX, f64::min);
                Some(max / min)
            } else {
                None
            };
            json!({
                "d": d,
                "slope_if_sigma2_over_n": log_log_slope(&series("IF", Role::Estimate, Quantity::Sigma2OverN)),
                "slope_gt_sigma2_over_n": log_log_slope(&series("GT", Role::Gt, Quantity::Sigma2OverN)),
                "gt_tau2_max_over_min": tau2_ratio,
            })
        })
        .collect();
    let cells: Vec<_> = run
        .cells
        .iter()
        .map(|c| match &c.result {
            Ok(out) => json!({
                "cell": out.label,
                "d": c.cell.d,
                "n": c.cell.n,
                "status": "ok",
                "negative_component": out.ground_truth.as_ref().map(|g| g.0.negative_component),
                "timings": out.estimates.iter().map(|(e, s)| (e.method.to_string(), *s))
                    .chain(out.ground_truth.as_ref().map(|g| ("GT".to_string(), g.1)))
                    .collect::<std::collections::BTreeMap<_, _>>(),
            }),
            Err(e) => json!({
                "cell": c.cell.label(),
                "d": c.cell.d,
                "n": c.cell.n,
                "status": "failed",
                "error": e,
            }),
        })
        .collect();
    json!({
        "config_hash": run.config_hash,
        "seed": cfg.seed,
        "config": cfg,
        "diff_sign": "estimate - GT",
        "cells": cells,
        "scaling": scaling,
        "failures": run.failures(),
    })
}

/// Writes `results.csv`, `summary.json`, `table.txt`, `ev_curve.csv` and
/// `timings.csv`.
pub fn write_table(cfg: &RunConfig, run: &TableRun, dir: &Path) -> Result<WrittenFiles> {
    std::fs::create_dir_all(dir)?;
    let rows = run.rows();
    let files = vec![
        dir.join("results.csv"),
        dir.join("summary.json"),
        dir.join("table.txt"),
        dir.join("ev_curve.csv"),
        dir.join("timings.csv"),
    ];
    write_results_csv(&rows, &files[0])?;
    write_json(&table_summary(cfg, run), &files[1])?;
    std::fs::write(&files[2], render_table(run))?;
    let mut w = csv::Writer::from_path(&files[3])?;
    w.write_record(["cell", "d", "n", "m", "ev"])?;
    for c in &run.cells {
        if let Ok(out) = &c.result {
            if let Some(preds) = &out.ev_predictions {
                for (m, v) in ev_curve(preds) {
                    w.write_record([
                        out.label.clone(),
                        c.cell.d.to_string(),
                        c.cell.n.to_string(),
                        m.to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    write_timings_csv(&rows, &files[4])?;
    Ok(WrittenFiles { files })
}

/// Rows as pretty JSON, for `--format json` on stdout.
pub fn rows_json(rows: &[ResultRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

/// Rows as CSV text, for `--format csv` on stdout.
pub fn rows_csv(rows: &[ResultRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.cell.clone(),
            r.d.to_string(),
            r.n.to_string(),
            r.method.clone(),
            r.role.as_str().to_string(),
            r.quantity.as_str().to_string(),
            r.value.to_string(),
            opt(r.ci_lower),
            opt(r.ci_upper),
            r.seed.to_string(),
            r.config_hash.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
